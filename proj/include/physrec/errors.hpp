#ifndef PHYSREC_ERRORS_HPP
#define PHYSREC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace physrec {

/// Violated precondition: wrong dimensions, out-of-range arguments, non-finite inputs.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A system-spec, config, or data file does not match its schema.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown built-in system, preset, or channel name.
class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finite-difference or linear-algebra routine produced non-finite or singular results.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An integration blew up (non-finite state or magnitude above the divergence bound).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(double t, const std::string& what)
      : std::runtime_error(what + " (t=" + std::to_string(t) + ")"), t_(t) {}
  double time() const noexcept { return t_; }

 private:
  double t_;
};

/// Training could not make progress (e.g. every batch element diverged in an epoch).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace physrec

#endif  // PHYSREC_ERRORS_HPP
