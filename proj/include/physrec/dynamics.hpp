#ifndef PHYSREC_DYNAMICS_HPP
#define PHYSREC_DYNAMICS_HPP

// Control-affine systems  x' = f(x, theta) + g(x, theta) u  described as term
// libraries over a coefficient vector.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "physrec/errors.hpp"

namespace physrec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Sign { free, nonneg, nonpos };
enum class FactorFn { pow, sin, cos };

/// fn(x[var])^power
struct Factor {
  int var = 0;
  int power = 1;
  FactorFn fn = FactorFn::pow;

  bool operator==(const Factor&) const = default;
};

/// gain * prod(theta[coeffs]) * prod(factors). For g-terms the product also
/// multiplies input channel `input`.
struct Term {
  int state = 0;
  int input = -1;
  std::vector<int> coeffs;
  double gain = 1.0;
  std::vector<Factor> factors;

  bool operator==(const Term&) const = default;
};

struct Coefficient {
  std::string name;
  Sign sign = Sign::free;
  /// Order-of-magnitude prior used to scale the neural coefficient head.
  double scale = 1.0;
  /// Coefficients with fit=false are held at their supplied value during recovery.
  bool fit = true;

  bool operator==(const Coefficient&) const = default;
};

/// Resting value of a state: either a constant or a coefficient reference.
using RestValue = std::variant<double, int>;

struct SystemSpec {
  std::string name;
  int n = 0;
  int m = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  std::vector<Coefficient> coeffs;
  std::vector<Term> f_terms;
  std::vector<Term> g_terms;
  std::vector<RestValue> rest;
  /// Input channels that carry sparse external events (U_ex); these are shiftable.
  std::vector<int> external_inputs;
  std::optional<double> rho;

  int p() const { return static_cast<int>(coeffs.size()); }
  int coeff_index(const std::string& name) const;
  std::vector<std::string> coeff_names() const;
  std::vector<Sign> coeff_signs() const;
  std::vector<int> fitted_indices() const;

  bool operator==(const SystemSpec&) const = default;
};

/// Checks every structural invariant; throws ContractViolation with a description.
void validate(const SystemSpec& spec);

/// Sign constraints and finiteness. Throws ContractViolation.
void validate_theta(const SystemSpec& spec, const Vector& theta);

class SensingMask {
 public:
  explicit SensingMask(Eigen::VectorXi diag);
  static SensingMask all(int n);

  const Eigen::VectorXi& diag() const { return diag_; }
  int size() const { return static_cast<int>(diag_.size()); }
  int observed_count() const { return static_cast<int>(observed_.size()); }
  const std::vector<int>& observed() const { return observed_; }
  bool is_full() const { return observed_count() == size(); }

 private:
  Eigen::VectorXi diag_;
  std::vector<int> observed_;
};

/// Subvector of x at observed indices, in order.
Vector apply_sensing(const SensingMask& mask, const Vector& x);

struct BilinearForm {
  Matrix B;
  Matrix C_in;
  std::vector<Matrix> D;
  Vector H;
  double rho = 0.0;
};

namespace detail {

template <typename Scalar>
Scalar factor_value(const Factor& fac, const Eigen::Matrix<Scalar, -1, 1>& x) {
  using std::cos;
  using std::sin;
  Scalar base = x[fac.var];
  if (fac.fn == FactorFn::sin) base = sin(base);
  if (fac.fn == FactorFn::cos) base = cos(base);
  Scalar v(1);
  for (int k = 0; k < fac.power; ++k) v *= base;
  return v;
}

template <typename Scalar>
Scalar term_value(const Term& term, const Eigen::Matrix<Scalar, -1, 1>& theta,
                  const Eigen::Matrix<Scalar, -1, 1>& x) {
  Scalar v(term.gain);
  for (int c : term.coeffs) v *= theta[c];
  for (const auto& fac : term.factors) v *= factor_value(fac, x);
  return v;
}

}  // namespace detail

/// f(x, theta) without input effects. No argument checks; callers validate.
template <typename Scalar>
Eigen::Matrix<Scalar, -1, 1> eval_drift(const SystemSpec& spec,
                                        const Eigen::Matrix<Scalar, -1, 1>& theta,
                                        const Eigen::Matrix<Scalar, -1, 1>& x) {
  Eigen::Matrix<Scalar, -1, 1> dx = Eigen::Matrix<Scalar, -1, 1>::Zero(spec.n);
  for (const auto& t : spec.f_terms) dx[t.state] += detail::term_value(t, theta, x);
  return dx;
}

/// g(x, theta) u. No argument checks.
template <typename Scalar>
Eigen::Matrix<Scalar, -1, 1> eval_input_effect(const SystemSpec& spec,
                                               const Eigen::Matrix<Scalar, -1, 1>& theta,
                                               const Eigen::Matrix<Scalar, -1, 1>& x,
                                               const Eigen::Matrix<Scalar, -1, 1>& u) {
  Eigen::Matrix<Scalar, -1, 1> dx = Eigen::Matrix<Scalar, -1, 1>::Zero(spec.n);
  for (const auto& t : spec.g_terms) dx[t.state] += detail::term_value(t, theta, x) * u[t.input];
  return dx;
}

/// out = f + g u without argument checks or allocation; the integrator hot path.
template <typename Scalar, typename OutVec>
void eval_rhs_into(const SystemSpec& spec, const Eigen::Matrix<Scalar, -1, 1>& theta,
                   const Eigen::Matrix<Scalar, -1, 1>& x, const Eigen::Matrix<Scalar, -1, 1>& u,
                   OutVec& out) {
  out.setZero();
  for (const auto& t : spec.f_terms) out[t.state] += detail::term_value(t, theta, x);
  for (const auto& t : spec.g_terms) out[t.state] += detail::term_value(t, theta, x) * u[t.input];
}

/// f + g u without argument checks.
template <typename Scalar>
Eigen::Matrix<Scalar, -1, 1> eval_rhs_unchecked(const SystemSpec& spec,
                                                const Eigen::Matrix<Scalar, -1, 1>& theta,
                                                const Eigen::Matrix<Scalar, -1, 1>& x,
                                                const Eigen::Matrix<Scalar, -1, 1>& u) {
  Eigen::Matrix<Scalar, -1, 1> dx = eval_drift(spec, theta, x);
  for (const auto& t : spec.g_terms) dx[t.state] += detail::term_value(t, theta, x) * u[t.input];
  return dx;
}

/// x' = f(x, theta) + g(x, theta) u_total. Rejects mismatched sizes and non-finite input.
Vector eval_rhs(const SystemSpec& spec, const Vector& theta, const Vector& x, const Vector& u_total);

/// g(x) as an n x m matrix.
Matrix input_matrix(const SystemSpec& spec, const Vector& theta, const Vector& x);

/// Central-difference bilinear expansion of g(x)u about (x0, u0).
/// h <= 0 selects the default 1e-5 * max(1, |x0|_inf).
BilinearForm bilinearize(const SystemSpec& spec, const Vector& theta, const Vector& x0,
                         const Vector& u0, double h = 0.0);

/// Evaluates B x + C u + sum_j u_j D_j x + H.
Vector eval_bilinear(const BilinearForm& form, const Vector& x, const Vector& u);

/// f_{-rho}(x) = f(x) + x / rho, the drift with the time-constant term removed.
Vector drift_without_time_constant(const SystemSpec& spec, const Vector& theta, const Vector& x,
                                   double rho);

/// Resting state with coefficient references resolved against theta.
Vector resting_state(const SystemSpec& spec, const Vector& theta);

/// Full initial state: observed entries from y0, the rest from resting_state.
Vector seed_state(const SystemSpec& spec, const Vector& theta, const SensingMask& mask,
                  const Vector& y0);

/// Built-in benchmark systems: lotka_volterra, lorenz, bergman_aid, eeg_dvdp.
std::pair<SystemSpec, Vector> builtin_system(const std::string& name);
std::vector<std::string> builtin_system_names();

/// JSON system-spec files.
std::pair<SystemSpec, Vector> load_system_config(const std::string& path);
std::pair<SystemSpec, Vector> parse_system_config(const std::string& text);
std::string dump_system_config(const SystemSpec& spec, const Vector& theta);
void save_system_config(const std::string& path, const SystemSpec& spec, const Vector& theta);

/// A built-in name or a path to a JSON spec.
std::pair<SystemSpec, Vector> resolve_system(const std::string& name_or_path);

std::string to_string(Sign s);
Sign sign_from_string(const std::string& s);

}  // namespace physrec

#endif  // PHYSREC_DYNAMICS_HPP
