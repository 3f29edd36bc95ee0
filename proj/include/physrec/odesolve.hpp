#ifndef PHYSREC_ODESOLVE_HPP
#define PHYSREC_ODESOLVE_HPP

// Fixed-step integration of SystemSpec models with zero-order-hold inputs.

#include <string>

#include "physrec/dynamics.hpp"

namespace physrec {

enum class Method { rk4, euler, semi_implicit_euler };

struct SolverConfig {
  Method method = Method::rk4;
  int substeps = 10;
};

/// States beyond this magnitude count as divergence.
inline constexpr double kDivergenceBound = 1e9;

struct InputSignal {
  double t0 = 0.0;
  double dt = 1.0;
  /// m x k, one column per sample.
  Matrix channels;

  InputSignal() = default;
  InputSignal(double t0_, double dt_, Matrix channels_);

  int m() const { return static_cast<int>(channels.rows()); }
  int k() const { return static_cast<int>(channels.cols()); }
};

/// Column index of the latest sample at or before t (clamped to the last sample).
int zoh_index(const InputSignal& sig, double t);
Vector zoh_value(const InputSignal& sig, double t);

Vector step_rk4(const SystemSpec& spec, const Vector& theta, const Vector& x, double t, double h,
                const InputSignal& sig);

struct Solution {
  Vector t;
  Matrix x;  ///< n x K
  Matrix y;  ///< observed x K
};

/// Integrates from the full initial state x0 and samples at t_grid.
/// Throws DivergenceError carrying the failure time.
Solution solve(const SystemSpec& spec, const Vector& theta, const Vector& x0, const InputSignal& sig,
               const Vector& t_grid, const SolverConfig& cfg, const SensingMask& mask);

/// Uniform grid t0, t0 + dt, ..., k samples.
Vector uniform_grid(double t0, double dt, int k);

Method method_from_string(const std::string& s);
std::string to_string(Method m);

}  // namespace physrec

#endif  // PHYSREC_ODESOLVE_HPP
