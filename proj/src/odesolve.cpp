#include "physrec/odesolve.hpp"

#include <algorithm>
#include <cmath>

namespace physrec {

InputSignal::InputSignal(double t0_, double dt_, Matrix channels_)
    : t0(t0_), dt(dt_), channels(std::move(channels_)) {
  if (!(dt > 0.0)) throw ContractViolation("InputSignal: dt must be positive");
  if (!channels.allFinite()) throw ContractViolation("InputSignal: non-finite sample");
}

int zoh_index(const InputSignal& sig, double t) {
  // Relative slack so that t = t0 + j*dt computed in floating point still lands on j.
  const double pos = (t - sig.t0) / sig.dt;
  if (pos < -1e-9) throw ContractViolation("zoh_value: t precedes the first sample");
  const int idx = static_cast<int>(std::floor(pos + 1e-9));
  return std::clamp(idx, 0, std::max(0, sig.k() - 1));
}

Vector zoh_value(const InputSignal& sig, double t) {
  const int idx = zoh_index(sig, t);
  if (sig.k() == 0) return Vector::Zero(sig.m());
  return sig.channels.col(idx);
}

namespace {

// Preallocated stage buffers so the inner loop does not allocate.
class Integrator {
 public:
  Integrator(const SystemSpec& spec, const Vector& theta, const InputSignal& sig, Method method)
      : spec_(spec), theta_(theta), sig_(sig), method_(method),
        k1_(spec.n), k2_(spec.n), k3_(spec.n), k4_(spec.n), tmp_(spec.n), u_(spec.m) {}

  void step(Vector& x, double t, double h) {
    // Zero-order hold: the input sampled at the step start is held for every stage.
    if (spec_.m > 0) u_ = sig_.channels.col(zoh_index(sig_, t));
    switch (method_) {
      case Method::rk4:
        rhs(x, t, k1_);
        tmp_ = x + 0.5 * h * k1_;
        rhs(tmp_, t + 0.5 * h, k2_);
        tmp_ = x + 0.5 * h * k2_;
        rhs(tmp_, t + 0.5 * h, k3_);
        tmp_ = x + h * k3_;
        rhs(tmp_, t + h, k4_);
        x += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
        break;
      case Method::euler:
        rhs(x, t, k1_);
        x += h * k1_;
        break;
      case Method::semi_implicit_euler:
        // Gauss-Seidel sweep: each component sees the already-updated earlier ones.
        for (int i = 0; i < spec_.n; ++i) {
          rhs(x, t, k1_);
          x[i] += h * k1_[i];
        }
        break;
    }
  }

 private:
  void rhs(const Vector& x, double /*t*/, Vector& out) {
    eval_rhs_into<double>(spec_, theta_, x, u_, out);
  }

  const SystemSpec& spec_;
  const Vector& theta_;
  const InputSignal& sig_;
  Method method_;
  Vector k1_, k2_, k3_, k4_, tmp_, u_;
};

bool diverged(const Vector& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || std::abs(x[i]) > kDivergenceBound) return true;
  return false;
}

void check_dims(const SystemSpec& spec, const Vector& theta, const Vector& x, const InputSignal& sig) {
  if (x.size() != spec.n) throw ContractViolation("solver: state has wrong dimension");
  if (theta.size() != spec.p()) throw ContractViolation("solver: theta has wrong dimension");
  if (sig.m() != spec.m) throw ContractViolation("solver: input signal has wrong channel count");
}

}  // namespace

Vector step_rk4(const SystemSpec& spec, const Vector& theta, const Vector& x, double t, double h,
                const InputSignal& sig) {
  if (!(h > 0.0)) throw ContractViolation("step_rk4: h must be positive");
  check_dims(spec, theta, x, sig);
  Integrator integ(spec, theta, sig, Method::rk4);
  Vector out = x;
  integ.step(out, t, h);
  if (diverged(out)) throw DivergenceError(t + h, "RK4 step diverged");
  return out;
}

Solution solve(const SystemSpec& spec, const Vector& theta, const Vector& x0, const InputSignal& sig,
               const Vector& t_grid, const SolverConfig& cfg, const SensingMask& mask) {
  check_dims(spec, theta, x0, sig);
  if (mask.size() != spec.n) throw ContractViolation("solver: sensing mask has wrong dimension");
  if (cfg.substeps < 1) throw ContractViolation("solver: substeps must be >= 1");
  if (t_grid.size() < 1) throw ContractViolation("solver: empty time grid");
  for (Eigen::Index i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1])) throw ContractViolation("solver: time grid must be strictly increasing");
  if (diverged(x0)) throw DivergenceError(t_grid[0], "initial state is not finite");

  const auto K = t_grid.size();
  Solution sol;
  sol.t = t_grid;
  sol.x.resize(spec.n, K);
  sol.x.col(0) = x0;
  Integrator integ(spec, theta, sig, cfg.method);
  Vector x = x0;
  for (Eigen::Index i = 1; i < K; ++i) {
    const double ta = t_grid[i - 1];
    const double h = (t_grid[i] - ta) / cfg.substeps;
    for (int s = 0; s < cfg.substeps; ++s) {
      integ.step(x, ta + s * h, h);
      if (diverged(x)) throw DivergenceError(ta + (s + 1) * h, "solution diverged");
    }
    sol.x.col(i) = x;
  }
  sol.y.resize(mask.observed_count(), K);
  for (int r = 0; r < mask.observed_count(); ++r) sol.y.row(r) = sol.x.row(mask.observed()[r]);
  return sol;
}

Vector uniform_grid(double t0, double dt, int k) {
  Vector t(k);
  for (int i = 0; i < k; ++i) t[i] = t0 + i * dt;
  return t;
}

Method method_from_string(const std::string& s) {
  if (s == "rk4") return Method::rk4;
  if (s == "euler") return Method::euler;
  if (s == "semi_implicit_euler") return Method::semi_implicit_euler;
  throw ParseError("unknown solver method '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::semi_implicit_euler: return "semi_implicit_euler";
    default: return "rk4";
  }
}

}  // namespace physrec
