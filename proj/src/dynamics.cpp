#include "physrec/dynamics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace physrec {

int SystemSpec::coeff_index(const std::string& cname) const {
  for (int i = 0; i < p(); ++i)
    if (coeffs[i].name == cname) return i;
  return -1;
}

std::vector<std::string> SystemSpec::coeff_names() const {
  std::vector<std::string> out;
  for (const auto& c : coeffs) out.push_back(c.name);
  return out;
}

std::vector<Sign> SystemSpec::coeff_signs() const {
  std::vector<Sign> out;
  for (const auto& c : coeffs) out.push_back(c.sign);
  return out;
}

std::vector<int> SystemSpec::fitted_indices() const {
  std::vector<int> out;
  for (int i = 0; i < p(); ++i)
    if (coeffs[i].fit) out.push_back(i);
  return out;
}

std::string to_string(Sign s) {
  switch (s) {
    case Sign::nonneg: return "nonneg";
    case Sign::nonpos: return "nonpos";
    default: return "free";
  }
}

Sign sign_from_string(const std::string& s) {
  if (s == "free") return Sign::free;
  if (s == "nonneg") return Sign::nonneg;
  if (s == "nonpos") return Sign::nonpos;
  throw ParseError("unknown sign constraint '" + s + "' (expected free, nonneg, nonpos)");
}

namespace {

void check_term(const SystemSpec& spec, const Term& t, bool is_g, const std::string& where,
                std::vector<bool>& used) {
  if (t.state < 0 || t.state >= spec.n)
    throw ContractViolation(where + ": state index " + std::to_string(t.state) +
                            " out of range for n=" + std::to_string(spec.n));
  if (is_g && (t.input < 0 || t.input >= spec.m))
    throw ContractViolation(where + ": input index " + std::to_string(t.input) +
                            " out of range for m=" + std::to_string(spec.m));
  for (int c : t.coeffs) {
    if (c < 0 || c >= spec.p())
      throw ContractViolation(where + ": coefficient index " + std::to_string(c) + " out of range");
    used[c] = true;
  }
  for (const auto& f : t.factors) {
    if (f.var < 0 || f.var >= spec.n)
      throw ContractViolation(where + ": factor references state " + std::to_string(f.var) +
                              " but n=" + std::to_string(spec.n));
    if (f.power < 0) throw ContractViolation(where + ": negative factor power");
  }
  if (!std::isfinite(t.gain)) throw ContractViolation(where + ": non-finite gain");
}

}  // namespace

void validate(const SystemSpec& spec) {
  if (spec.n < 1) throw ContractViolation("system '" + spec.name + "': n must be >= 1");
  if (spec.m < 0) throw ContractViolation("system '" + spec.name + "': m must be >= 0");
  std::vector<bool> used(spec.p(), false);
  for (std::size_t i = 0; i < spec.f_terms.size(); ++i)
    check_term(spec, spec.f_terms[i], false, "f_terms[" + std::to_string(i) + "]", used);
  for (std::size_t i = 0; i < spec.g_terms.size(); ++i)
    check_term(spec, spec.g_terms[i], true, "g_terms[" + std::to_string(i) + "]", used);
  for (int i = 0; i < spec.p(); ++i) {
    if (spec.coeffs[i].fit && !used[i])
      throw ContractViolation("coefficient '" + spec.coeffs[i].name + "' appears in no term");
    if (!(spec.coeffs[i].scale > 0.0))
      throw ContractViolation("coefficient '" + spec.coeffs[i].name + "' needs a positive scale");
    for (int j = 0; j < i; ++j)
      if (spec.coeffs[j].name == spec.coeffs[i].name)
        throw ContractViolation("duplicate coefficient name '" + spec.coeffs[i].name + "'");
  }
  if (!spec.rest.empty() && static_cast<int>(spec.rest.size()) != spec.n)
    throw ContractViolation("rest must have n entries");
  for (const auto& r : spec.rest)
    if (const int* c = std::get_if<int>(&r); c && (*c < 0 || *c >= spec.p()))
      throw ContractViolation("rest references unknown coefficient index " + std::to_string(*c));
  for (int ch : spec.external_inputs)
    if (ch < 0 || ch >= spec.m)
      throw ContractViolation("external input channel " + std::to_string(ch) + " out of range");
  if (spec.rho && !(*spec.rho > 0.0)) throw ContractViolation("rho must be positive");
}

void validate_theta(const SystemSpec& spec, const Vector& theta) {
  if (theta.size() != spec.p())
    throw ContractViolation("theta has " + std::to_string(theta.size()) + " entries, expected " +
                            std::to_string(spec.p()));
  for (int i = 0; i < spec.p(); ++i) {
    if (!std::isfinite(theta[i]))
      throw ContractViolation("theta entry '" + spec.coeffs[i].name + "' is not finite");
    if (spec.coeffs[i].sign == Sign::nonneg && theta[i] < 0.0)
      throw ContractViolation("theta entry '" + spec.coeffs[i].name + "' violates nonneg");
    if (spec.coeffs[i].sign == Sign::nonpos && theta[i] > 0.0)
      throw ContractViolation("theta entry '" + spec.coeffs[i].name + "' violates nonpos");
  }
}

SensingMask::SensingMask(Eigen::VectorXi diag) : diag_(std::move(diag)) {
  for (int i = 0; i < diag_.size(); ++i) {
    if (diag_[i] != 0 && diag_[i] != 1) throw ContractViolation("sensing mask entries must be 0 or 1");
    if (diag_[i] == 1) observed_.push_back(i);
  }
  if (observed_.empty()) throw ContractViolation("sensing mask must observe at least one state");
}

SensingMask SensingMask::all(int n) { return SensingMask(Eigen::VectorXi::Ones(n)); }

Vector apply_sensing(const SensingMask& mask, const Vector& x) {
  if (x.size() != mask.size())
    throw ContractViolation("apply_sensing: state has " + std::to_string(x.size()) +
                            " entries, mask has " + std::to_string(mask.size()));
  Vector y(mask.observed_count());
  for (int i = 0; i < y.size(); ++i) y[i] = x[mask.observed()[i]];
  return y;
}

Vector eval_rhs(const SystemSpec& spec, const Vector& theta, const Vector& x, const Vector& u_total) {
  if (x.size() != spec.n || u_total.size() != spec.m || theta.size() != spec.p())
    throw ContractViolation("eval_rhs: dimension mismatch for system '" + spec.name + "'");
  if (!x.allFinite() || !u_total.allFinite() || !theta.allFinite())
    throw ContractViolation("eval_rhs: non-finite argument");
  return eval_rhs_unchecked<double>(spec, theta, x, u_total);
}

Matrix input_matrix(const SystemSpec& spec, const Vector& theta, const Vector& x) {
  Matrix g = Matrix::Zero(spec.n, spec.m);
  for (const auto& t : spec.g_terms) g(t.state, t.input) += detail::term_value<double>(t, theta, x);
  return g;
}

BilinearForm bilinearize(const SystemSpec& spec, const Vector& theta, const Vector& x0,
                         const Vector& u0, double h) {
  if (x0.size() != spec.n || u0.size() != spec.m || theta.size() != spec.p())
    throw ContractViolation("bilinearize: dimension mismatch");
  if (h <= 0.0) h = 1e-5 * std::max(1.0, x0.lpNorm<Eigen::Infinity>());
  const int n = spec.n;
  const int m = spec.m;
  auto G = [&](const Vector& x, const Vector& u) { return eval_input_effect<double>(spec, theta, x, u); };

  BilinearForm form;
  form.B.resize(n, n);
  form.C_in.resize(n, m);
  form.D.assign(m, Matrix(n, n));
  for (int k = 0; k < n; ++k) {
    Vector xp = x0, xm = x0;
    xp[k] += h;
    xm[k] -= h;
    form.B.col(k) = (G(xp, u0) - G(xm, u0)) / (2.0 * h);
    for (int j = 0; j < m; ++j) {
      Vector ej = Vector::Zero(m);
      ej[j] = 1.0;
      // g(x)u is linear in u, so the u-derivative is g(x) e_j and only x needs differencing.
      form.D[j].col(k) = (G(xp, ej) - G(xm, ej)) / (2.0 * h);
    }
  }
  const double hu = 1e-5 * std::max(1.0, m > 0 ? u0.lpNorm<Eigen::Infinity>() : 1.0);
  for (int j = 0; j < m; ++j) {
    Vector up = u0, um = u0;
    up[j] += hu;
    um[j] -= hu;
    form.C_in.col(j) = (G(x0, up) - G(x0, um)) / (2.0 * hu);
  }
  Vector lin = form.B * x0 + form.C_in * u0;
  for (int j = 0; j < m; ++j) lin += u0[j] * (form.D[j] * x0);
  form.H = G(x0, u0) - lin;
  form.rho = spec.rho.value_or(0.0);

  bool finite = form.B.allFinite() && form.C_in.allFinite() && form.H.allFinite();
  for (const auto& d : form.D) finite = finite && d.allFinite();
  if (!finite) throw NumericalFailure("bilinearize: non-finite Jacobian entries");
  return form;
}

Vector eval_bilinear(const BilinearForm& form, const Vector& x, const Vector& u) {
  Vector out = form.B * x + form.C_in * u + form.H;
  for (std::size_t j = 0; j < form.D.size(); ++j) out += u[static_cast<Eigen::Index>(j)] * (form.D[j] * x);
  return out;
}

Vector drift_without_time_constant(const SystemSpec& spec, const Vector& theta, const Vector& x,
                                   double rho) {
  if (!(rho > 0.0)) throw ContractViolation("rho must be positive");
  return eval_drift<double>(spec, theta, x) + x / rho;
}

Vector resting_state(const SystemSpec& spec, const Vector& theta) {
  Vector r = Vector::Zero(spec.n);
  for (int i = 0; i < static_cast<int>(spec.rest.size()); ++i) {
    if (const double* v = std::get_if<double>(&spec.rest[i]))
      r[i] = *v;
    else
      r[i] = theta[std::get<int>(spec.rest[i])];
  }
  return r;
}

Vector seed_state(const SystemSpec& spec, const Vector& theta, const SensingMask& mask,
                  const Vector& y0) {
  if (mask.size() != spec.n) throw ContractViolation("seed_state: mask size differs from n");
  if (y0.size() == spec.n && mask.is_full()) return y0;
  if (y0.size() != mask.observed_count())
    throw ContractViolation("seed_state: observation has " + std::to_string(y0.size()) +
                            " entries, mask observes " + std::to_string(mask.observed_count()));
  Vector x = resting_state(spec, theta);
  for (int i = 0; i < y0.size(); ++i) x[mask.observed()[i]] = y0[i];
  return x;
}

// ---------------------------------------------------------------------------
// Built-in systems

namespace {

struct SpecBuilder {
  SystemSpec spec;
  std::vector<double> values;

  int coeff(const std::string& name, Sign sign, double value, double scale, bool fit = true) {
    spec.coeffs.push_back({name, sign, scale, fit});
    values.push_back(value);
    return spec.p() - 1;
  }
  static Factor x(int var, int power = 1) { return Factor{var, power, FactorFn::pow}; }
  void f(int state, std::vector<int> coeffs, double gain, std::vector<Factor> factors) {
    spec.f_terms.push_back({state, -1, std::move(coeffs), gain, std::move(factors)});
  }
  void g(int state, int input, std::vector<int> coeffs, double gain, std::vector<Factor> factors) {
    spec.g_terms.push_back({state, input, std::move(coeffs), gain, std::move(factors)});
  }
  std::pair<SystemSpec, Vector> done() {
    validate(spec);
    return {spec, Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()))};
  }
};

std::pair<SystemSpec, Vector> lotka_volterra() {
  SpecBuilder b;
  b.spec.name = "lotka_volterra";
  b.spec.n = 2;
  b.spec.m = 1;
  b.spec.state_names = {"x1", "x2"};
  b.spec.input_names = {"u"};
  const int a = b.coeff("a", Sign::nonneg, 0.5, 1.0);
  const int bb = b.coeff("b", Sign::nonneg, 0.025, 0.01);
  const int c = b.coeff("c", Sign::nonneg, 0.5, 1.0);
  const int d = b.coeff("d", Sign::nonneg, 0.005, 0.01);
  b.f(0, {a}, 1.0, {SpecBuilder::x(0)});
  b.f(0, {bb}, -1.0, {SpecBuilder::x(0), SpecBuilder::x(1)});
  b.f(1, {c}, -1.0, {SpecBuilder::x(1)});
  b.f(1, {d}, 1.0, {SpecBuilder::x(0), SpecBuilder::x(1)});
  b.g(1, 0, {}, 1.0, {});
  // coexistence equilibrium (c/d, a/b)
  b.spec.rest = {RestValue{100.0}, RestValue{20.0}};
  b.spec.external_inputs = {0};
  b.spec.rho = 1.0;
  return b.done();
}

std::pair<SystemSpec, Vector> lorenz() {
  SpecBuilder b;
  b.spec.name = "lorenz";
  b.spec.n = 3;
  b.spec.m = 1;
  b.spec.state_names = {"x1", "x2", "x3"};
  b.spec.input_names = {"u"};
  const int sigma = b.coeff("sigma", Sign::nonneg, 10.0, 10.0);
  const int rho = b.coeff("rho_L", Sign::nonneg, 28.0, 10.0);
  const int beta = b.coeff("beta", Sign::nonneg, 8.0 / 3.0, 1.0);
  using B = SpecBuilder;
  b.f(0, {sigma}, -1.0, {B::x(0)});
  b.f(0, {sigma}, 1.0, {B::x(1)});
  b.f(1, {rho}, 1.0, {B::x(0)});
  b.f(1, {}, -1.0, {B::x(0), B::x(2)});
  b.f(1, {}, -1.0, {B::x(1)});
  b.f(2, {}, 1.0, {B::x(0), B::x(1)});
  b.f(2, {beta}, -1.0, {B::x(2)});
  b.g(0, 0, {}, 1.0, {});
  b.spec.rest = {RestValue{0.0}, RestValue{0.0}, RestValue{0.0}};
  b.spec.external_inputs = {0};
  b.spec.rho = 1.0;
  return b.done();
}

// Bergman minimal model, time in minutes, glucose in mmol/L.
//   i'   = -n i + p4 u1
//   i_s' = -p1 i_s + p2 (i - i_b)
//   G'   = -G_b i_s - p3 G + u2 * (1/VoI)
std::pair<SystemSpec, Vector> bergman_aid() {
  SpecBuilder b;
  b.spec.name = "bergman_aid";
  b.spec.n = 3;
  b.spec.m = 2;
  b.spec.state_names = {"i", "i_s", "G"};
  b.spec.input_names = {"u1", "u2"};
  const int p1 = b.coeff("p1", Sign::nonneg, 0.02, 0.01);
  const int p2 = b.coeff("p2", Sign::nonneg, 5.5e-4, 1e-3);
  const int p3 = b.coeff("p3", Sign::nonneg, 0.002, 1e-3);
  const int p4 = b.coeff("p4", Sign::nonneg, 0.1, 0.1);
  const int n = b.coeff("n", Sign::nonneg, 0.1, 0.1);
  const int inv_v = b.coeff("inv_VoI", Sign::nonneg, 0.16, 0.1);
  const int ib = b.coeff("i_b", Sign::nonneg, 1.0, 1.0);
  const int gb = b.coeff("G_b", Sign::nonneg, 5.5, 10.0);
  // Ninth coefficient counted for AID; not part of the minimal model equations.
  b.coeff("k_ctrl", Sign::free, 0.0, 1.0, false);
  using B = SpecBuilder;
  b.f(0, {n}, -1.0, {B::x(0)});
  b.g(0, 0, {p4}, 1.0, {});
  b.f(1, {p1}, -1.0, {B::x(1)});
  b.f(1, {p2}, 1.0, {B::x(0)});
  b.f(1, {p2, ib}, -1.0, {});
  b.f(2, {gb}, -1.0, {B::x(1)});
  b.f(2, {p3}, -1.0, {B::x(2)});
  b.g(2, 1, {inv_v}, 1.0, {});
  b.spec.rest = {RestValue{ib}, RestValue{0.0}, RestValue{gb}};
  b.spec.external_inputs = {1};
  b.spec.rho = 1.0 / 0.1;
  return b.done();
}

// Coupled Duffing-van der Pol oscillators, states (x1, x1', x2, x2'):
//   x1'' = -k1 x1 + k2 x2 - b1 x1^3 - b2 (x1 - x2)^3 + eps1 x1' (1 - x1^2)
//   x2'' = k2 (x1 - x2) + b2 (x1 - x2)^3 + eps2 x2' (1 - x2^2) + u
std::pair<SystemSpec, Vector> eeg_dvdp() {
  SpecBuilder b;
  b.spec.name = "eeg_dvdp";
  b.spec.n = 4;
  b.spec.m = 1;
  b.spec.state_names = {"x1", "v1", "x2", "v2"};
  b.spec.input_names = {"u"};
  const int k1 = b.coeff("k1", Sign::nonneg, 4.0, 1.0);
  const int k2 = b.coeff("k2", Sign::nonneg, 2.0, 1.0);
  const int b1 = b.coeff("b1", Sign::nonneg, 1.0, 1.0);
  const int b2 = b.coeff("b2", Sign::nonneg, 0.5, 1.0);
  const int e1 = b.coeff("eps1", Sign::nonneg, 1.0, 1.0);
  const int e2 = b.coeff("eps2", Sign::nonneg, 1.5, 1.0);
  using B = SpecBuilder;
  constexpr int X1 = 0, V1 = 1, X2 = 2, V2 = 3;
  b.f(X1, {}, 1.0, {B::x(V1)});
  b.f(X2, {}, 1.0, {B::x(V2)});
  // (x1 - x2)^3 = x1^3 - 3 x1^2 x2 + 3 x1 x2^2 - x2^3
  const std::vector<std::pair<double, std::vector<Factor>>> cube = {
      {1.0, {B::x(X1, 3)}},
      {-3.0, {B::x(X1, 2), B::x(X2)}},
      {3.0, {B::x(X1), B::x(X2, 2)}},
      {-1.0, {B::x(X2, 3)}}};
  b.f(V1, {k1}, -1.0, {B::x(X1)});
  b.f(V1, {k2}, 1.0, {B::x(X2)});
  b.f(V1, {b1}, -1.0, {B::x(X1, 3)});
  for (const auto& [gain, facs] : cube) b.f(V1, {b2}, -gain, facs);
  b.f(V1, {e1}, 1.0, {B::x(V1)});
  b.f(V1, {e1}, -1.0, {B::x(V1), B::x(X1, 2)});
  b.f(V2, {k2}, 1.0, {B::x(X1)});
  b.f(V2, {k2}, -1.0, {B::x(X2)});
  for (const auto& [gain, facs] : cube) b.f(V2, {b2}, gain, facs);
  b.f(V2, {e2}, 1.0, {B::x(V2)});
  b.f(V2, {e2}, -1.0, {B::x(V2), B::x(X2, 2)});
  b.g(V2, 0, {}, 1.0, {});
  b.spec.rest = {RestValue{0.0}, RestValue{0.0}, RestValue{0.0}, RestValue{0.0}};
  b.spec.external_inputs = {0};
  b.spec.rho = 1.0;
  return b.done();
}

}  // namespace

std::vector<std::string> builtin_system_names() {
  return {"lotka_volterra", "lorenz", "bergman_aid", "eeg_dvdp"};
}

std::pair<SystemSpec, Vector> builtin_system(const std::string& name) {
  if (name == "lotka_volterra") return lotka_volterra();
  if (name == "lorenz") return lorenz();
  if (name == "bergman_aid") return bergman_aid();
  if (name == "eeg_dvdp") return eeg_dvdp();
  std::string msg = "unknown built-in system '" + name + "'; supported:";
  for (const auto& s : builtin_system_names()) msg += " " + s;
  msg += ". Other systems (e.g. f8_crusader) can be loaded with load_system_config.";
  throw LookupError(msg);
}

std::pair<SystemSpec, Vector> resolve_system(const std::string& name_or_path) {
  const auto names = builtin_system_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end())
    return builtin_system(name_or_path);
  if (std::ifstream(name_or_path).good()) return load_system_config(name_or_path);
  return builtin_system(name_or_path);
}

}  // namespace physrec
