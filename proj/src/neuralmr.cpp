#include "physrec/neuralmr.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <memory>

#include "physrec/metrics.hpp"
#include "physrec/rng.hpp"

namespace physrec {

namespace {

double softplus1(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid1(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Matrix uniform_matrix(Rng& rng, int rows, int cols, double bound) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

void require_finite_state(const Vector& h) {
  if (!h.allFinite()) throw DivergenceError(0.0, "recurrent cell state became non-finite");
}

/// One substep given the precomputed input drive W_in I + b. Writes tanh activations to `act`.
void substep(const CellWeights& c, const Vector& rho_inv, const Vector& drive, double delta, Vector& h, Vector& act) {
  act = (drive + c.w_rec * h).array().tanh();
  switch (c.arch) {
    case Arch::ltc: {
      const Vector f = act.unaryExpr(&softplus1);
      h = (h.array() + delta * f.array() * c.A.array()) / (1.0 + delta * (rho_inv.array() + f.array()));
      break;
    }
    case Arch::ctrnn:
      h = h + delta * (act - h.cwiseProduct(rho_inv));
      break;
    case Arch::node:
      h = h + delta * act;
      break;
  }
}

Vector step_impl(const CellWeights& c, const Vector& h0, const Vector& input, double dt, int substeps) {
  if (substeps < 1) throw ContractViolation("cell step: substeps must be >= 1");
  if (input.size() != c.inputs()) throw ContractViolation("cell step: input width mismatch");
  if (h0.size() != c.width()) throw ContractViolation("cell step: hidden width mismatch");
  const double delta = dt / substeps;
  const Vector drive = c.w_in * input + c.b;
  const Vector rho_inv = (-c.log_rho.array()).exp();
  Vector h = h0, act;
  for (int s = 0; s < substeps; ++s) substep(c, rho_inv, drive, delta, h, act);
  require_finite_state(h);
  return h;
}

/// Forward rollout with the trajectory kept for back-propagation through time.
struct Rollout {
  std::vector<Vector> h;    ///< state before each substep, plus the final state
  std::vector<Vector> act;  ///< tanh activation at each substep
  std::vector<int> sample;  ///< input column driving each substep
};

Rollout rollout(const CellWeights& c, const Matrix& inputs, double dt, int substeps) {
  Rollout r;
  const int k = static_cast<int>(inputs.cols());
  const double delta = dt / substeps;
  const Matrix drive = (c.w_in * inputs).colwise() + c.b;
  const Vector rho_inv = (-c.log_rho.array()).exp();
  r.h.reserve(static_cast<std::size_t>(k * substeps + 1));
  r.act.reserve(static_cast<std::size_t>(k * substeps));
  Vector h = Vector::Zero(c.width()), act;
  for (int j = 0; j < k; ++j) {
    const Vector dj = drive.col(j);
    for (int s = 0; s < substeps; ++s) {
      r.h.push_back(h);
      substep(c, rho_inv, dj, delta, h, act);
      r.act.push_back(act);
      r.sample.push_back(j);
    }
  }
  require_finite_state(h);
  r.h.push_back(h);
  return r;
}

struct CellGrads {
  Matrix w_in, w_rec;
  Vector b, log_rho, A;
};

CellGrads backprop(const CellWeights& c, const Rollout& r, const Matrix& inputs, double dt, int substeps,
                   const Vector& g_final) {
  const int V = c.width();
  const double delta = dt / substeps;
  const Vector rho_inv = (-c.log_rho.array()).exp();
  CellGrads g{Matrix::Zero(V, c.inputs()), Matrix::Zero(V, V), Vector::Zero(V), Vector::Zero(V), Vector::Zero(V)};
  Matrix dz_sum = Matrix::Zero(V, inputs.cols());  // per-sample drive cotangents
  Vector gh = g_final;
  for (int i = static_cast<int>(r.act.size()) - 1; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    const Vector& h = r.h[idx];
    const Vector& t = r.act[idx];
    Vector dz;
    Vector gh_prev;
    switch (c.arch) {
      case Arch::ltc: {
        const Vector f = t.unaryExpr(&softplus1);
        const Vector den = (1.0 + delta * (rho_inv.array() + f.array())).matrix();
        const Vector& h_next = r.h[idx + 1];
        const Vector dnum = gh.cwiseQuotient(den);
        const Vector dden = -gh.cwiseProduct(h_next).cwiseQuotient(den);
        g.A += delta * dnum.cwiseProduct(f);
        const Vector df = delta * (dnum.cwiseProduct(c.A) + dden);
        // den depends on 1/rho = exp(-log_rho)
        g.log_rho += -delta * dden.cwiseProduct(rho_inv);
        dz = df.cwiseProduct(t.unaryExpr(&sigmoid1)).cwiseProduct((1.0 - t.array().square()).matrix());
        gh_prev = dnum;
        break;
      }
      case Arch::ctrnn:
        dz = delta * gh.cwiseProduct((1.0 - t.array().square()).matrix());
        g.log_rho += delta * gh.cwiseProduct(h).cwiseProduct(rho_inv);
        gh_prev = gh.cwiseProduct((1.0 - delta * rho_inv.array()).matrix());
        break;
      case Arch::node:
        dz = delta * gh.cwiseProduct((1.0 - t.array().square()).matrix());
        gh_prev = gh;
        break;
    }
    g.w_rec.noalias() += dz * h.transpose();
    gh_prev.noalias() += c.w_rec.transpose() * dz;
    dz_sum.col(r.sample[idx]) += dz;
    gh = std::move(gh_prev);
  }
  g.w_in.noalias() = dz_sum * inputs.transpose();
  g.b = dz_sum.rowwise().sum();
  return g;
}

/// Scale vectors splitting the coefficient outputs into ReLU-magnitude and linear parts.
void coeff_scales(const DenseHead& head, Vector& s_relu, Vector& s_lin) {
  s_relu = Vector::Zero(head.p);
  s_lin = Vector::Zero(head.p);
  for (int i = 0; i < head.p; ++i) {
    const Sign sg = head.signs[static_cast<std::size_t>(i)];
    if (head.mode == CoeffMode::linear || sg == Sign::free)
      s_lin[i] = head.scales[i];
    else
      s_relu[i] = (sg == Sign::nonpos ? -1.0 : 1.0) * head.scales[i];
  }
}

std::vector<Vector> dropout_masks(const DenseHead& head, std::uint64_t seed) {
  std::vector<Vector> masks;
  Rng rng(seed);
  const double keep = 1.0 - head.dropout;
  for (std::size_t l = 0; l + 1 < head.W.size(); ++l) {
    Vector m(head.W[l].rows());
    for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = rng.uniform() < head.dropout ? 0.0 : 1.0 / keep;
    masks.push_back(std::move(m));
  }
  return masks;
}

/// Projection onto the declared signs (only the linear mode can leave them).
void project_signs(const SystemSpec& spec, Vector& theta) {
  for (int i = 0; i < spec.p(); ++i) {
    const Sign s = spec.coeffs[static_cast<std::size_t>(i)].sign;
    if (s == Sign::nonneg) theta[i] = std::max(theta[i], 0.0);
    if (s == Sign::nonpos) theta[i] = std::min(theta[i], 0.0);
  }
}

}  // namespace

Arch arch_from_string(const std::string& s) {
  if (s == "ltc") return Arch::ltc;
  if (s == "ctrnn") return Arch::ctrnn;
  if (s == "node") return Arch::node;
  throw ParseError("unknown architecture '" + s + "' (expected ltc, ctrnn or node)");
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::ltc: return "ltc";
    case Arch::ctrnn: return "ctrnn";
    case Arch::node: return "node";
  }
  return "?";
}

CoeffMode coeff_mode_from_string(const std::string& s) {
  if (s == "relu_signed") return CoeffMode::relu_signed;
  if (s == "linear") return CoeffMode::linear;
  throw ParseError("unknown coefficient output mode '" + s + "'");
}

std::string to_string(CoeffMode m) { return m == CoeffMode::linear ? "linear" : "relu_signed"; }

CellWeights init_cell(Arch arch, int width, int n_in, std::uint64_t seed) {
  if (width < 1 || n_in < 1) throw ContractViolation("init_cell: sizes must be positive");
  Rng rng(derive_seed(seed, 0xce11));
  CellWeights c;
  c.arch = arch;
  c.w_in = uniform_matrix(rng, width, n_in, 1.0 / std::sqrt(static_cast<double>(n_in)));
  c.w_rec = uniform_matrix(rng, width, width, 1.0 / std::sqrt(static_cast<double>(width)));
  c.b = Vector::Zero(width);
  c.log_rho = Vector::Zero(width);
  c.A = uniform_matrix(rng, width, 1, 1.0);
  return c;
}

Vector ltc_fused_update(const Vector& h, const Vector& f, const Vector& rho, const Vector& A, double delta) {
  return (h.array() + delta * f.array() * A.array()) / (1.0 + delta * (rho.array().inverse() + f.array()));
}

Vector ltc_rhs(const Vector& h, const Vector& f, const Vector& rho, const Vector& A) {
  return -h.array() / rho.array() + f.array() * (A.array() - h.array());
}

Vector ltc_rhs_time_constant(const Vector& h, const Vector& f, const Vector& rho, const Vector& A) {
  const Eigen::ArrayXd tau = rho.array() / (1.0 + rho.array() * f.array());
  return -h.array() / tau + f.array() * A.array();
}

Vector ltc_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps) {
  CellWeights w = c;
  w.arch = Arch::ltc;
  return step_impl(w, h, input, dt, substeps);
}

Vector ctrnn_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps) {
  CellWeights w = c;
  w.arch = Arch::ctrnn;
  return step_impl(w, h, input, dt, substeps);
}

Vector node_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps) {
  CellWeights w = c;
  w.arch = Arch::node;
  return step_impl(w, h, input, dt, substeps);
}

Vector cell_step(const CellWeights& c, const Vector& h, const Vector& input, double dt, int substeps) {
  return step_impl(c, h, input, dt, substeps);
}

Vector run_cell(const CellWeights& c, const Matrix& inputs, double dt, int substeps) {
  if (inputs.rows() != c.inputs()) throw ContractViolation("run_cell: input width mismatch");
  if (substeps < 1) throw ContractViolation("run_cell: substeps must be >= 1");
  return rollout(c, inputs, dt, substeps).h.back();
}

// Head -----------------------------------------------------------------------

DenseHead init_head(const SystemSpec& spec, int q, int in_width, const std::vector<int>& hidden, double dropout,
                    CoeffMode mode, std::uint64_t seed, double init_spread) {
  if (!(init_spread >= 0.0 && init_spread < 1.0)) throw ContractViolation("init_head: init_spread must lie in [0,1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractViolation("init_head: dropout must lie in [0,1)");
  Rng rng(derive_seed(seed, 0x4ead));
  DenseHead head;
  head.dropout = dropout;
  head.mode = mode;
  head.p = spec.p();
  head.q = q;
  head.signs = spec.coeff_signs();
  head.scales.resize(spec.p());
  for (int i = 0; i < spec.p(); ++i) head.scales[i] = spec.coeffs[static_cast<std::size_t>(i)].scale;
  int width = in_width;
  for (int hsz : hidden) {
    if (hsz < 1) throw ContractViolation("init_head: hidden sizes must be positive");
    head.W.push_back(uniform_matrix(rng, hsz, width, std::sqrt(6.0 / (hsz + width))));
    head.b.push_back(Vector::Zero(hsz));
    width = hsz;
  }
  const int out = head.p + head.q;
  head.W.push_back(uniform_matrix(rng, out, width, 0.1 / std::sqrt(static_cast<double>(width))));
  Vector bias = Vector::Zero(out);
  // Initial coefficient magnitudes are drawn around the declared scale.
  for (int i = 0; i < head.p; ++i) bias[i] = rng.uniform(1.0 - init_spread, 1.0 + init_spread);
  head.b.push_back(bias);
  return head;
}

HeadOutput head_forward(const DenseHead& head, const Vector& h, bool training, std::uint64_t seed) {
  if (h.size() != head.W.front().cols()) throw ContractViolation("head_forward: input width mismatch");
  const bool drop = training && head.dropout > 0.0;
  std::vector<Vector> masks;
  if (drop) masks = dropout_masks(head, seed);
  Vector x = h;
  for (std::size_t l = 0; l + 1 < head.W.size(); ++l) {
    x = (head.W[l] * x + head.b[l]).cwiseMax(0.0);
    if (drop) x = x.cwiseProduct(masks[l]);
  }
  const Vector out = head.W.back() * x + head.b.back();
  Vector s_relu, s_lin;
  coeff_scales(head, s_relu, s_lin);
  HeadOutput r;
  const Vector o = out.head(head.p);
  r.theta = o.cwiseMax(0.0).cwiseProduct(s_relu) + o.cwiseProduct(s_lin);
  r.d = out.tail(head.q).unaryExpr(&sigmoid1);
  return r;
}

void validate(const TrainConfig& cfg) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("train config: ") + what);
  };
  need(cfg.epochs >= 0, "epochs must be >= 0");
  need(cfg.lr > 0.0, "learning rate must be positive");
  need(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "adam betas must lie in [0,1)");
  need(cfg.adam_eps > 0.0, "adam epsilon must be positive");
  need(cfg.batch_size >= 1, "batch size must be >= 1");
  need(cfg.k_window >= 2, "k_window must be >= 2");
  need(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0, "split ratio must lie in (0,1)");
  need(cfg.hidden >= 1, "hidden width must be >= 1");
  need(cfg.dropout >= 0.0 && cfg.dropout < 1.0, "dropout must lie in [0,1)");
  need(cfg.cell_dt > 0.0, "cell_dt must be positive");
  need(cfg.substeps >= 1, "substeps must be >= 1");
  need(cfg.s_max >= 0.0, "s_max must be >= 0");
  need(cfg.solver.substeps >= 1, "solver substeps must be >= 1");
  need(cfg.fd_step > 0.0, "fd_step must be positive");
  need(cfg.grad_clip >= 0.0, "grad_clip must be >= 0");
  need(cfg.restarts >= 1 && cfg.restart_epochs >= 1, "restarts and restart_epochs must be >= 1");
  need(cfg.horizon_start >= 0 && cfg.horizon_epochs >= 0, "horizon_start and horizon_epochs must be >= 0");
  need(cfg.init_spread >= 0.0 && cfg.init_spread < 1.0, "init_spread must lie in [0, 1)");
  need(cfg.lr_floor >= 0.0 && cfg.lr_floor <= 1.0, "lr_floor must lie in [0, 1]");
}

// Loss -----------------------------------------------------------------------

Problem::Problem(SystemSpec s, SensingMask m, Vector fixed)
    : spec(std::move(s)), mask(std::move(m)), fixed_theta(std::move(fixed)) {
  validate(spec);
  if (mask.size() != spec.n) throw ContractViolation("problem: sensing mask size differs from state dimension");
  if (fixed_theta.size() == 0) fixed_theta = Vector::Zero(spec.p());
  if (fixed_theta.size() != spec.p()) throw ContractViolation("problem: fixed coefficient vector has wrong length");
}

Vector Problem::complete(const Vector& theta) const {
  Vector out = theta;
  for (int i = 0; i < spec.p(); ++i)
    if (!spec.coeffs[static_cast<std::size_t>(i)].fit) out[i] = fixed_theta[i];
  return out;
}

Matrix shifted_inputs(const Problem& pr, const Matrix& u, const Vector& d, double s_max) {
  if (d.size() != static_cast<Eigen::Index>(pr.spec.external_inputs.size()))
    throw ContractViolation("shifted_inputs: expected one shift per external input");
  Matrix out = u;
  for (std::size_t i = 0; i < pr.spec.external_inputs.size(); ++i) {
    const int ch = pr.spec.external_inputs[i];
    const double s = d[static_cast<Eigen::Index>(i)] * s_max;
    if (s != 0.0) out.row(ch) = fractional_shift(u.row(ch).transpose(), s).transpose();
  }
  return out;
}

Solution reconstruct(const Problem& pr, const Vector& theta, const Vector& d, const Trace& tr, const TrainConfig& cfg,
                     int horizon) {
  if (horizon < 0 || horizon == 1 || horizon > tr.k()) throw ContractViolation("reconstruct: horizon must be 0 or in [2, k]");
  const Vector th = pr.complete(theta);
  const Vector dd = cfg.shift_search ? d : Vector::Zero(d.size());
  const Matrix u = shifted_inputs(pr, tr.u, dd, cfg.s_max);
  const Vector x0 = seed_state(pr.spec, th, pr.mask, tr.y.col(0));
  const int k = horizon == 0 ? tr.k() : horizon;
  return solve(pr.spec, th, x0, InputSignal(tr.t0, tr.dt, u), tr.times().head(k), cfg.solver, pr.mask);
}

namespace {

double reconstruction_mse(const Problem& pr, const Vector& theta, const Vector& d, const Trace& tr,
                          const TrainConfig& cfg, int horizon) {
  const Solution sol = reconstruct(pr, theta, d, tr, cfg, horizon);
  const auto k = sol.t.size();
  if (cfg.explicit_loss) {
    if (tr.x.rows() != pr.spec.n) throw ContractViolation("ode_loss: explicit mode needs the full state in the trace");
    return (sol.x.rightCols(k - 1) - tr.x.middleCols(1, k - 1)).squaredNorm() / (static_cast<double>(pr.spec.n) * (k - 1));
  }
  if (tr.ny() != pr.mask.observed_count()) throw ContractViolation("ode_loss: trace channels differ from sensing mask");
  return (sol.y.rightCols(k - 1) - tr.y.middleCols(1, k - 1)).squaredNorm() / (static_cast<double>(tr.ny()) * (k - 1));
}

}  // namespace

LossEval ode_loss(const Problem& pr, const Vector& theta, const Vector& d, const Trace& tr, const TrainConfig& cfg,
                  bool with_grad, int horizon) {
  if (theta.size() != pr.spec.p() || !theta.allFinite()) throw ContractViolation("ode_loss: theta must be finite with length p");
  if (!d.allFinite()) throw ContractViolation("ode_loss: shifts must be finite");
  LossEval ev;
  ev.grad_theta = Vector::Zero(theta.size());
  ev.grad_d = Vector::Zero(d.size());
  try {
    ev.value = reconstruction_mse(pr, theta, d, tr, cfg, horizon);
  } catch (const DivergenceError&) {
    ev.value = kDivergedLoss;
    ev.diverged = true;
    return ev;
  }
  if (!std::isfinite(ev.value)) {
    ev.value = kDivergedLoss;
    ev.diverged = true;
    return ev;
  }
  if (!with_grad) return ev;
  auto probe = [&](const Vector& th, const Vector& dd) {
    try {
      const double v = reconstruction_mse(pr, th, dd, tr, cfg, horizon);
      return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN();
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  auto central = [](double lp, double lm, double h) { return (std::isnan(lp) || std::isnan(lm)) ? 0.0 : (lp - lm) / (2.0 * h); };
  for (int i = 0; i < pr.spec.p(); ++i) {
    if (!pr.spec.coeffs[static_cast<std::size_t>(i)].fit) continue;
    const double h = cfg.fd_step * std::max(std::abs(theta[i]), pr.spec.coeffs[static_cast<std::size_t>(i)].scale);
    Vector tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    ev.grad_theta[i] = central(probe(tp, d), probe(tm, d), h);
  }
  if (cfg.shift_search && cfg.s_max > 0.0) {
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      const double h = cfg.fd_step;
      Vector dp = d, dm = d;
      dp[j] += h;
      dm[j] = std::max(0.0, dm[j] - h);
      const double span = dp[j] - dm[j];
      const double lp = probe(theta, dp), lm = probe(theta, dm);
      ev.grad_d[j] = (std::isnan(lp) || std::isnan(lm)) ? 0.0 : (lp - lm) / span;
    }
  }
  return ev;
}

Var ode_loss_node(Var theta, Var d, const Problem& pr, const Trace& tr, const TrainConfig& cfg, int horizon) {
  const LossEval ev = ode_loss(pr, theta.value(), d.value(), tr, cfg, true, horizon);
  Matrix value(1, 1);
  value(0, 0) = ev.value;
  return theta.tape->custom_node({theta, d}, value, [gt = ev.grad_theta, gd = ev.grad_d](const Matrix& g) {
    return std::vector<Matrix>{g(0, 0) * gt, g(0, 0) * gd};
  });
}

// Training -------------------------------------------------------------------

Matrix Normaliser::apply(const Matrix& x) const {
  return (x.colwise() - mean).array().colwise() / scale.array();
}

namespace {

Normaliser fit_normaliser(const BatchSet& set) {
  const int rows = set.instances.front().ny() + set.instances.front().m();
  Eigen::ArrayXd s1 = Eigen::ArrayXd::Zero(rows), s2 = Eigen::ArrayXd::Zero(rows);
  double count = 0.0;
  for (int id : set.train) {
    const Trace& tr = set.instances[static_cast<std::size_t>(id)];
    Matrix z(rows, tr.k());
    z << tr.y, tr.u;
    s1 += z.rowwise().sum().array();
    s2 += z.array().square().rowwise().sum();
    count += tr.k();
  }
  Normaliser n;
  n.mean = (s1 / count).matrix();
  const Eigen::ArrayXd var = (s2 / count - (s1 / count).square()).max(0.0);
  n.scale = var.sqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; }).matrix();
  return n;
}

/// Records the cell rollout as a single node with parents (w_in, w_rec, b, log_rho, A).
Var cell_node(const std::vector<Var>& cell_params, const CellWeights& c, const Matrix& inputs, const TrainConfig& cfg) {
  auto traj = std::make_shared<Rollout>(rollout(c, inputs, cfg.cell_dt, cfg.substeps));
  Matrix hf = traj->h.back();
  Tape* tape = cell_params.front().tape;
  return tape->custom_node(cell_params, hf, [traj, c, &inputs, dt = cfg.cell_dt, ss = cfg.substeps](const Matrix& g) {
    CellGrads cg = backprop(c, *traj, inputs, dt, ss, g.col(0));
    return std::vector<Matrix>{cg.w_in, cg.w_rec, cg.b, cg.log_rho, cg.A};
  });
}

/// Head recorded on the tape; returns (theta, d).
std::pair<Var, Var> head_node(const std::vector<Var>& head_params, const DenseHead& head, Var h, bool training,
                              std::uint64_t seed) {
  Tape& tape = *h.tape;
  const std::size_t layers = head.W.size();
  std::vector<Vector> masks;
  const bool drop = training && head.dropout > 0.0;
  if (drop) masks = dropout_masks(head, seed);
  Var x = h;
  for (std::size_t l = 0; l < layers; ++l) {
    x = add(matvec(head_params[2 * l], x), head_params[2 * l + 1]);
    if (l + 1 < layers) {
      x = relu(x);
      if (drop) x = mul(x, masks[l]);
    }
  }
  Vector s_relu, s_lin;
  coeff_scales(head, s_relu, s_lin);
  Var o = slice(x, 0, head.p);
  Var theta = add(mul(relu(o), s_relu), mul(o, s_lin));
  Var d = sigmoid(slice(x, head.p, head.q));
  (void)tape;
  return {theta, d};
}

}  // namespace

Trainer::Trainer(Arch arch, Problem problem, const BatchSet& batches, TrainConfig cfg)
    : arch_(arch), problem_(std::move(problem)), batches_(&batches), cfg_(std::move(cfg)) {
  validate(cfg_);
  if (batches.instances.empty() || batches.train.empty()) throw ContractViolation("train: batch set is empty");
  const Trace& first = batches.instances.front();
  if (first.m() != problem_.spec.m) throw ContractViolation("train: trace input channels differ from system inputs");
  if (first.ny() != problem_.mask.observed_count()) throw ContractViolation("train: trace channels differ from sensing mask");
  const int n_in = first.ny() + first.m();
  model_.cell = init_cell(arch, cfg_.hidden, n_in, cfg_.seed);
  model_.head = init_head(problem_.spec, static_cast<int>(problem_.spec.external_inputs.size()), cfg_.hidden,
                          cfg_.head_hidden, cfg_.dropout, cfg_.coeff_mode, cfg_.seed, cfg_.init_spread);
  model_.norm = fit_normaliser(batches);
  inputs_.reserve(batches.instances.size());
  for (const Trace& tr : batches.instances) {
    Matrix z(n_in, tr.k());
    z << tr.y, tr.u;
    inputs_.push_back(model_.norm.apply(z));
  }
  for (const auto& p : parameters()) {
    adam_m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    adam_v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

namespace {

template <typename MapT, typename ModelT>
std::vector<MapT> parameter_maps(ModelT& m) {
  std::vector<MapT> out;
  auto add = [&](auto& x) { out.emplace_back(x.data(), x.rows(), x.cols()); };
  add(m.cell.w_in);
  add(m.cell.w_rec);
  add(m.cell.b);
  add(m.cell.log_rho);
  add(m.cell.A);
  for (std::size_t l = 0; l < m.head.W.size(); ++l) {
    add(m.head.W[l]);
    add(m.head.b[l]);
  }
  return out;
}

}  // namespace

std::vector<Eigen::Map<Matrix>> Trainer::parameters() { return parameter_maps<Eigen::Map<Matrix>>(model_); }

std::vector<Eigen::Map<const Matrix>> Trainer::parameters() const {
  return parameter_maps<Eigen::Map<const Matrix>>(model_);
}

double Trainer::batch_loss(const std::vector<int>& ids, std::vector<Matrix>* grads, std::uint64_t dropout_seed) const {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : parameters()) leaves.push_back(tape.leaf(p));
  const std::vector<Var> cell_params(leaves.begin(), leaves.begin() + 5);
  const std::vector<Var> head_params(leaves.begin() + 5, leaves.end());
  std::vector<Var> losses;
  int diverged = 0;
  for (int id : ids) {
    const auto idx = static_cast<std::size_t>(id);
    Var h = cell_node(cell_params, model_.cell, inputs_[idx], cfg_);
    auto [theta, d] = head_node(head_params, model_.head, h, true, derive_seed(dropout_seed, static_cast<std::uint64_t>(id)));
    const Trace& tr = batches_->instances[idx];
    const int k = horizon(tr.k());
    Var l = ode_loss_node(theta, d, problem_, tr, cfg_, k == tr.k() ? 0 : k);
    if (l.value()(0, 0) >= kDivergedLoss) ++diverged;
    losses.push_back(l);
  }
  if (diverged == static_cast<int>(ids.size())) return kDivergedLoss;
  Var total = mean(concat(losses));
  if (grads != nullptr) {
    const Gradients g = tape.backward(total);
    grads->clear();
    for (Var leaf : leaves) grads->push_back(g[leaf]);
  }
  return total.value()(0, 0);
}

int Trainer::horizon(int k) const {
  if (cfg_.horizon_start <= 1 || cfg_.horizon_epochs <= 0 || epoch_ >= cfg_.horizon_epochs || cfg_.horizon_start >= k)
    return k;
  const double frac = static_cast<double>(epoch_) / cfg_.horizon_epochs;
  const double h = cfg_.horizon_start * std::pow(static_cast<double>(k) / cfg_.horizon_start, frac);
  return std::clamp(static_cast<int>(std::lround(h)), 2, k);
}

void Trainer::run_epoch() {
  auto params = parameters();
  double sum = 0.0;
  int count = 0;
  bool any_ok = false;
  std::vector<Matrix> grads;
  // Cosine decay from lr to lr * lr_floor across the configured epochs.
  const double progress = cfg_.epochs > 1 ? std::min(1.0, static_cast<double>(epoch_) / (cfg_.epochs - 1)) : 1.0;
  const double lr =
      cfg_.lr * (cfg_.lr_floor + (1.0 - cfg_.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
  for (std::size_t bi = 0; bi < batches_->train_batches.size(); ++bi) {
    const auto& ids = batches_->train_batches[bi];
    const std::uint64_t seed = derive_seed(cfg_.seed, 0xd209 + static_cast<std::uint64_t>(epoch_), bi);
    grads.clear();
    const double loss = batch_loss(ids, &grads, seed);
    sum += loss * static_cast<double>(ids.size());
    count += static_cast<int>(ids.size());
    if (grads.empty()) continue;  // every element diverged
    any_ok = true;
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const Matrix& g : grads) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip)
        for (Matrix& g : grads) g *= cfg_.grad_clip / norm;
    }
    ++adam_t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(adam_t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam_m_[i] = cfg_.beta1 * adam_m_[i] + (1.0 - cfg_.beta1) * grads[i];
      adam_v_[i] = cfg_.beta2 * adam_v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseAbs2();
      params[i].array() -=
          lr * (adam_m_[i].array() / c1) / ((adam_v_[i].array() / c2).sqrt() + cfg_.adam_eps);
    }
  }
  ++epoch_;
  history_.push_back(count > 0 ? sum / count : 0.0);
  if (!any_ok) throw TrainingError("every training element diverged in epoch " + std::to_string(epoch_));
}

HeadOutput Trainer::estimate(const Trace& tr) const {
  const int n_in = tr.ny() + tr.m();
  if (n_in != model_.cell.inputs()) throw ContractViolation("estimate: trace channels differ from the trained model");
  Matrix z(n_in, tr.k());
  z << tr.y, tr.u;
  const Vector h = run_cell(model_.cell, model_.norm.apply(z), cfg_.cell_dt, cfg_.substeps);
  HeadOutput out = head_forward(model_.head, h, false, 0);
  out.theta = problem_.complete(out.theta);
  project_signs(problem_.spec, out.theta);
  return out;
}

RecoveryResult Trainer::result() const {
  RecoveryResult r;
  r.loss_history = history_;
  r.epochs_run = epoch_;
  const auto& test = batches_->test;
  Vector theta = Vector::Zero(problem_.spec.p());
  Vector d = Vector::Zero(model_.head.q);
  for (int id : test) {
    const HeadOutput o = estimate(batches_->instances[static_cast<std::size_t>(id)]);
    theta += o.theta;
    d += o.d;
  }
  theta /= static_cast<double>(test.size());
  d /= static_cast<double>(test.size());
  r.theta_est = theta;
  r.shifts = cfg_.shift_search ? Vector(d * cfg_.s_max) : Vector(Vector::Zero(d.size()));
  double total = 0.0;
  for (int id : test) {
    const Trace& tr = batches_->instances[static_cast<std::size_t>(id)];
    try {
      const Solution sol = reconstruct(problem_, theta, d, tr, cfg_);
      total += rmse_y(sol.y, tr.y);
      r.reconstructed.push_back(sol.y);
    } catch (const DivergenceError&) {
      total = std::numeric_limits<double>::infinity();
      r.reconstructed.emplace_back();
    }
  }
  r.rmse_y = total / static_cast<double>(test.size());
  return r;
}

RecoveryResult train(Arch arch, const Problem& problem, const BatchSet& batches, const TrainConfig& cfg) {
  // Multi-start: every candidate runs the probe epochs, the lowest training loss continues.
  std::unique_ptr<Trainer> best;
  const int probe = cfg.restarts > 1 ? std::min(cfg.restart_epochs, cfg.epochs) : 0;
  for (int r = 0; r < cfg.restarts; ++r) {
    TrainConfig c = cfg;
    if (r > 0) c.seed = derive_seed(cfg.seed, 0x5e1, static_cast<std::uint64_t>(r));
    auto t = std::make_unique<Trainer>(arch, problem, batches, c);
    for (int e = 0; e < probe; ++e) t->run_epoch();
    if (!best || (probe > 0 && t->loss_history().back() < best->loss_history().back())) best = std::move(t);
  }
  while (best->epoch() < cfg.epochs) best->run_epoch();
  return best->result();
}

RecoveryResult recover(const std::vector<Trace>& traces, const Problem& problem, Arch arch, const TrainConfig& cfg,
                       const std::optional<Vector>& truth) {
  validate(cfg);
  const BatchSet set = make_batches(traces, cfg.batch_size, cfg.k_window, cfg.split_ratio, cfg.seed);
  RecoveryResult r = train(arch, problem, set, cfg);
  if (truth) r.rmse_theta = rmse_theta(r.theta_est, *truth);
  return r;
}

}  // namespace physrec
