#include "physrec/sindy.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "physrec/metrics.hpp"

namespace physrec {

namespace {

std::string name_of(const std::vector<std::string>& names, int i, const char* prefix) {
  return i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : prefix + std::to_string(i + 1);
}

std::string monomial_label(const std::vector<int>& powers, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < powers.size(); ++i) {
    if (powers[i] == 0) continue;
    if (!out.empty()) out += '*';
    out += name_of(names, static_cast<int>(i), "x");
    if (powers[i] > 1) out += '^' + std::to_string(powers[i]);
  }
  return out.empty() ? "1" : out;
}

/// Exponent vectors of total degree `deg`, ordered like combinations with replacement.
void monomials_of_degree(int n, int deg, int start, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (deg == 0) {
    out.push_back(cur);
    return;
  }
  for (int i = start; i < n; ++i) {
    ++cur[static_cast<std::size_t>(i)];
    monomials_of_degree(n, deg - 1, i, cur, out);
    --cur[static_cast<std::size_t>(i)];
  }
}

double column_value(const LibraryColumn& c, const Matrix& x, const Matrix& u, Eigen::Index j) {
  double v = 1.0;
  if (c.trig_var >= 0) {
    const double s = x(c.trig_var, j);
    v = c.trig == FactorFn::sin ? std::sin(s) : std::cos(s);
  }
  for (std::size_t i = 0; i < c.powers.size(); ++i)
    for (int p = 0; p < c.powers[i]; ++p) v *= x(static_cast<Eigen::Index>(i), j);
  if (c.input >= 0) v *= u(c.input, j);
  return v;
}

}  // namespace

std::vector<std::string> FunctionLibrary::labels() const {
  std::vector<std::string> out;
  for (const auto& c : columns) out.push_back(c.label);
  return out;
}

FunctionLibrary make_library(int n, int m, int degree, bool trig, bool control_cross,
                             const std::vector<std::string>& state_names, const std::vector<std::string>& input_names) {
  if (degree < 1) throw ContractViolation("make_library: degree must be >= 1");
  if (n < 1 || m < 0) throw ContractViolation("make_library: need n >= 1 and m >= 0");
  FunctionLibrary lib;
  lib.n = n;
  lib.m = m;
  lib.degree = degree;
  lib.trig = trig;
  lib.control_cross = control_cross;
  std::vector<std::vector<int>> monos;
  std::vector<int> cur(static_cast<std::size_t>(n), 0);
  for (int d = 0; d <= degree; ++d) monomials_of_degree(n, d, 0, cur, monos);
  for (const auto& p : monos) lib.columns.push_back({p, -1, FactorFn::pow, -1, monomial_label(p, state_names)});
  if (trig) {
    for (int i = 0; i < n; ++i)
      for (FactorFn fn : {FactorFn::sin, FactorFn::cos}) {
        const std::string f = fn == FactorFn::sin ? "sin(" : "cos(";
        lib.columns.push_back({std::vector<int>(static_cast<std::size_t>(n), 0), -1, fn, i,
                               f + name_of(state_names, i, "x") + ")"});
      }
  }
  for (int j = 0; j < m; ++j) {
    const std::string un = name_of(input_names, j, "u");
    lib.columns.push_back({std::vector<int>(static_cast<std::size_t>(n), 0), j, FactorFn::pow, -1, un});
    if (!control_cross) continue;
    for (std::size_t c = 1; c < monos.size(); ++c)
      lib.columns.push_back({monos[c], j, FactorFn::pow, -1, monomial_label(monos[c], state_names) + "*" + un});
  }
  return lib;
}

Matrix build_library(const FunctionLibrary& lib, const Matrix& x, const Matrix& u) {
  if (x.rows() != lib.n) throw ContractViolation("build_library: state rows differ from library");
  if (lib.m > 0 && (u.rows() != lib.m || u.cols() != x.cols()))
    throw ContractViolation("build_library: input samples must match state samples");
  Matrix A(x.cols(), lib.size());
  for (int c = 0; c < lib.size(); ++c)
    for (Eigen::Index j = 0; j < x.cols(); ++j) A(j, c) = column_value(lib.columns[static_cast<std::size_t>(c)], x, u, j);
  return A;
}

Matrix estimate_derivatives(const Matrix& x, double dt) {
  if (x.cols() < 3) throw ContractViolation("estimate_derivatives: need at least 3 samples");
  if (!(dt > 0.0)) throw ContractViolation("estimate_derivatives: dt must be positive");
  const Eigen::Index k = x.cols();
  Matrix d(x.rows(), k);
  d.col(0) = (-3.0 * x.col(0) + 4.0 * x.col(1) - x.col(2)) / (2.0 * dt);
  for (Eigen::Index j = 1; j + 1 < k; ++j) d.col(j) = (x.col(j + 1) - x.col(j - 1)) / (2.0 * dt);
  d.col(k - 1) = (3.0 * x.col(k - 1) - 4.0 * x.col(k - 2) + x.col(k - 3)) / (2.0 * dt);
  return d;
}

Matrix estimate_derivatives(const Trace& tr) {
  return estimate_derivatives(tr.x.size() > 0 ? tr.x : tr.y, tr.dt);
}

Vector stridge(const Matrix& A, const Vector& b, double lambda, double threshold, int iters) {
  if (A.cols() < 1) throw ContractViolation("stridge: design matrix has no columns");
  if (A.rows() != b.size()) throw ContractViolation("stridge: row count differs from target length");
  if (iters < 1) throw ContractViolation("stridge: iters must be >= 1");
  if (lambda < 0.0 || threshold < 0.0) throw ContractViolation("stridge: lambda and threshold must be >= 0");
  const Vector norms = A.colwise().norm().transpose();
  // Threshold on each column's share of the target: |coef_c| * |A_c| / |b|.
  const double bnorm = b.norm() > 0.0 ? b.norm() : 1.0;
  std::vector<int> active;
  for (Eigen::Index c = 0; c < A.cols(); ++c)
    if (norms[c] > 0.0) active.push_back(static_cast<int>(c));
  Vector coef = Vector::Zero(A.cols());
  for (int it = 0; it < iters && !active.empty(); ++it) {
    const auto na = static_cast<Eigen::Index>(active.size());
    Matrix An(A.rows(), na);
    for (Eigen::Index i = 0; i < na; ++i) An.col(i) = A.col(active[static_cast<std::size_t>(i)]) / norms[active[static_cast<std::size_t>(i)]];
    const Matrix G = An.transpose() * An + lambda * Matrix::Identity(na, na);
    const Eigen::LDLT<Matrix> ldlt(G);
    // rcond() misses exact zero pivots, so the pivot spread is checked as well.
    const Vector piv = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14 ||
        piv.minCoeff() <= 1e-13 * piv.maxCoeff())
      throw NumericalFailure("stridge: singular restricted system with " + std::to_string(na) + " columns");
    const Vector w = ldlt.solve(An.transpose() * b);
    coef.setZero();
    std::vector<int> keep;
    for (Eigen::Index i = 0; i < na; ++i) {
      const int c = active[static_cast<std::size_t>(i)];
      coef[c] = w[i] / norms[c];
      if (std::abs(w[i]) >= threshold * bnorm) keep.push_back(c);
    }
    if (keep.size() == active.size()) return coef;
    active = std::move(keep);
  }
  for (Eigen::Index c = 0; c < coef.size(); ++c)
    if (std::abs(coef[c]) * norms[c] < threshold * bnorm ||
        std::find(active.begin(), active.end(), static_cast<int>(c)) == active.end())
      coef[c] = 0.0;
  return coef;
}

SparseModel sindyc_recover(const Trace& tr, const FunctionLibrary& lib, double lambda, double threshold, int iters) {
  validate(tr);
  const Matrix& x = tr.x.size() > 0 ? tr.x : tr.y;
  if (x.rows() != lib.n)
    throw ContractViolation("sindyc_recover: needs the full state (" + std::to_string(lib.n) + " channels), trace has " +
                            std::to_string(x.rows()));
  const Matrix dx = estimate_derivatives(x, tr.dt);
  const Matrix A = build_library(lib, x, tr.u);
  SparseModel model;
  model.labels = lib.labels();
  model.threshold = threshold;
  model.Xi = Matrix::Zero(lib.size(), lib.n);
  for (int s = 0; s < lib.n; ++s) model.Xi.col(s) = stridge(A, dx.row(s).transpose(), lambda, threshold, iters);
  return model;
}

namespace {

/// Library column holding the term's state dependence, or -1.
int column_for(const FunctionLibrary& lib, const Term& t) {
  std::vector<int> powers(static_cast<std::size_t>(lib.n), 0);
  int trig_var = -1;
  FactorFn trig = FactorFn::pow;
  for (const auto& f : t.factors) {
    if (f.fn == FactorFn::pow) {
      powers[static_cast<std::size_t>(f.var)] += f.power;
    } else {
      if (trig_var >= 0 || f.power != 1) return -1;
      trig_var = f.var;
      trig = f.fn;
    }
  }
  for (int c = 0; c < lib.size(); ++c) {
    const auto& col = lib.columns[static_cast<std::size_t>(c)];
    if (col.powers == powers && col.input == t.input && col.trig_var == trig_var && (trig_var < 0 || col.trig == trig))
      return c;
  }
  return -1;
}

}  // namespace

ThetaMapping map_to_theta(const SparseModel& model, const FunctionLibrary& lib, const SystemSpec& spec,
                          const Vector& fixed) {
  if (model.Xi.rows() != lib.size() || model.Xi.cols() != spec.n) throw ContractViolation("map_to_theta: model shape differs");
  if (fixed.size() != spec.p()) throw ContractViolation("map_to_theta: fixed vector has wrong length");
  // cell (column, state) -> linear equation  sum_c a_c theta_c = Xi - offset
  struct Cell {
    std::map<int, double> a;
    double offset = 0.0;
    bool nonlinear = false;
  };
  std::map<std::pair<int, int>, Cell> cells;
  std::vector<const Term*> terms;
  for (const auto& t : spec.f_terms) terms.push_back(&t);
  for (const auto& t : spec.g_terms) terms.push_back(&t);
  for (const Term* t : terms) {
    const int col = column_for(lib, *t);
    if (col < 0) continue;
    Cell& cell = cells[{col, t->state}];
    std::vector<int> free_coeffs;
    double gain = t->gain;
    for (int c : t->coeffs) {
      if (spec.coeffs[static_cast<std::size_t>(c)].fit)
        free_coeffs.push_back(c);
      else
        gain *= fixed[c];
    }
    if (free_coeffs.empty())
      cell.offset += gain;
    else if (free_coeffs.size() == 1)
      cell.a[free_coeffs.front()] += gain;
    else
      cell.nonlinear = true;
  }
  std::vector<std::pair<std::map<int, double>, double>> rows;
  for (const auto& [key, cell] : cells) {
    if (cell.nonlinear || cell.a.empty()) continue;
    rows.emplace_back(cell.a, model.Xi(key.first, key.second) - cell.offset);
  }
  ThetaMapping out;
  out.theta = fixed;
  const std::vector<int> fit = spec.fitted_indices();
  if (!rows.empty() && !fit.empty()) {
    std::map<int, Eigen::Index> pos;
    for (std::size_t i = 0; i < fit.size(); ++i) pos[fit[i]] = static_cast<Eigen::Index>(i);
    Matrix M = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(fit.size()));
    Vector v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (const auto& [c, g] : rows[r].first) M(static_cast<Eigen::Index>(r), pos.at(c)) = g;
      v[static_cast<Eigen::Index>(r)] = rows[r].second;
    }
    const Vector sol = M.completeOrthogonalDecomposition().solve(v);
    for (std::size_t i = 0; i < fit.size(); ++i) out.theta[fit[i]] = sol[static_cast<Eigen::Index>(i)];
  }
  for (Eigen::Index c = 0; c < model.Xi.rows(); ++c)
    for (Eigen::Index s = 0; s < model.Xi.cols(); ++s) {
      if (model.Xi(c, s) == 0.0 || cells.count({static_cast<int>(c), static_cast<int>(s)})) continue;
      out.spurious.push_back(model.Xi(c, s));
      out.spurious_labels.push_back("d" + (s < static_cast<Eigen::Index>(spec.state_names.size())
                                               ? spec.state_names[static_cast<std::size_t>(s)]
                                               : "x" + std::to_string(s + 1)) +
                                    "/dt:" + model.labels[static_cast<std::size_t>(c)]);
    }
  return out;
}

double sindy_rmse_theta(const ThetaMapping& mapping, const Vector& truth) {
  if (mapping.theta.size() != truth.size()) throw ContractViolation("sindy_rmse_theta: length mismatch");
  const auto ns = static_cast<Eigen::Index>(mapping.spurious.size());
  Vector est(truth.size() + ns), ref = Vector::Zero(truth.size() + ns);
  est.head(truth.size()) = mapping.theta;
  ref.head(truth.size()) = truth;
  for (Eigen::Index i = 0; i < ns; ++i) est[truth.size() + i] = mapping.spurious[static_cast<std::size_t>(i)];
  return rmse_theta(est, ref);
}

}  // namespace physrec
