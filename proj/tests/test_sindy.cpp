#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "physrec/datagen.hpp"
#include "physrec/metrics.hpp"
#include "physrec/rng.hpp"
#include "physrec/sindy.hpp"
#include "test_support.hpp"

using namespace physrec;
using physrec::testing::vec;

namespace {

Matrix row_of(std::function<double(double)> f, int k, double dt) {
  Matrix x(1, k);
  for (int j = 0; j < k; ++j) x(0, j) = f(j * dt);
  return x;
}

std::set<int> support(const Vector& v) {
  std::set<int> s;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) s.insert(static_cast<int>(i));
  return s;
}

/// Sparse target with small distractor columns.
std::pair<Matrix, Vector> noisy_problem(Rng& rng, int rows, int cols) {
  Matrix A(rows, cols);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.normal();
  Vector truth = Vector::Zero(cols);
  truth[0] = 2.0;
  truth[cols / 2] = -1.0;
  Vector b = A * truth;
  for (auto& v : b) v += 0.05 * rng.normal();
  return {A, b};
}

}  // namespace

TEST(Library, RowExamples) {
  const FunctionLibrary scalar = make_library(1, 0, 2, false, false);
  EXPECT_EQ(build_library(scalar, Matrix{{2.0}}, Matrix(0, 1)), Matrix({{1.0, 2.0, 4.0}}));

  const FunctionLibrary two = make_library(2, 0, 2, false, false);
  EXPECT_EQ(build_library(two, Matrix{{1.0}, {3.0}}, Matrix(0, 1)), Matrix({{1.0, 1.0, 3.0, 1.0, 3.0, 9.0}}));
  EXPECT_EQ(two.labels(), (std::vector<std::string>{"1", "x1", "x2", "x1^2", "x1*x2", "x2^2"}));

  const FunctionLibrary ctrl = make_library(1, 1, 1, false, true);
  const Matrix row = build_library(ctrl, Matrix{{3.0}}, Matrix{{2.0}});
  bool found = false;
  for (Eigen::Index c = 0; c < row.cols(); ++c) found |= row(0, c) == 6.0;
  EXPECT_TRUE(found);
  EXPECT_EQ(row.cols(), 4);
}

TEST(Library, Errors) {
  EXPECT_THROW(make_library(1, 0, 0, false, false), ContractViolation);
  const FunctionLibrary lib = make_library(2, 1, 2, false, true);
  EXPECT_THROW(build_library(lib, Matrix::Zero(2, 5), Matrix::Zero(1, 4)), ContractViolation);
}

TEST(Derivatives, Examples) {
  const Matrix lin = estimate_derivatives(row_of([](double t) { return 3.0 + t; }, 9, 0.37), 0.37);
  EXPECT_LT((lin.array() - 1.0).abs().maxCoeff(), 1e-12);
  const Matrix quad = estimate_derivatives(row_of([](double t) { return t * t; }, 21, 0.1), 0.1);
  EXPECT_NEAR(quad(0, 10), 2.0, 1e-12);
  EXPECT_EQ(estimate_derivatives(Matrix::Constant(1, 5, 4.0), 0.1), Matrix::Zero(1, 5));
  EXPECT_THROW(estimate_derivatives(Matrix::Zero(1, 2), 0.1), ContractViolation);
}

TEST(Stridge, Examples) {
  const Vector one = stridge(Matrix::Identity(2, 2), vec({3.0, 0.001}), 0.0, 0.01, 10);
  EXPECT_NEAR(one[0], 3.0, 1e-12);
  EXPECT_EQ(one[1], 0.0);

  Rng rng(1);
  const auto [A, b] = noisy_problem(rng, 40, 5);
  const Vector ols = A.colPivHouseholderQr().solve(b);
  EXPECT_LT((stridge(A, b, 0.0, 0.0, 10) - ols).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Stridge, RecoversLinearDecay) {
  const double dt = 0.001;
  const Matrix x = row_of([](double t) { return 1.5 * std::exp(-2.0 * t); }, 2001, dt);
  const Matrix A = build_library(make_library(1, 0, 2, false, false), x, Matrix(0, x.cols()));
  const Vector coef = stridge(A, estimate_derivatives(x, dt).row(0).transpose(), 1e-6, 0.03, 10);
  EXPECT_NEAR(coef[0], 0.0, 1e-3);
  EXPECT_NEAR(coef[1], -2.0, 1e-3);
  EXPECT_NEAR(coef[2], 0.0, 1e-3);
}

TEST(Stridge, Errors) {
  EXPECT_THROW(stridge(Matrix(3, 0), Vector::Zero(3), 0.0, 0.1, 1), ContractViolation);
  EXPECT_THROW(stridge(Matrix::Identity(2, 2), Vector::Zero(3), 0.0, 0.1, 1), ContractViolation);
  EXPECT_THROW(stridge(Matrix::Identity(2, 2), Vector::Zero(2), 0.0, 0.1, 0), ContractViolation);
  Matrix dup(4, 2);
  dup.col(0) = vec({1.0, 2.0, 3.0, 4.0});
  dup.col(1) = dup.col(0);
  EXPECT_THROW(stridge(dup, vec({1.0, 1.0, 1.0, 1.0}), 0.0, 0.0, 1), NumericalFailure);
}

TEST(SindyProperties, Idempotent) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [A, b] = noisy_problem(rng, 60, 8);
    const Vector first = stridge(A, b, 1e-6, 0.05, 10);
    const std::set<int> kept = support(first);
    Matrix sub(A.rows(), static_cast<Eigen::Index>(kept.size()));
    int i = 0;
    for (int c : kept) sub.col(i++) = A.col(c);
    const Vector again = stridge(sub, b, 1e-6, 0.05, 10);
    i = 0;
    for (int c : kept) EXPECT_NEAR(again[i++], first[c], 1e-10);
  }
}

TEST(SindyProperties, MonotoneSparsity) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [A, b] = noisy_problem(rng, 30, 10);
    std::set<int> prev;
    for (int c = 0; c < 10; ++c) prev.insert(c);
    for (int iters = 1; iters <= 10; ++iters) {
      const std::set<int> cur = support(stridge(A, b, 1e-6, 0.08, iters));
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
      prev = cur;
    }
  }
}

TEST(SindyProperties, ZeroThresholdIsRidge) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [A, b] = noisy_problem(rng, 30, 6);
    const double lambda = rng.uniform(0.0, 2.0);
    // Ridge on unit-norm columns written as an augmented least-squares problem.
    const Vector norms = A.colwise().norm().transpose();
    Matrix aug = Matrix::Zero(A.rows() + A.cols(), A.cols());
    aug.topRows(A.rows()) = A * norms.cwiseInverse().asDiagonal();
    aug.bottomRows(A.cols()) = std::sqrt(lambda) * Matrix::Identity(A.cols(), A.cols());
    Vector rhs = Vector::Zero(aug.rows());
    rhs.head(A.rows()) = b;
    const Vector ridge = aug.householderQr().solve(rhs).cwiseQuotient(norms);
    EXPECT_LT((stridge(A, b, lambda, 0.0, 10) - ridge).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SindyProperties, DerivativeSecondOrder) {
  auto max_err = [](double dt) {
    const int k = static_cast<int>(std::lround(2.0 / dt)) + 1;
    const Matrix d = estimate_derivatives(row_of([](double t) { return std::sin(t); }, k, dt), dt);
    double err = 0.0;
    for (int j = 1; j + 1 < k; ++j) err = std::max(err, std::abs(d(0, j) - std::cos(j * dt)));
    return err;
  };
  for (double dt : {0.1, 0.05, 0.025}) {
    const double ratio = max_err(dt) / max_err(dt / 2);
    EXPECT_GT(ratio, 3.6);
    EXPECT_LT(ratio, 4.4);
  }
}

TEST(Sindyc, FullStateRequired) {
  const auto [spec, theta] = builtin_system("lotka_volterra");
  GenOptions opts;
  opts.traces = 1;
  opts.samples = 50;
  const Dataset ds = generate_benchmark_data(spec, theta, "lotka_volterra", 1, opts);
  Trace tr = observe(ds.traces[0], SensingMask(Eigen::Vector2i(0, 1)));
  tr.x.resize(0, 0);
  EXPECT_THROW(sindyc_recover(tr, make_library(2, 1, 2, false, true), 1e-6, 0.03), ContractViolation);
}

TEST(Sindyc, MapsLotkaVolterraTerms) {
  const auto [spec, theta] = builtin_system("lotka_volterra");
  const FunctionLibrary lib = make_library(2, 1, 2, false, true, spec.state_names, spec.input_names);
  SparseModel model;
  model.labels = lib.labels();
  model.Xi = Matrix::Zero(lib.size(), 2);
  const auto col = [&](const std::string& label) {
    const auto labels = lib.labels();
    return static_cast<int>(std::find(labels.begin(), labels.end(), label) - labels.begin());
  };
  const std::string x1 = spec.state_names[0], x2 = spec.state_names[1], u = spec.input_names[0];
  model.Xi(col(x1), 0) = 0.5;
  model.Xi(col(x1 + "*" + x2), 0) = -0.025;
  model.Xi(col(x2), 1) = -0.5;
  model.Xi(col(x1 + "*" + x2), 1) = 0.005;
  model.Xi(col(u), 1) = 1.0;
  model.Xi(col(x2 + "^2"), 0) = 0.2;
  const ThetaMapping m = map_to_theta(model, lib, spec, theta);
  EXPECT_LT((m.theta - theta).cwiseAbs().maxCoeff(), 1e-12);
  ASSERT_EQ(m.spurious.size(), 1u);
  EXPECT_DOUBLE_EQ(m.spurious[0], 0.2);
  const double expect = std::sqrt(0.2 * 0.2 / (theta.size() + 1));
  EXPECT_NEAR(sindy_rmse_theta(m, theta), expect, 1e-12);
}
