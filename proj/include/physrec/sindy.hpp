#ifndef PHYSREC_SINDY_HPP
#define PHYSREC_SINDY_HPP

// Sparse regression baseline with control inputs.

#include <string>
#include <vector>

#include "physrec/dynamics.hpp"
#include "physrec/signal.hpp"

namespace physrec {

/// A monomial column: state exponents, an optional input factor, or a trig feature.
struct LibraryColumn {
  std::vector<int> powers;  ///< exponent per state
  int input = -1;
  FactorFn trig = FactorFn::pow;  ///< sin/cos columns use `trig_var`
  int trig_var = -1;
  std::string label;
};

struct FunctionLibrary {
  int n = 0;
  int m = 0;
  int degree = 2;
  bool trig = false;
  /// Adds input x state-monomial columns; plain input columns are always present.
  bool control_cross = true;
  std::vector<LibraryColumn> columns;

  std::vector<std::string> labels() const;
  int size() const { return static_cast<int>(columns.size()); }
};

/// Column order: 1, degree-1 monomials, degree-2 monomials (x1^2, x1*x2, ...), ..., then
/// sin/cos features, then u_j followed by u_j times each non-constant state monomial.
FunctionLibrary make_library(int n, int m, int degree, bool trig, bool control_cross,
                             const std::vector<std::string>& state_names = {},
                             const std::vector<std::string>& input_names = {});

/// k x columns design matrix. `x` is n x k, `u` is m x k.
Matrix build_library(const FunctionLibrary& lib, const Matrix& x, const Matrix& u);

/// Central differences inside, second-order one-sided at the ends. Uses the full state when present.
Matrix estimate_derivatives(const Trace& tr);
Matrix estimate_derivatives(const Matrix& x, double dt);

/// Sequential thresholded ridge regression on unit-norm columns. A column is pruned when its share of
/// the target, |coef| * |A_c| / |b|, falls below `threshold`.
Vector stridge(const Matrix& A, const Vector& b, double lambda, double threshold, int iters);

struct SparseModel {
  Matrix Xi;  ///< columns x n
  std::vector<std::string> labels;
  double threshold = 0.0;
};

SparseModel sindyc_recover(const Trace& tr, const FunctionLibrary& lib, double lambda, double threshold,
                           int iters = 10);

/// Coefficient estimates read off a sparse model.
struct ThetaMapping {
  Vector theta;
  /// Nonzero entries of Xi that no term of the system explains.
  std::vector<double> spurious;
  std::vector<std::string> spurious_labels;
};

/// Least-squares fit of the system's coefficient-bearing cells; coefficients with fit = false
/// keep `fixed` values.
ThetaMapping map_to_theta(const SparseModel& model, const FunctionLibrary& lib, const SystemSpec& spec,
                          const Vector& fixed);

/// RMSE over the p coefficients plus each spurious term (truth 0).
double sindy_rmse_theta(const ThetaMapping& mapping, const Vector& truth);

}  // namespace physrec

#endif  // PHYSREC_SINDY_HPP
