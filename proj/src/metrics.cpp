#include "physrec/metrics.hpp"

#include <cmath>
#include <string>

namespace physrec {

double rmse_theta(const Vector& est, const Vector& truth) {
  if (est.size() != truth.size())
    throw ContractViolation("rmse_theta: length mismatch (" + std::to_string(est.size()) + " vs " +
                            std::to_string(truth.size()) + ")");
  if (est.size() == 0) throw ContractViolation("rmse_theta: empty coefficient vectors");
  return std::sqrt((est - truth).squaredNorm() / static_cast<double>(est.size()));
}

double rmse_y(const Matrix& est, const Matrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols())
    throw ContractViolation("rmse_y: shape mismatch");
  if (est.size() == 0) throw ContractViolation("rmse_y: empty traces");
  const Vector per_channel = ((est - truth).array().square().rowwise().sum() / static_cast<double>(est.cols())).sqrt();
  return per_channel.mean();
}

double degradation_pct(double violated, double base) {
  if (base == 0.0) throw ContractViolation("degradation_pct: base metric is zero");
  return 100.0 * (violated - base) / base;
}

}  // namespace physrec
