#ifndef PHYSREC_METRICS_HPP
#define PHYSREC_METRICS_HPP

#include "physrec/dynamics.hpp"

namespace physrec {

/// sqrt(mean((est - truth)^2)) over the coefficient vector.
double rmse_theta(const Vector& est, const Vector& truth);

/// Mean over channels (rows) of each channel's RMSE over samples (columns).
double rmse_y(const Matrix& est, const Matrix& truth);

/// 100 (violated - base) / base. Throws ContractViolation when base is zero.
double degradation_pct(double violated, double base);

}  // namespace physrec

#endif  // PHYSREC_METRICS_HPP
