#pragma once

#include <vector>

#include "ipo/common.hpp"

namespace ipo {

/// Exponentially weighted moving-average settings. The seed covariance is the
/// sample covariance of the first `burn_in` returns (burn_in >= d_z + 1 so the
/// seed is generically full rank).
struct EwmaConfig {
  double decay = 0.94;
  Index burn_in = 0;
};

void validate(const EwmaConfig& cfg, Index d_z);

/// Covariance series aligned to the input days: covs[k] is the estimate
/// through day first_day + k (0-based), so the estimate for day t uses only
/// returns up to and including t.
struct CovarianceSeries {
  Index first_day = 0;
  std::vector<Matrix> covs;

  const Matrix& at_day(Index day) const { return covs.at(static_cast<std::size_t>(day - first_day)); }
};

/// Zero-mean EWMA recursion V_t = decay V_{t-1} + (1 - decay) y_t y_t',
/// seeded with the burn-in sample covariance. Estimates whose condition
/// number exceeds 1e12 are jittered by 1e-10 tr(V)/d_z on the diagonal and a
/// warning is written to stderr.
CovarianceSeries ewma_covariance(const std::vector<Vector>& returns, const EwmaConfig& cfg);

/// Unbiased sample covariance, 1/(s-1) sum (y - ybar)(y - ybar)'.
Matrix sample_covariance(const std::vector<Vector>& returns);

}  // namespace ipo
