#include "ipo/covariance.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <iostream>

#include "ipo/panel.hpp"

namespace ipo {

void validate(const EwmaConfig& cfg, Index d_z) {
  if (!(cfg.decay > 0.0 && cfg.decay < 1.0))
    throw PanelError("ewma: decay must lie in (0, 1)");
  if (cfg.burn_in < d_z + 1)
    throw PanelError("ewma: burn_in must be at least d_z + 1");
}

Matrix sample_covariance(const std::vector<Vector>& returns) {
  const Index s = static_cast<Index>(returns.size());
  if (s < 2) throw InsufficientSampleError("sample_covariance: needs at least 2 observations");
  const Index d = returns.front().size();
  Vector mean = Vector::Zero(d);
  for (const Vector& r : returns) {
    if (r.size() != d) throw PanelError("sample_covariance: inconsistent dimensions");
    mean += r;
  }
  mean /= static_cast<double>(s);
  Matrix cov = Matrix::Zero(d, d);
  for (const Vector& r : returns) {
    const Vector c = r - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(s - 1);
  return 0.5 * (cov + cov.transpose()).eval();
}

namespace {

// Jitter near-singular estimates so downstream inverses stay usable.
void condition_jitter(Matrix& v, Index day) {
  const Index d = v.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(v, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0 || hi / lo > 1e12) {
    const double eps = 1e-10 * v.trace() / static_cast<double>(d);
    v += eps * Matrix::Identity(d, d);
    std::cerr << "warning: ewma covariance at day " << day
              << " is ill-conditioned; added jitter " << eps << "\n";
  }
}

}  // namespace

CovarianceSeries ewma_covariance(const std::vector<Vector>& returns, const EwmaConfig& cfg) {
  const Index n = static_cast<Index>(returns.size());
  if (n == 0) throw InsufficientSampleError("ewma: empty return series");
  const Index d = returns.front().size();
  validate(cfg, d);
  if (n < cfg.burn_in + 1)
    throw InsufficientSampleError("ewma: series shorter than burn_in + 1");

  std::vector<Vector> seed_window(returns.begin(), returns.begin() + cfg.burn_in);
  Matrix v = sample_covariance(seed_window);
  {
    Eigen::LLT<Matrix> llt(v);
    if (llt.info() != Eigen::Success)
      throw PanelError("ewma: singular seed covariance over the burn-in window");
  }

  CovarianceSeries out;
  out.first_day = cfg.burn_in - 1;
  out.covs.reserve(static_cast<std::size_t>(n - cfg.burn_in + 1));
  condition_jitter(v, out.first_day);
  out.covs.push_back(v);
  for (Index t = cfg.burn_in; t < n; ++t) {
    const Vector& y = returns[static_cast<std::size_t>(t)];
    if (y.size() != d) throw PanelError("ewma: inconsistent return dimensions");
    v = cfg.decay * v + (1.0 - cfg.decay) * (y * y.transpose());
    v = 0.5 * (v + v.transpose()).eval();
    condition_jitter(v, t);
    out.covs.push_back(v);
  }
  return out;
}

}  // namespace ipo
