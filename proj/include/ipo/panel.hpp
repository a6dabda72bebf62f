#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ipo/common.hpp"

namespace ipo {

/// One aligned record: feature vector, realized excess returns, and the
/// covariance estimate available at decision time. `v_true` carries the
/// ground-truth covariance in simulations and is absent on market data.
struct Observation {
  Vector x;
  Vector y;
  Matrix v_hat;
  std::optional<Matrix> v_true;
};

/// Immutable panel of observations sharing one (d_x, d_z) shape. Every
/// covariance is checked symmetric (1e-12) and positive definite at
/// construction; bad inputs fail loudly because downstream estimators
/// divide by them.
class ObservationPanel {
 public:
  explicit ObservationPanel(std::vector<Observation> observations);

  Index size() const { return static_cast<Index>(obs_.size()); }
  Index feature_dim() const { return d_x_; }
  Index asset_dim() const { return d_z_; }
  bool has_v_true() const { return has_v_true_; }

  const Observation& operator[](Index i) const { return obs_[static_cast<std::size_t>(i)]; }
  const std::vector<Observation>& observations() const { return obs_; }

 private:
  std::vector<Observation> obs_;
  Index d_x_ = 0;
  Index d_z_ = 0;
  bool has_v_true_ = false;
};

/// Binary feature-to-asset assignment P (d_z x d_x). Row j has ones exactly
/// at the feature indices of asset j; every feature feeds at least one asset.
class DesignMask {
 public:
  explicit DesignMask(Matrix entries);

  /// P = I: one feature per asset, same ordering.
  static DesignMask identity(Index d);

  /// Contiguous blocks: asset j owns features [j*per_asset, (j+1)*per_asset).
  static DesignMask block(Index d_z, Index per_asset);

  const Matrix& entries() const { return entries_; }
  Index asset_dim() const { return entries_.rows(); }
  Index feature_dim() const { return entries_.cols(); }

  /// Feature indices a(j) of asset j.
  const std::vector<Index>& assets_features(Index j) const {
    return feature_sets_[static_cast<std::size_t>(j)];
  }

 private:
  Matrix entries_;
  std::vector<std::vector<Index>> feature_sets_;
};

enum class EstimatorTag { Ols, IpoUnconstrained, IpoEquality, IpoGrad, IpoUnbiased };

std::string to_string(EstimatorTag tag);

/// Regression parameter with optional standard errors.
struct Coefficients {
  Vector theta;
  std::optional<Vector> std_err;
  EstimatorTag tag = EstimatorTag::Ols;
};

/// Throws PanelError unless theta is finite and std_err (when present) is
/// the same length and elementwise nonnegative.
void validate(const Coefficients& coef);

enum class RegionKind { Unconstrained, Equality, Inequality };

/// Feasible region of the decision program together with its risk aversion.
/// Equality regions require a consistent system A z = b with nontrivial
/// nullspace. Inequality regions additionally carry G z <= h and are checked
/// nonempty by a feasibility solve at construction.
class FeasibleRegion {
 public:
  static FeasibleRegion unconstrained(Index d_z, double delta);
  static FeasibleRegion equality(Matrix A, Vector b, double delta);
  static FeasibleRegion inequality(Matrix A, Vector b, Matrix G, Vector h, double delta);

  /// Sum-to-zero equality plus symmetric box |z_j| <= gamma.
  static FeasibleRegion market_neutral_box(Index d_z, double gamma, double delta);

  /// Box |z_j| <= gamma with no equality rows.
  static FeasibleRegion box(Index d_z, double gamma, double delta);

  RegionKind kind() const { return kind_; }
  Index asset_dim() const { return d_z_; }
  double delta() const { return delta_; }
  const Matrix& A() const { return A_; }
  const Vector& b() const { return b_; }
  const Matrix& G() const { return G_; }
  const Vector& h() const { return h_; }
  Index num_equalities() const { return A_.rows(); }
  Index num_inequalities() const { return G_.rows(); }

 private:
  FeasibleRegion() = default;

  // Assembly hook for the inequality factory, which lives with the solver
  // because construction runs a feasibility solve.
  friend FeasibleRegion detail_make_region(RegionKind kind, Index d_z, double delta,
                                           Matrix A, Vector b, Matrix G, Vector h);

  RegionKind kind_ = RegionKind::Unconstrained;
  Index d_z_ = 0;
  double delta_ = 1.0;
  Matrix A_;  // d_eq x d_z (possibly 0 rows)
  Vector b_;
  Matrix G_;  // d_iq x d_z (possibly 0 rows)
  Vector h_;
};

/// Unbiased sample covariance of regression residuals.
struct ResidualCovariance {
  Matrix sigma_hat;
};

/// yhat = P diag(x) theta.
Vector predict_returns(const Vector& x, const DesignMask& P, const Coefficients& theta);

/// -z'y + (delta/2) z'Vz.
double mvo_cost(const Vector& z, const Vector& y, const Matrix& V, double delta);

/// Sigma_hat = 1/(m-1) sum_i r_i r_i' with r_i = y_i - P diag(x_i) theta.
ResidualCovariance residual_covariance(const ObservationPanel& panel, const DesignMask& P,
                                       const Coefficients& theta);

/// Symmetry check helper shared by panel and covariance validation.
bool is_symmetric(const Matrix& m, double tol = 1e-12);

}  // namespace ipo
