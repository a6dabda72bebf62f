#include "ipo/panel.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

namespace ipo {

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

namespace {

void check_spd(const Matrix& v, const char* name, Index record) {
  if (!is_symmetric(v)) {
    std::ostringstream os;
    os << "panel: " << name << " of record " << record << " is not symmetric within 1e-12";
    throw PanelError(os.str());
  }
  Eigen::LLT<Matrix> llt(v);
  if (llt.info() != Eigen::Success) {
    std::ostringstream os;
    os << "panel: " << name << " of record " << record
       << " is not positive definite (Cholesky failed)";
    throw PanelError(os.str());
  }
}

}  // namespace

ObservationPanel::ObservationPanel(std::vector<Observation> observations)
    : obs_(std::move(observations)) {
  if (obs_.empty()) throw PanelError("panel: needs at least one observation");
  d_x_ = obs_.front().x.size();
  d_z_ = obs_.front().y.size();
  has_v_true_ = obs_.front().v_true.has_value();
  for (std::size_t i = 0; i < obs_.size(); ++i) {
    const Observation& o = obs_[i];
    const Index rec = static_cast<Index>(i);
    if (o.x.size() != d_x_ || o.y.size() != d_z_)
      throw PanelError("panel: record " + std::to_string(i) + " has inconsistent dimensions");
    if (o.v_hat.rows() != d_z_ || o.v_hat.cols() != d_z_)
      throw PanelError("panel: record " + std::to_string(i) + " has misshapen v_hat");
    check_spd(o.v_hat, "v_hat", rec);
    if (o.v_true.has_value() != has_v_true_)
      throw PanelError("panel: v_true must be present for all records or none");
    if (o.v_true) {
      if (o.v_true->rows() != d_z_ || o.v_true->cols() != d_z_)
        throw PanelError("panel: record " + std::to_string(i) + " has misshapen v_true");
      check_spd(*o.v_true, "v_true", rec);
    }
    if (!o.x.allFinite() || !o.y.allFinite())
      throw PanelError("panel: record " + std::to_string(i) + " has non-finite entries");
  }
}

DesignMask::DesignMask(Matrix entries) : entries_(std::move(entries)) {
  const Index d_z = entries_.rows();
  const Index d_x = entries_.cols();
  if (d_z == 0 || d_x == 0) throw PanelError("design mask: empty matrix");
  feature_sets_.resize(static_cast<std::size_t>(d_z));
  for (Index j = 0; j < d_z; ++j) {
    for (Index k = 0; k < d_x; ++k) {
      const double e = entries_(j, k);
      if (e != 0.0 && e != 1.0)
        throw PanelError("design mask: entries must be 0 or 1");
      if (e == 1.0) feature_sets_[static_cast<std::size_t>(j)].push_back(k);
    }
  }
  for (Index k = 0; k < d_x; ++k) {
    if (entries_.col(k).sum() == 0.0)
      throw PanelError("design mask: feature " + std::to_string(k) + " feeds no asset");
  }
}

DesignMask DesignMask::identity(Index d) { return DesignMask(Matrix::Identity(d, d)); }

DesignMask DesignMask::block(Index d_z, Index per_asset) {
  Matrix P = Matrix::Zero(d_z, d_z * per_asset);
  for (Index j = 0; j < d_z; ++j)
    for (Index k = 0; k < per_asset; ++k) P(j, j * per_asset + k) = 1.0;
  return DesignMask(std::move(P));
}

std::string to_string(EstimatorTag tag) {
  switch (tag) {
    case EstimatorTag::Ols: return "OLS";
    case EstimatorTag::IpoUnconstrained: return "IPO-UNCON";
    case EstimatorTag::IpoEquality: return "IPO-EQ";
    case EstimatorTag::IpoGrad: return "IPO-GRAD";
    case EstimatorTag::IpoUnbiased: return "IPO-UNBIASED";
  }
  return "?";
}

void validate(const Coefficients& coef) {
  if (!coef.theta.allFinite()) throw PanelError("coefficients: theta has non-finite entries");
  if (coef.std_err) {
    if (coef.std_err->size() != coef.theta.size())
      throw PanelError("coefficients: std_err length mismatch");
    if ((coef.std_err->array() < 0.0).any())
      throw PanelError("coefficients: std_err must be nonnegative");
  }
}

FeasibleRegion FeasibleRegion::unconstrained(Index d_z, double delta) {
  if (delta <= 0.0) throw PanelError("region: delta must be positive");
  if (d_z <= 0) throw PanelError("region: asset dimension must be positive");
  FeasibleRegion r;
  r.kind_ = RegionKind::Unconstrained;
  r.d_z_ = d_z;
  r.delta_ = delta;
  r.A_ = Matrix::Zero(0, d_z);
  r.b_ = Vector::Zero(0);
  r.G_ = Matrix::Zero(0, d_z);
  r.h_ = Vector::Zero(0);
  return r;
}

namespace {

// Consistency and nullity checks shared by the equality and inequality
// factories. Uses a complete orthogonal decomposition so redundant but
// consistent rows are accepted.
void check_equality_system(const Matrix& A, const Vector& b) {
  if (A.rows() != b.size()) throw PanelError("region: A and b row mismatch");
  if (A.rows() == 0) return;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  const Index rank = cod.rank();
  if (rank >= A.cols())
    throw PanelError("region: equality system leaves no degrees of freedom (nullity 0)");
  const Vector z0 = cod.solve(b);
  const double scale = 1.0 + b.cwiseAbs().maxCoeff();
  if ((A * z0 - b).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw InfeasibleError("region: equality system A z = b is inconsistent");
}

}  // namespace

FeasibleRegion FeasibleRegion::equality(Matrix A, Vector b, double delta) {
  if (delta <= 0.0) throw PanelError("region: delta must be positive");
  if (A.rows() == 0) throw PanelError("region: equality region needs at least one row");
  check_equality_system(A, b);
  FeasibleRegion r;
  r.kind_ = RegionKind::Equality;
  r.d_z_ = A.cols();
  r.delta_ = delta;
  r.A_ = std::move(A);
  r.b_ = std::move(b);
  r.G_ = Matrix::Zero(0, r.d_z_);
  r.h_ = Vector::Zero(0);
  return r;
}

// Defined in solver.cpp: requires the QP machinery for the feasibility solve.
FeasibleRegion make_inequality_region(Matrix A, Vector b, Matrix G, Vector h, double delta);

FeasibleRegion FeasibleRegion::inequality(Matrix A, Vector b, Matrix G, Vector h,
                                          double delta) {
  if (delta <= 0.0) throw PanelError("region: delta must be positive");
  if (G.rows() == 0) throw PanelError("region: inequality region needs at least one row");
  if (G.rows() != h.size()) throw PanelError("region: G and h row mismatch");
  if (A.rows() > 0 && A.cols() != G.cols())
    throw PanelError("region: A and G column mismatch");
  if (A.rows() > 0) check_equality_system(A, b);
  FeasibleRegion r = make_inequality_region(std::move(A), std::move(b), std::move(G),
                                            std::move(h), delta);
  return r;
}

// make_inequality_region fills in a validated FeasibleRegion; this hook lets
// solver.cpp construct the object after its feasibility solve.
FeasibleRegion detail_make_region(RegionKind kind, Index d_z, double delta, Matrix A,
                                  Vector b, Matrix G, Vector h) {
  FeasibleRegion r;
  r.kind_ = kind;
  r.d_z_ = d_z;
  r.delta_ = delta;
  r.A_ = std::move(A);
  r.b_ = std::move(b);
  r.G_ = std::move(G);
  r.h_ = std::move(h);
  return r;
}

FeasibleRegion FeasibleRegion::market_neutral_box(Index d_z, double gamma, double delta) {
  Matrix A = Matrix::Ones(1, d_z);
  Vector b = Vector::Zero(1);
  Matrix G(2 * d_z, d_z);
  G << Matrix::Identity(d_z, d_z), -Matrix::Identity(d_z, d_z);
  Vector h = Vector::Constant(2 * d_z, gamma);
  return inequality(std::move(A), std::move(b), std::move(G), std::move(h), delta);
}

FeasibleRegion FeasibleRegion::box(Index d_z, double gamma, double delta) {
  Matrix G(2 * d_z, d_z);
  G << Matrix::Identity(d_z, d_z), -Matrix::Identity(d_z, d_z);
  Vector h = Vector::Constant(2 * d_z, gamma);
  return inequality(Matrix::Zero(0, d_z), Vector::Zero(0), std::move(G), std::move(h), delta);
}

Vector predict_returns(const Vector& x, const DesignMask& P, const Coefficients& theta) {
  if (x.size() != P.feature_dim() || theta.theta.size() != P.feature_dim())
    throw PanelError("predict_returns: dimension mismatch");
  return P.entries() * x.cwiseProduct(theta.theta);
}

double mvo_cost(const Vector& z, const Vector& y, const Matrix& V, double delta) {
  if (delta <= 0.0) throw PanelError("mvo_cost: delta must be positive");
  if (z.size() != y.size() || V.rows() != z.size() || V.cols() != z.size())
    throw PanelError("mvo_cost: dimension mismatch");
  return -z.dot(y) + 0.5 * delta * z.dot(V * z);
}

ResidualCovariance residual_covariance(const ObservationPanel& panel, const DesignMask& P,
                                       const Coefficients& theta) {
  const Index m = panel.size();
  if (m < 2) throw InsufficientSampleError("residual_covariance: needs m >= 2");
  const Index d_z = panel.asset_dim();
  Matrix sigma = Matrix::Zero(d_z, d_z);
  for (Index i = 0; i < m; ++i) {
    const Observation& o = panel[i];
    const Vector r = o.y - predict_returns(o.x, P, theta);
    sigma.noalias() += r * r.transpose();
  }
  sigma /= static_cast<double>(m - 1);
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  return ResidualCovariance{std::move(sigma)};
}

}  // namespace ipo
