#include "ipo/estimators.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <sstream>

#include "internal/cov_ops.hpp"

namespace ipo {
namespace {

// Uniqueness of v_true mirrors the v_hat deduplication in cov_ops.
bool single_v_true(const ObservationPanel& panel) {
  for (Index i = 1; i < panel.size(); ++i) {
    if (!(*panel[i].v_true == *panel[i - 1].v_true)) return false;
  }
  return true;
}

Eigen::LLT<Matrix> checked_llt(const Matrix& m, const char* who) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw EstimationError(std::string(who) + ": matrix is not positive definite");
  return llt;
}

// Cholesky of H with the diagnostic the failure mode calls for: H is singular
// exactly when some feature column is zero across every observation.
Eigen::LLT<Matrix> factor_h(const Matrix& H) {
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() == Eigen::Success) return llt;
  std::ostringstream os;
  os << "solve_ipo: H is singular";
  const double scale = H.diagonal().maxCoeff();
  bool any = false;
  for (Index k = 0; k < H.rows(); ++k) {
    if (H(k, k) <= 1e-14 * scale) {
      os << (any ? "," : "; zero-feature columns:") << " " << k;
      any = true;
    }
  }
  if (!any) os << " (no all-nonzero-feature observation)";
  throw EstimationError(os.str());
}

void require_v_true(const ObservationPanel& panel, const char* who) {
  if (!panel.has_v_true())
    throw PanelError(std::string(who) + ": panel carries no realized covariance (v_true)");
}

}  // namespace

Coefficients fit_ols(const ObservationPanel& panel, const DesignMask& P) {
  const Index m = panel.size();
  const Index d_x = P.feature_dim();
  const Index d_z = P.asset_dim();
  if (panel.feature_dim() != d_x || panel.asset_dim() != d_z)
    throw PanelError("fit_ols: panel and mask dimensions disagree");

  const Matrix PtP = P.entries().transpose() * P.entries();
  Matrix xxt = Matrix::Zero(d_x, d_x);
  Vector rhs = Vector::Zero(d_x);
  for (Index i = 0; i < m; ++i) {
    const Observation& o = panel[i];
    xxt.noalias() += o.x * o.x.transpose();
    rhs += o.x.cwiseProduct(P.entries().transpose() * o.y);
  }
  const Matrix gram = PtP.cwiseProduct(xxt);

  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 1e-12 * std::max(hi, 1.0))
    throw EstimationError("fit_ols: rank-deficient design");

  Eigen::LLT<Matrix> llt = checked_llt(gram, "fit_ols");
  Coefficients coef;
  coef.theta = llt.solve(rhs);
  coef.tag = EstimatorTag::Ols;

  // Classical standard errors from the stacked residuals.
  const Index dof = m * d_z - d_x;
  if (dof > 0) {
    double rss = 0.0;
    for (Index i = 0; i < m; ++i) {
      const Observation& o = panel[i];
      rss += (o.y - predict_returns(o.x, P, coef)).squaredNorm();
    }
    const double sigma2 = rss / static_cast<double>(dof);
    const Matrix gram_inv = llt.solve(Matrix::Identity(d_x, d_x));
    coef.std_err = (sigma2 * gram_inv.diagonal()).cwiseMax(0.0).cwiseSqrt();
  }
  return coef;
}

IpoQuadratic assemble_unconstrained(const ObservationPanel& panel, const DesignMask& P,
                                    double delta) {
  require_v_true(panel, "assemble_unconstrained");
  if (delta <= 0.0) throw EstimationError("assemble_unconstrained: delta must be positive");
  const Index m = panel.size();
  const Index d_x = P.feature_dim();
  const internal::VhatSolves vhat(panel);

  Matrix H = Matrix::Zero(d_x, d_x);
  Vector d = Vector::Zero(d_x);
  const double scale = 1.0 / (static_cast<double>(m) * delta);

  if (vhat.single() && single_v_true(panel)) {
    // One covariance pair for the whole panel: H and d collapse to Hadamard
    // products against the feature second-moment matrix.
    const Matrix C = vhat.solve(0, Matrix(P.entries()));  // Vh^{-1} P
    const Matrix S = C.transpose() * (*panel[0].v_true) * C;
    Matrix xxt = Matrix::Zero(d_x, d_x);
    for (Index i = 0; i < m; ++i) {
      const Observation& o = panel[i];
      xxt.noalias() += o.x * o.x.transpose();
      d += o.x.cwiseProduct(C.transpose() * o.y);
    }
    H = S.cwiseProduct(xxt);
  } else {
    for (Index i = 0; i < m; ++i) {
      const Observation& o = panel[i];
      const Matrix C = vhat.solve(i, Matrix(P.entries()));
      const Matrix S = C.transpose() * (*o.v_true) * C;
      H.noalias() += S.cwiseProduct(o.x * o.x.transpose());
      d += o.x.cwiseProduct(C.transpose() * o.y);
    }
  }
  H *= scale;
  d *= scale;
  H = 0.5 * (H + H.transpose()).eval();
  return IpoQuadratic{std::move(H), std::move(d), IpoCase::Unconstrained};
}

IpoQuadratic assemble_equality(const ObservationPanel& panel, const DesignMask& P,
                               double delta, const NullspaceReduction& red) {
  require_v_true(panel, "assemble_equality");
  if (delta <= 0.0) throw EstimationError("assemble_equality: delta must be positive");
  const Index m = panel.size();
  const Index d_x = P.feature_dim();
  const internal::ReducedSolves reduced(panel, red.F);

  Matrix H = Matrix::Zero(d_x, d_x);
  Vector d = Vector::Zero(d_x);
  const double scale = 1.0 / (static_cast<double>(m) * delta);

  // The particular-solution term carries a delta factor: expanding the loss
  // at z* = K yhat / delta + (I - K Vh) z0 gives the linear coefficient
  // 1/(m delta) sum D' K (y - delta V (I - K Vh) z0). At delta = 1, and
  // whenever z0 = 0, this is the usual printed form.
  if (reduced.single() && single_v_true(panel)) {
    const Matrix& V = *panel[0].v_true;
    const Matrix WP = reduced.apply(0, Matrix(P.entries()));  // W P
    const Matrix S = WP.transpose() * V * WP;
    const Vector r = red.z0 - reduced.apply(0, Vector(panel[0].v_hat * red.z0));
    const Vector v_r = delta * (V * r);
    Matrix xxt = Matrix::Zero(d_x, d_x);
    for (Index i = 0; i < m; ++i) {
      const Observation& o = panel[i];
      xxt.noalias() += o.x * o.x.transpose();
      d += o.x.cwiseProduct(WP.transpose() * (o.y - v_r));
    }
    H = S.cwiseProduct(xxt);
  } else {
    for (Index i = 0; i < m; ++i) {
      const Observation& o = panel[i];
      const Matrix& V = *o.v_true;
      const Matrix WP = reduced.apply(i, Matrix(P.entries()));
      const Matrix S = WP.transpose() * V * WP;
      const Vector r = red.z0 - reduced.apply(i, Vector(o.v_hat * red.z0));
      H.noalias() += S.cwiseProduct(o.x * o.x.transpose());
      d += o.x.cwiseProduct(WP.transpose() * (o.y - delta * (V * r)));
    }
  }
  H *= scale;
  d *= scale;
  H = 0.5 * (H + H.transpose()).eval();
  return IpoQuadratic{std::move(H), std::move(d), IpoCase::Equality};
}

Coefficients solve_ipo(const IpoQuadratic& q, const ThetaConstraints& cons) {
  const Index d_x = q.H.rows();
  Matrix H_r = q.H;
  if (cons.ridge_weight < 0.0) throw EstimationError("solve_ipo: negative ridge");
  if (cons.ridge_weight > 0.0) H_r.diagonal().array() += cons.ridge_weight;

  Coefficients coef;
  coef.tag = q.case_tag == IpoCase::Unconstrained ? EstimatorTag::IpoUnconstrained
                                                  : EstimatorTag::IpoEquality;
  if (!cons.equality && !cons.inequality) {
    coef.theta = factor_h(H_r).solve(q.d);
    return coef;
  }

  // Constrained variant: same quadratic program shape as the decision
  // problem, so reuse the solvers with delta = 1 and "covariance" H_r.
  if (cons.inequality) {
    Matrix A = cons.equality ? cons.equality->first : Matrix::Zero(0, d_x);
    Vector b = cons.equality ? cons.equality->second : Vector::Zero(0);
    const FeasibleRegion region = FeasibleRegion::inequality(
        std::move(A), std::move(b), cons.inequality->first, cons.inequality->second, 1.0);
    coef.theta = solve_inequality(q.d, H_r, region).z_star;
  } else {
    const NullspaceReduction red = nullspace_reduce(cons.equality->first, cons.equality->second);
    coef.theta = solve_equality(q.d, H_r, 1.0, red);
  }
  return coef;
}

namespace {

// d_u (unconstrained) or d_e (equality): the bias numerator matrix.
Matrix bias_numerator(const ObservationPanel& panel, const DesignMask& P, double delta,
                      IpoCase case_tag, const NullspaceReduction* red) {
  const Index m = panel.size();
  const Index d_x = P.feature_dim();
  Matrix num = Matrix::Zero(d_x, d_x);
  const double scale = 1.0 / (static_cast<double>(m) * delta);

  if (case_tag == IpoCase::Unconstrained) {
    const internal::VhatSolves vhat(panel);
    for (Index i = 0; i < m; ++i) {
      const Matrix S = P.entries().transpose() * vhat.solve(i, Matrix(P.entries()));
      num.noalias() += S.cwiseProduct(panel[i].x * panel[i].x.transpose());
    }
  } else {
    if (red == nullptr) throw EstimationError("bias: equality case needs a nullspace reduction");
    const internal::ReducedSolves reduced(panel, red->F);
    for (Index i = 0; i < m; ++i) {
      const Matrix S = P.entries().transpose() * reduced.apply(i, Matrix(P.entries()));
      num.noalias() += S.cwiseProduct(panel[i].x * panel[i].x.transpose());
    }
  }
  num *= scale;
  return 0.5 * (num + num.transpose()).eval();
}

IpoQuadratic assemble_case(const ObservationPanel& panel, const DesignMask& P, double delta,
                           IpoCase case_tag, const NullspaceReduction* red) {
  if (case_tag == IpoCase::Unconstrained) return assemble_unconstrained(panel, P, delta);
  if (red == nullptr)
    throw EstimationError("estimators: equality case needs a nullspace reduction");
  return assemble_equality(panel, P, delta, *red);
}

}  // namespace

Matrix bias_multiplier(const ObservationPanel& panel, const DesignMask& P, double delta,
                       IpoCase case_tag, const NullspaceReduction* red) {
  const IpoQuadratic q = assemble_case(panel, P, delta, case_tag, red);
  const Matrix num = bias_numerator(panel, P, delta, case_tag, red);
  return factor_h(q.H).solve(num);
}

Coefficients unbias(const ObservationPanel& panel, const DesignMask& P, double delta,
                    const Coefficients& theta_star, IpoCase case_tag,
                    const NullspaceReduction* red) {
  const IpoQuadratic q = assemble_case(panel, P, delta, case_tag, red);
  const Matrix num = bias_numerator(panel, P, delta, case_tag, red);
  Eigen::LLT<Matrix> llt = checked_llt(num, "unbias");
  Coefficients out;
  out.theta = llt.solve(q.H * theta_star.theta);
  out.tag = EstimatorTag::IpoUnbiased;
  return out;
}

Matrix theta_variance_given_sigma(const ObservationPanel& panel, const DesignMask& P,
                                  double delta, const ResidualCovariance& sigma,
                                  IpoCase case_tag, const NullspaceReduction* red) {
  const Index m = panel.size();
  const Index d_x = P.feature_dim();
  const IpoQuadratic q = assemble_case(panel, P, delta, case_tag, red);

  Matrix M = Matrix::Zero(d_x, d_x);
  if (case_tag == IpoCase::Unconstrained) {
    const internal::VhatSolves vhat(panel);
    for (Index i = 0; i < m; ++i) {
      const Matrix C = vhat.solve(i, Matrix(P.entries()));
      const Matrix S = C.transpose() * sigma.sigma_hat * C;
      M.noalias() += S.cwiseProduct(panel[i].x * panel[i].x.transpose());
    }
  } else {
    const internal::ReducedSolves reduced(panel, red->F);
    for (Index i = 0; i < m; ++i) {
      const Matrix WP = reduced.apply(i, Matrix(P.entries()));
      const Matrix S = WP.transpose() * sigma.sigma_hat * WP;
      M.noalias() += S.cwiseProduct(panel[i].x * panel[i].x.transpose());
    }
  }
  const double md = static_cast<double>(m) * delta;
  M /= md * md;

  Eigen::LLT<Matrix> llt = factor_h(q.H);
  const Matrix var = llt.solve(Matrix(llt.solve(M).transpose()));
  return 0.5 * (var + var.transpose()).eval();
}

Matrix theta_variance(const ObservationPanel& panel, const DesignMask& P, double delta,
                      const Coefficients& theta, IpoCase case_tag,
                      const NullspaceReduction* red) {
  return theta_variance_given_sigma(panel, P, delta, residual_covariance(panel, P, theta),
                                    case_tag, red);
}

double tracking_error_loss(const ObservationPanel& panel, const DesignMask& P,
                           const Coefficients& theta, const FeasibleRegion& policy) {
  require_v_true(panel, "tracking_error_loss");
  if (policy.kind() == RegionKind::Inequality)
    throw SolverError("tracking_error_loss: policy must be unconstrained or equality");
  const Index m = panel.size();
  const double delta = policy.delta();

  std::optional<NullspaceReduction> red;
  if (policy.kind() == RegionKind::Equality)
    red = nullspace_reduce(policy.A(), policy.b());

  double loss = 0.0;
  for (Index i = 0; i < m; ++i) {
    const Observation& o = panel[i];
    const Vector y_hat = predict_returns(o.x, P, theta);
    Vector z_hat, z_post;
    if (red) {
      z_hat = solve_equality(y_hat, o.v_hat, delta, *red);
      z_post = solve_equality(o.y, *o.v_true, delta, *red);
    } else {
      z_hat = solve_unconstrained(y_hat, o.v_hat, delta);
      z_post = solve_unconstrained(o.y, *o.v_true, delta);
    }
    const Vector diff = z_hat - z_post;
    loss += diff.dot(*o.v_true * diff);
  }
  return loss / (2.0 * static_cast<double>(m));
}

}  // namespace ipo
