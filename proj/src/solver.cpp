#include "ipo/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace ipo {

NullspaceReduction nullspace_reduce(const Matrix& A, const Vector& b) {
  if (A.rows() != b.size()) throw PanelError("nullspace_reduce: A and b row mismatch");
  const Index d_z = A.cols();

  Eigen::ColPivHouseholderQR<Matrix> qr(A.transpose());
  const Index rank = qr.rank();
  if (rank >= d_z)
    throw SolverError("nullspace_reduce: A has trivial nullspace (nullity 0)");

  // Columns r..d_z-1 of Q are orthonormal to range(A') = row space of A.
  Matrix Q = qr.householderQ();
  Matrix F = Q.rightCols(d_z - rank);

  Vector z0;
  if (A.rows() == 0) {
    z0 = Vector::Zero(d_z);
  } else {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
    z0 = cod.solve(b);
    const double scale = 1.0 + (b.size() > 0 ? b.cwiseAbs().maxCoeff() : 0.0);
    if ((A * z0 - b).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw InfeasibleError("nullspace_reduce: system A z = b is inconsistent");
  }
  return NullspaceReduction{std::move(F), std::move(z0)};
}

Vector solve_unconstrained(const Vector& y_hat, const Matrix& v_hat, double delta) {
  if (delta <= 0.0) throw SolverError("solve_unconstrained: delta must be positive");
  if (v_hat.rows() != y_hat.size() || v_hat.cols() != y_hat.size())
    throw PanelError("solve_unconstrained: dimension mismatch");
  Eigen::LLT<Matrix> llt(v_hat);
  if (llt.info() != Eigen::Success)
    throw SolverError("solve_unconstrained: covariance factorization failed (not PD)");
  return llt.solve(y_hat) / delta;
}

Vector solve_equality(const Vector& y_hat, const Matrix& v_hat, double delta,
                      const NullspaceReduction& red) {
  if (delta <= 0.0) throw SolverError("solve_equality: delta must be positive");
  const Matrix reduced = red.F.transpose() * v_hat * red.F;
  Eigen::LLT<Matrix> llt(0.5 * (reduced + reduced.transpose()));
  if (llt.info() != Eigen::Success)
    throw SolverError("solve_equality: F'VF factorization failed (V not PD?)");
  const Vector rhs = red.F.transpose() * (y_hat - delta * (v_hat * red.z0));
  const Vector w = llt.solve(rhs) / delta;
  return red.F * w + red.z0;
}

KktFactorization::KktFactorization(Matrix system, Index d_z, Index d_iq, Index d_eq,
                                   bool degenerate)
    : lu_(std::move(system)), d_z_(d_z), d_iq_(d_iq), d_eq_(d_eq), degenerate_(degenerate) {
  invertible_ = lu_.isInvertible();
}

Vector KktFactorization::solve(const Vector& rhs) const {
  if (!invertible_)
    throw DifferentiationError("kkt: factorization is singular");
  return lu_.solve(rhs);
}

namespace {

struct IpmWorkspace {
  Vector z, s, lambda, nu;
};

// Contract residual at (z, lambda, nu): stationarity, primal feasibility of
// both constraint blocks, complementary slackness, dual feasibility.
double kkt_residual(const Vector& z, const Vector& lambda, const Vector& nu,
                    const Matrix& Q, const Vector& q, const Matrix& A, const Vector& b,
                    const Matrix& G, const Vector& h) {
  double res = (Q * z + q + G.transpose() * lambda + A.transpose() * nu)
                   .cwiseAbs()
                   .maxCoeff();
  if (A.rows() > 0) res = std::max(res, (A * z - b).cwiseAbs().maxCoeff());
  if (G.rows() > 0) {
    const Vector slack = G * z - h;
    res = std::max(res, slack.cwiseMax(0.0).maxCoeff());
    res = std::max(res, slack.cwiseProduct(lambda).cwiseAbs().maxCoeff());
    res = std::max(res, (-lambda).cwiseMax(0.0).maxCoeff());
  }
  return res;
}

// Largest alpha in (0, 1] with v + alpha dv >= (1 - tau) v, elementwise.
double step_to_boundary(const Vector& v, const Vector& dv, double tau) {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -tau * v[i] / dv[i]);
  }
  return alpha;
}

// Solves [W A'; A 0] [dz; dnu] = [u; v] with W positive definite via a Schur
// complement on the equality block.
void saddle_solve(const Eigen::LDLT<Matrix>& W_ldlt, const Matrix& A, const Vector& u,
                  const Vector& v, Vector& dz, Vector& dnu) {
  if (A.rows() == 0) {
    dz = W_ldlt.solve(u);
    dnu = Vector::Zero(0);
    return;
  }
  const Matrix WiAt = W_ldlt.solve(Matrix(A.transpose()));
  const Matrix schur = A * WiAt;
  Eigen::LDLT<Matrix> schur_ldlt(0.5 * (schur + schur.transpose()));
  if (schur_ldlt.info() != Eigen::Success)
    throw SolverError("ipm: equality Schur complement factorization failed");
  dnu = schur_ldlt.solve(A * W_ldlt.solve(u) - v);
  dz = W_ldlt.solve(u - A.transpose() * dnu);
}

std::shared_ptr<const KktFactorization> build_kkt_factorization(
    const Vector& z, const Vector& lambda, double delta, const Matrix& v_hat,
    const Matrix& A, const Matrix& G, const Vector& h) {
  const Index d_z = z.size();
  const Index d_iq = G.rows();
  const Index d_eq = A.rows();
  const Index n = d_z + d_iq + d_eq;
  const Vector slack = d_iq > 0 ? Vector(G * z - h) : Vector::Zero(0);

  bool degenerate = false;
  for (Index j = 0; j < d_iq; ++j) {
    if (lambda[j] < 1e-7 && std::abs(slack[j]) < 1e-7) degenerate = true;
  }

  Matrix K = Matrix::Zero(n, n);
  K.topLeftCorner(d_z, d_z) = delta * v_hat;
  if (d_iq > 0) {
    K.block(0, d_z, d_z, d_iq) = G.transpose() * lambda.asDiagonal();
    K.block(d_z, 0, d_iq, d_z) = G;
    K.block(d_z, d_z, d_iq, d_iq) = slack.asDiagonal();
  }
  if (d_eq > 0) {
    K.block(0, d_z + d_iq, d_z, d_eq) = A.transpose();
    K.block(d_z + d_iq, 0, d_eq, d_z) = A;
  }
  if (degenerate) K.diagonal().array() += 1e-10;
  return std::make_shared<const KktFactorization>(std::move(K), d_z, d_iq, d_eq, degenerate);
}

// Mehrotra predictor-corrector on the slack form
//   min .5 z'Qz + q'z  s.t.  A z = b,  G z + s = h,  s >= 0, lambda >= 0.
QpSolution ipm_solve(const Matrix& Q, const Vector& q, const Matrix& A, const Vector& b,
                     const Matrix& G, const Vector& h, const IpmOptions& opts,
                     double delta_for_factorization, const Matrix& v_hat) {
  const Index d_z = Q.rows();
  const Index d_iq = G.rows();
  const Index d_eq = A.rows();

  IpmWorkspace w;
  if (d_eq > 0) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
    w.z = cod.solve(b);
  } else {
    w.z = Vector::Zero(d_z);
  }
  w.nu = Vector::Zero(d_eq);
  w.s = Vector::Constant(d_iq, 1.0);
  if (d_iq > 0) {
    const Vector slack0 = h - G * w.z;
    for (Index j = 0; j < d_iq; ++j) w.s[j] = std::max(slack0[j], 1.0);
  }
  w.lambda = Vector::Constant(d_iq, 1.0);

  if (d_iq == 0) {
    // Pure equality QP: one saddle solve.
    Eigen::LDLT<Matrix> W_ldlt(Q);
    if (W_ldlt.info() != Eigen::Success)
      throw SolverError("ipm: objective factorization failed");
    Vector dz, dnu;
    saddle_solve(W_ldlt, A, -q, b, dz, dnu);
    QpSolution sol;
    sol.z_star = dz;
    sol.nu_star = dnu;
    sol.lambda_star = Vector::Zero(0);
    sol.kkt_residual = kkt_residual(sol.z_star, sol.lambda_star, sol.nu_star, Q, q, A, b, G, h);
    if (opts.retain_factorization)
      sol.factorization = build_kkt_factorization(sol.z_star, sol.lambda_star,
                                                  delta_for_factorization, v_hat, A, G, h);
    return sol;
  }

  constexpr double kBoundaryFraction = 0.995;
  double residual = kkt_residual(w.z, w.lambda, w.nu, Q, q, A, b, G, h);
  const bool smoothed = opts.mu_floor > 0.0;
  bool smoothed_done = false;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (smoothed ? smoothed_done : residual <= opts.tolerance) break;

    const Vector r_d = Q * w.z + q + G.transpose() * w.lambda + A.transpose() * w.nu;
    const Vector r_eq = d_eq > 0 ? Vector(A * w.z - b) : Vector::Zero(0);
    const Vector r_iq = G * w.z + w.s - h;
    const double mu = w.s.dot(w.lambda) / static_cast<double>(d_iq);

    if (smoothed) {
      // Smoothed mode solves the perturbed system lambda_j s_j = mu_floor
      // exactly, so the solution map stays a deterministic smooth function
      // of the inputs (an early stop anywhere below the floor would not be).
      double dev = r_d.cwiseAbs().maxCoeff();
      if (d_eq > 0) dev = std::max(dev, r_eq.cwiseAbs().maxCoeff());
      dev = std::max(dev, r_iq.cwiseAbs().maxCoeff());
      dev = std::max(dev, (w.s.cwiseProduct(w.lambda).array() - opts.mu_floor)
                              .abs()
                              .maxCoeff());
      if (dev <= std::max(opts.tolerance, 1e-2 * opts.mu_floor)) {
        smoothed_done = true;
        break;
      }
    }

    const Vector lam_over_s = w.lambda.cwiseQuotient(w.s);
    Matrix W = Q + G.transpose() * lam_over_s.asDiagonal() * G;
    Eigen::LDLT<Matrix> W_ldlt(0.5 * (W + W.transpose()));
    if (W_ldlt.info() != Eigen::Success)
      throw SolverError("ipm: Newton system factorization failed");

    auto newton = [&](const Vector& r_c, Vector& dz, Vector& ds, Vector& dlam, Vector& dnu) {
      const Vector u =
          -r_d + G.transpose() * ((r_c - w.lambda.cwiseProduct(r_iq)).cwiseQuotient(w.s));
      saddle_solve(W_ldlt, A, u, -r_eq, dz, dnu);
      ds = -r_iq - G * dz;
      dlam = (-r_c - w.lambda.cwiseProduct(ds)).cwiseQuotient(w.s);
    };

    Vector dz, ds, dlam, dnu;
    if (smoothed) {
      // Damped Newton on the perturbed system, walking the barrier level
      // geometrically down to the floor. Mehrotra's corrector heuristics aim
      // at zero and would hover around the floor instead of settling on it.
      const double target = std::max(opts.mu_floor, 0.2 * mu);
      const Vector r_c = w.s.cwiseProduct(w.lambda).array() - target;
      newton(r_c, dz, ds, dlam, dnu);
    } else {
      // Predictor.
      Vector dz_a, ds_a, dlam_a, dnu_a;
      newton(w.s.cwiseProduct(w.lambda), dz_a, ds_a, dlam_a, dnu_a);
      const double alpha_p_a = step_to_boundary(w.s, ds_a, 1.0);
      const double alpha_d_a = step_to_boundary(w.lambda, dlam_a, 1.0);
      const double mu_aff = (w.s + alpha_p_a * ds_a).dot(w.lambda + alpha_d_a * dlam_a) /
                            static_cast<double>(d_iq);
      const double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3.0);

      // Corrector.
      const Vector r_c = w.s.cwiseProduct(w.lambda).array() - sigma * mu +
                         ds_a.cwiseProduct(dlam_a).array();
      newton(r_c, dz, ds, dlam, dnu);
    }

    const double alpha_p = step_to_boundary(w.s, ds, kBoundaryFraction);
    const double alpha_d = step_to_boundary(w.lambda, dlam, kBoundaryFraction);
    w.z += alpha_p * dz;
    w.s += alpha_p * ds;
    w.lambda += alpha_d * dlam;
    w.nu += alpha_d * dnu;

    residual = kkt_residual(w.z, w.lambda, w.nu, Q, q, A, b, G, h);
  }

  if (smoothed ? !smoothed_done : residual > opts.tolerance) {
    std::ostringstream os;
    os << "ipm: no convergence after " << opts.max_iterations
       << " iterations; KKT residual " << residual << " (tolerance " << opts.tolerance << ")";
    throw ConvergenceError(os.str());
  }

  QpSolution sol;
  sol.z_star = w.z;
  sol.lambda_star = w.lambda;
  sol.nu_star = w.nu;
  sol.kkt_residual = residual;
  if (opts.retain_factorization)
    sol.factorization = build_kkt_factorization(sol.z_star, sol.lambda_star,
                                                delta_for_factorization, v_hat, A, G, h);
  return sol;
}

}  // namespace

QpSolution solve_inequality(const Vector& y_hat, const Matrix& v_hat,
                            const FeasibleRegion& region, const IpmOptions& opts) {
  if (region.kind() != RegionKind::Inequality)
    throw SolverError("solve_inequality: region kind must be Inequality");
  if (y_hat.size() != region.asset_dim() || v_hat.rows() != region.asset_dim())
    throw PanelError("solve_inequality: dimension mismatch");
  const Matrix Q = region.delta() * v_hat;
  return ipm_solve(Q, -y_hat, region.A(), region.b(), region.G(), region.h(), opts,
                   region.delta(), v_hat);
}

Vector solve_region(const Vector& y_hat, const Matrix& v_hat, const FeasibleRegion& region) {
  switch (region.kind()) {
    case RegionKind::Unconstrained:
      return solve_unconstrained(y_hat, v_hat, region.delta());
    case RegionKind::Equality: {
      const NullspaceReduction red = nullspace_reduce(region.A(), region.b());
      return solve_equality(y_hat, v_hat, region.delta(), red);
    }
    case RegionKind::Inequality: {
      IpmOptions opts;
      opts.retain_factorization = false;
      return solve_inequality(y_hat, v_hat, region, opts).z_star;
    }
  }
  throw SolverError("solve_region: unknown region kind");
}

std::shared_ptr<const KktFactorization> factorize_kkt(const QpSolution& sol,
                                                      const FeasibleRegion& region,
                                                      const Matrix& v_hat) {
  return build_kkt_factorization(sol.z_star, sol.lambda_star, region.delta(), v_hat,
                                 region.A(), region.G(), region.h());
}

// Declared in panel.cpp; validates nonemptiness by solving a strictly convex
// feasibility QP over the candidate region.
FeasibleRegion detail_make_region(RegionKind kind, Index d_z, double delta, Matrix A,
                                  Vector b, Matrix G, Vector h);

FeasibleRegion make_inequality_region(Matrix A, Vector b, Matrix G, Vector h, double delta) {
  const Index d_z = G.cols();
  try {
    IpmOptions opts;
    opts.tolerance = 1e-8;
    opts.retain_factorization = false;
    ipm_solve(Matrix::Identity(d_z, d_z), Vector::Zero(d_z), A, b, G, h, opts, 1.0,
              Matrix::Identity(d_z, d_z));
  } catch (const SolverError&) {
    throw InfeasibleError("region: feasibility solve found {A z = b, G z <= h} empty");
  }
  return detail_make_region(RegionKind::Inequality, d_z, delta, std::move(A), std::move(b),
                            std::move(G), std::move(h));
}

}  // namespace ipo
