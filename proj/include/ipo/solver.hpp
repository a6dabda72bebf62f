#pragma once

#include <memory>

#include "ipo/panel.hpp"

namespace ipo {

/// Nullspace change of variables for {z : A z = b}: any feasible point is
/// z = F w + z0 with F orthonormal (columns span Null(A)) and z0 the
/// minimum-norm particular solution.
struct NullspaceReduction {
  Matrix F;
  Vector z0;

  Index nullity() const { return F.cols(); }
};

/// Rank-revealing reduction of A z = b. Throws InfeasibleError when the
/// system is inconsistent and SolverError when the nullspace is trivial.
NullspaceReduction nullspace_reduce(const Matrix& A, const Vector& b);

/// z* = (1/delta) V^{-1} y, computed by Cholesky solve.
Vector solve_unconstrained(const Vector& y_hat, const Matrix& v_hat, double delta);

/// z* = F w* + z0 with w* = (1/delta) (F'VF)^{-1} F' (y - delta V z0).
Vector solve_equality(const Vector& y_hat, const Matrix& v_hat, double delta,
                      const NullspaceReduction& red);

/// Factorized transposed KKT system retained for the backward pass.
/// The system matrix is
///   [ delta V   G' diag(l*)   A' ]
///   [ G         diag(Gz*-h)   0  ]
///   [ A         0             0  ]
/// regularized by a 1e-10 ridge when the active set is degenerate
/// (some j has both l*_j and |Gz*-h|_j below 1e-7).
class KktFactorization {
 public:
  KktFactorization(Matrix system, Index d_z, Index d_iq, Index d_eq, bool degenerate);

  /// Solves the transposed system; rhs is (d_z + d_iq + d_eq) long.
  Vector solve(const Vector& rhs) const;

  bool degenerate_active_set() const { return degenerate_; }
  bool invertible() const { return invertible_; }
  Index d_z() const { return d_z_; }
  Index d_iq() const { return d_iq_; }
  Index d_eq() const { return d_eq_; }

 private:
  Eigen::FullPivLU<Matrix> lu_;
  Index d_z_, d_iq_, d_eq_;
  bool degenerate_ = false;
  bool invertible_ = false;
};

/// Primal/dual solution of the inequality-constrained program together with
/// the converged KKT residual and the retained factorization.
struct QpSolution {
  Vector z_star;
  Vector lambda_star;
  Vector nu_star;
  double kkt_residual = 0.0;
  std::shared_ptr<const KktFactorization> factorization;
};

struct IpmOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  bool retain_factorization = true;
  /// When positive, stop on the central path once feasibility reaches
  /// `tolerance` and the complementarity measure drops to `mu_floor` instead
  /// of driving it to zero. The returned point is the barrier-smoothed
  /// solution whose map stays differentiable across active-set changes;
  /// gradient training uses this to keep saturated constraints trainable.
  double mu_floor = 0.0;
};

/// Primal-dual interior point (Mehrotra predictor-corrector) for
///   min -z'y + (delta/2) z'Vz   s.t.  A z = b,  G z <= h.
/// Requires region.kind() == Inequality. Converges to a KKT residual
/// (stationarity, feasibility, complementarity; infinity norm) below
/// opts.tolerance or throws ConvergenceError with a residual report.
QpSolution solve_inequality(const Vector& y_hat, const Matrix& v_hat,
                            const FeasibleRegion& region, const IpmOptions& opts = {});

/// Dispatches on region.kind(); inequality solves return only the weights.
Vector solve_region(const Vector& y_hat, const Matrix& v_hat, const FeasibleRegion& region);

/// Builds the retained transposed-KKT factorization for an already converged
/// solution (for callers that solved with retain_factorization = false).
std::shared_ptr<const KktFactorization> factorize_kkt(const QpSolution& sol,
                                                      const FeasibleRegion& region,
                                                      const Matrix& v_hat);

}  // namespace ipo
