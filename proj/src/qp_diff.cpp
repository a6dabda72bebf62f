#include "ipo/qp_diff.hpp"

#include <sstream>

namespace ipo {

QpGradients backward(const QpSolution& sol, const FeasibleRegion& region,
                     const Vector& d_cost_d_z) {
  if (!sol.factorization)
    throw DifferentiationError("backward: solution retained no KKT factorization");
  if (!d_cost_d_z.allFinite())
    throw DifferentiationError("backward: non-finite cost gradient");
  const KktFactorization& kkt = *sol.factorization;
  const Index d_z = kkt.d_z();
  const Index d_iq = kkt.d_iq();
  const Index d_eq = kkt.d_eq();
  if (d_cost_d_z.size() != d_z)
    throw DifferentiationError("backward: cost gradient dimension mismatch");

  if (!kkt.invertible()) {
    std::ostringstream os;
    os << "backward: singular KKT system; active-set report:";
    const Vector slack = region.num_inequalities() > 0
                             ? Vector(region.G() * sol.z_star - region.h())
                             : Vector::Zero(0);
    for (Index j = 0; j < d_iq; ++j)
      os << " [" << j << ": lambda=" << sol.lambda_star[j] << ", slack=" << slack[j] << "]";
    throw DifferentiationError(os.str());
  }

  Vector rhs = Vector::Zero(d_z + d_iq + d_eq);
  rhs.head(d_z) = d_cost_d_z;
  const Vector u = kkt.solve(rhs);
  const Vector u_z = u.head(d_z);
  const Vector u_lam = u.segment(d_z, d_iq);
  const Vector u_nu = u.tail(d_eq);

  QpGradients grad;
  grad.degenerate_active_set = kkt.degenerate_active_set();
  grad.d_cost_d_yhat = u_z;
  grad.d_cost_d_vhat =
      -0.5 * region.delta() *
      (u_z * sol.z_star.transpose() + sol.z_star * u_z.transpose());
  grad.d_cost_d_b = u_nu;
  grad.d_cost_d_h = sol.lambda_star.cwiseProduct(u_lam);
  grad.d_cost_d_A = -(sol.nu_star * u_z.transpose() + u_nu * sol.z_star.transpose());
  grad.d_cost_d_G = -(sol.lambda_star * u_z.transpose() +
                      sol.lambda_star.cwiseProduct(u_lam) * sol.z_star.transpose());
  return grad;
}

Vector chain_to_theta(const QpGradients& grad, const Vector& x, const DesignMask& P) {
  if (x.size() != P.feature_dim() || grad.d_cost_d_yhat.size() != P.asset_dim())
    throw PanelError("chain_to_theta: dimension mismatch");
  return x.cwiseProduct(P.entries().transpose() * grad.d_cost_d_yhat);
}

}  // namespace ipo
