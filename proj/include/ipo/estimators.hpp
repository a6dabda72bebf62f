#pragma once

#include <optional>

#include "ipo/panel.hpp"
#include "ipo/solver.hpp"

namespace ipo {

enum class IpoCase { Unconstrained, Equality };

/// Quadratic form of the integrated estimation program:
/// minimize .5 theta' H theta - theta' d.
struct IpoQuadratic {
  Matrix H;
  Vector d;
  IpoCase case_tag = IpoCase::Unconstrained;
};

/// Optional ridge and linear constraints on theta.
struct ThetaConstraints {
  double ridge_weight = 0.0;
  std::optional<std::pair<Matrix, Vector>> equality;    // A_theta theta = b_theta
  std::optional<std::pair<Matrix, Vector>> inequality;  // G_theta theta <= h_theta
};

/// Least-squares baseline with classical standard errors. Requires m >= d_x
/// and a full-column-rank stacked design.
Coefficients fit_ols(const ObservationPanel& panel, const DesignMask& P);

/// H = 1/(m delta) sum diag(x) P' Vh^{-1} V Vh^{-1} P diag(x),
/// d = 1/(m delta) sum diag(x) P' Vh^{-1} y.
/// Requires panel.v_true (training uses the realized covariance; callers on
/// market data substitute the estimate for both slots).
IpoQuadratic assemble_unconstrained(const ObservationPanel& panel, const DesignMask& P,
                                    double delta);

/// Same with W = F (F'VhF)^{-1} F' replacing Vh^{-1} and the particular
/// solution offset folded into d.
IpoQuadratic assemble_equality(const ObservationPanel& panel, const DesignMask& P,
                               double delta, const NullspaceReduction& red);

/// theta* = H^{-1} d by Cholesky solve when unconstrained and ridge-free;
/// otherwise solves the constrained quadratic program with the QP engine.
Coefficients solve_ipo(const IpoQuadratic& q, const ThetaConstraints& cons = {});

/// B with E[theta*] = B theta0: H^{-1} d_u (unconstrained) or
/// H_eq^{-1} d_e (equality).
Matrix bias_multiplier(const ObservationPanel& panel, const DesignMask& P, double delta,
                       IpoCase case_tag, const NullspaceReduction* red = nullptr);

/// Bias-corrected estimate d_u^{-1} H theta* (or the equality analogue).
Coefficients unbias(const ObservationPanel& panel, const DesignMask& P, double delta,
                    const Coefficients& theta_star, IpoCase case_tag,
                    const NullspaceReduction* red = nullptr);

/// Var(theta*) = H^{-1} M H^{-1} with the residual covariance estimated from
/// the panel at `theta`.
Matrix theta_variance(const ObservationPanel& panel, const DesignMask& P, double delta,
                      const Coefficients& theta, IpoCase case_tag,
                      const NullspaceReduction* red = nullptr);

/// Same with the residual covariance supplied directly.
Matrix theta_variance_given_sigma(const ObservationPanel& panel, const DesignMask& P,
                                  double delta, const ResidualCovariance& sigma,
                                  IpoCase case_tag, const NullspaceReduction* red = nullptr);

/// Average squared tracking error, in the realized-covariance elliptic norm,
/// between the policy at theta and the ex-post optimal policy:
/// 1/(2m) sum | z*(yhat_i) - z*(y_i) |^2_{V_i}. Policy must be unconstrained
/// or equality; requires panel.v_true.
double tracking_error_loss(const ObservationPanel& panel, const DesignMask& P,
                           const Coefficients& theta, const FeasibleRegion& policy);

}  // namespace ipo
