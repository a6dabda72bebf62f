#pragma once

#include "ipo/solver.hpp"

namespace ipo {

/// Gradients of a scalar cost through the solved decision program, with
/// respect to every problem input. d_cost_d_vhat is symmetrized by
/// construction. degenerate_active_set reports that the backward solve used
/// the ridge-regularized factorization.
struct QpGradients {
  Vector d_cost_d_yhat;
  Matrix d_cost_d_vhat;
  Matrix d_cost_d_A;
  Vector d_cost_d_b;
  Matrix d_cost_d_G;
  Vector d_cost_d_h;
  bool degenerate_active_set = false;
};

/// Implicit differentiation through the KKT conditions of the solved program:
/// solves the retained transposed KKT system against (d_cost_d_z, 0, 0) and
/// assembles the input gradients. Signs and scale factors are pinned by
/// finite-difference tests, not by any printed convention.
QpGradients backward(const QpSolution& sol, const FeasibleRegion& region,
                     const Vector& d_cost_d_z);

/// d cost / d theta = diag(x) P' d_cost_d_yhat.
Vector chain_to_theta(const QpGradients& grad, const Vector& x, const DesignMask& P);

}  // namespace ipo
