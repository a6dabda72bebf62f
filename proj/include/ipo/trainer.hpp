#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ipo/exec.hpp"
#include "ipo/panel.hpp"

namespace ipo {

/// Gradient-descent settings. batch_size 0 means full batch (the default;
/// bitwise reproducible). Stochastic batches are opt-in and use seeded
/// shuffles. grad_tol matches the reference termination rule.
///
/// `smoothing`, when positive, trains inequality regions through
/// barrier-smoothed solves (interior-point iterations stopped at that
/// complementarity level). The exact clipped solution map has zero gradient
/// wherever every constraint binds, so a hard-saturated start cannot train
/// without it; smoothing trades a little solution bias for usable gradients.
/// Reported losses and downstream evaluations stay exact.
struct TrainConfig {
  double step_size = 0.05;
  Index batch_size = 0;
  int max_iters = 1000;
  double grad_tol = 1e-6;
  std::uint64_t seed = 0;
  double smoothing = 0.0;
};

struct TrainTracePoint {
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_time_ms = 0.0;
};

struct TrainResult {
  Coefficients coefficients;
  double final_grad_norm = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
  std::vector<TrainTracePoint> trace;
};

/// Empirical decision loss 1/m sum c(z*(yhat_i), y_i) under the region's
/// program, using the realized covariance when the panel carries one.
double loss_full(const ObservationPanel& panel, const DesignMask& P,
                 const FeasibleRegion& region, const Coefficients& theta,
                 const ExecContext& exec = ExecContext::serial());

/// Gradient descent through the decision program: theta is initialized from
/// a seeded standard normal, each iteration solves the batch programs,
/// backpropagates through the solution map and steps with halving on loss
/// increase. Terminates when the full-batch gradient norm drops below
/// grad_tol or on max_iters.
TrainResult train(const ObservationPanel& panel, const DesignMask& P,
                  const FeasibleRegion& region, const TrainConfig& cfg,
                  const ExecContext& exec = ExecContext::serial());

/// Loss-trace export: iteration, loss, grad_norm, wall_time_ms.
void write_loss_trace_csv(const std::string& path, const std::vector<TrainTracePoint>& trace);

}  // namespace ipo
