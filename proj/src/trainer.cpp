#include "ipo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "internal/cov_ops.hpp"
#include "ipo/csv.hpp"
#include "ipo/estimators.hpp"
#include "ipo/qp_diff.hpp"
#include "ipo/rng.hpp"

namespace ipo {
namespace {

const Matrix& loss_covariance(const Observation& o) {
  return o.v_true ? *o.v_true : o.v_hat;
}

// Forward solves and adjoints for one region kind, with the factorizations
// that stay valid across iterations held per observation. The inequality
// backward reuses a cached KKT factorization while the active set is
// unchanged and rebuilds it on change.
class TrainerEngine {
 public:
  TrainerEngine(const ObservationPanel& panel, const DesignMask& P,
                const FeasibleRegion& region, double smoothing = 0.0)
      : panel_(panel), P_(P), region_(region), delta_(region.delta()),
        smoothing_(smoothing) {
    const Index m = panel.size();
    switch (region.kind()) {
      case RegionKind::Unconstrained:
        vhat_.emplace(panel);
        break;
      case RegionKind::Equality: {
        red_ = nullspace_reduce(region.A(), region.b());
        reduced_.emplace(panel, red_->F);
        offsets_.resize(static_cast<std::size_t>(m));
        for (Index i = 0; i < m; ++i)
          offsets_[static_cast<std::size_t>(i)] =
              red_->z0 - reduced_->apply(i, Vector(panel[i].v_hat * red_->z0));
        break;
      }
      case RegionKind::Inequality:
        signatures_.resize(static_cast<std::size_t>(m));
        kkt_cache_.resize(static_cast<std::size_t>(m));
        break;
    }
  }

  /// Cost of observation i at theta; fills grad (d_x) when requested.
  double process(Index i, const Vector& theta, bool want_grad, Vector* grad) {
    const Observation& o = panel_[i];
    const Vector y_hat = P_.entries() * o.x.cwiseProduct(theta);
    const Matrix& v_loss = loss_covariance(o);

    Vector z;
    QpSolution sol;
    if (region_.kind() == RegionKind::Unconstrained) {
      z = vhat_->solve(i, y_hat) / delta_;
    } else if (region_.kind() == RegionKind::Equality) {
      z = reduced_->apply(i, y_hat) / delta_ + offsets_[static_cast<std::size_t>(i)];
    } else {
      IpmOptions opts;
      opts.retain_factorization = false;
      opts.mu_floor = smoothing_;
      sol = solve_inequality(y_hat, o.v_hat, region_, opts);
      z = sol.z_star;
    }

    const double cost = -z.dot(o.y) + 0.5 * delta_ * z.dot(v_loss * z);
    if (!want_grad) return cost;

    const Vector g_z = -o.y + delta_ * (v_loss * z);
    Vector d_yhat;
    if (region_.kind() == RegionKind::Unconstrained) {
      d_yhat = vhat_->solve(i, g_z) / delta_;
    } else if (region_.kind() == RegionKind::Equality) {
      d_yhat = reduced_->apply(i, g_z) / delta_;
    } else if (smoothing_ > 0.0) {
      // Smoothed points sit off the active-set structure, so the reuse
      // argument below does not apply; factorize at the current point.
      sol.factorization = factorize_kkt(sol, region_, o.v_hat);
      d_yhat = backward(sol, region_, g_z).d_cost_d_yhat;
    } else {
      std::vector<char> sig(static_cast<std::size_t>(sol.lambda_star.size()));
      for (Index j = 0; j < sol.lambda_star.size(); ++j)
        sig[static_cast<std::size_t>(j)] = sol.lambda_star[j] > 1e-7 ? 1 : 0;
      auto& cached = kkt_cache_[static_cast<std::size_t>(i)];
      if (!cached || sig != signatures_[static_cast<std::size_t>(i)]) {
        cached = factorize_kkt(sol, region_, o.v_hat);
        signatures_[static_cast<std::size_t>(i)] = std::move(sig);
      }
      sol.factorization = cached;
      d_yhat = backward(sol, region_, g_z).d_cost_d_yhat;
    }
    *grad = o.x.cwiseProduct(P_.entries().transpose() * d_yhat);
    return cost;
  }

 private:
  const ObservationPanel& panel_;
  const DesignMask& P_;
  const FeasibleRegion& region_;
  double delta_;

  double smoothing_ = 0.0;
  std::optional<internal::VhatSolves> vhat_;
  std::optional<NullspaceReduction> red_;
  std::optional<internal::ReducedSolves> reduced_;
  std::vector<Vector> offsets_;

  std::vector<std::vector<char>> signatures_;
  std::vector<std::shared_ptr<const KktFactorization>> kkt_cache_;
};

struct BatchEval {
  double loss = 0.0;
  Vector grad;
};

BatchEval evaluate(TrainerEngine& engine, const std::vector<Index>& batch,
                   const Vector& theta, bool want_grad, Index d_x,
                   const ExecContext& exec) {
  const std::size_t n = batch.size();
  std::vector<double> costs(n, 0.0);
  std::vector<Vector> grads;
  if (want_grad) grads.assign(n, Vector());

  exec.parallel_for(n, [&](std::size_t k) {
    Vector g;
    costs[k] = engine.process(batch[k], theta, want_grad, want_grad ? &g : nullptr);
    if (want_grad) grads[k] = std::move(g);
  });

  BatchEval out;
  out.loss = std::accumulate(costs.begin(), costs.end(), 0.0) / static_cast<double>(n);
  if (want_grad) {
    out.grad = Vector::Zero(d_x);
    for (const Vector& g : grads) out.grad += g;
    out.grad /= static_cast<double>(n);
  }
  return out;
}

std::vector<Index> all_indices(Index m) {
  std::vector<Index> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), Index(0));
  return idx;
}

}  // namespace

double loss_full(const ObservationPanel& panel, const DesignMask& P,
                 const FeasibleRegion& region, const Coefficients& theta,
                 const ExecContext& exec) {
  validate(theta);
  TrainerEngine engine(panel, P, region);
  const std::vector<Index> batch = all_indices(panel.size());
  return evaluate(engine, batch, theta.theta, false, P.feature_dim(), exec).loss;
}

TrainResult train(const ObservationPanel& panel, const DesignMask& P,
                  const FeasibleRegion& region, const TrainConfig& cfg,
                  const ExecContext& exec) {
  if (cfg.step_size <= 0.0) throw ConfigError("train: step_size must be positive");
  if (cfg.grad_tol <= 0.0) throw ConfigError("train: grad_tol must be positive");
  if (cfg.max_iters <= 0) throw ConfigError("train: max_iters must be positive");
  if (cfg.batch_size < 0 || cfg.batch_size > panel.size())
    throw ConfigError("train: batch_size out of range");

  const Index m = panel.size();
  const Index d_x = P.feature_dim();
  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size == m;

  TrainerEngine engine(panel, P, region, cfg.smoothing);
  const std::vector<Index> full = all_indices(m);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&]() {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  std::mt19937_64 init_rng = make_rng(cfg.seed, "train/init");
  Vector theta = normal_vector(d_x, init_rng);
  // Seeded random start in the least-squares solution's neighborhood. A
  // plain standard-normal start sits orders of magnitude above daily-return
  // coefficients: every inequality saturates, the clipped solution map has
  // zero gradient, and descent cannot find the (tiny) competitive region.
  try {
    const Vector ols = fit_ols(panel, P).theta;
    theta = ols + 0.5 * (ols.norm() / std::sqrt(static_cast<double>(d_x))) * theta;
  } catch (const EstimationError&) {
    // keep the unit-scale random start when the baseline is unavailable
  }

  TrainResult result;
  double step = cfg.step_size;

  auto run_eval = [&](const std::vector<Index>& batch, const Vector& th, bool grad,
                      int iter) -> BatchEval {
    try {
      return evaluate(engine, batch, th, grad, d_x, exec);
    } catch (const ConvergenceError& e) {
      std::ostringstream os;
      os << "train: decision program failed at iteration " << iter << ": " << e.what();
      throw ConvergenceError(os.str());
    }
  };

  BatchEval cur = run_eval(full, theta, true, 0);
  const double divergence_scale = 1e6 * std::max(1.0, std::abs(cur.loss));
  result.trace.push_back({0, cur.loss, cur.grad.norm(), elapsed_ms()});

  if (full_batch) {
    for (int it = 1; it <= cfg.max_iters; ++it) {
      if (cur.grad.norm() < cfg.grad_tol) break;
      // Halve only on a material increase: near the optimum the loss
      // difference sits below rounding at the loss's own magnitude, and
      // rejecting on that noise would stall the step at zero.
      const double noise_floor = 1e-12 * std::max(1.0, std::abs(cur.loss));
      BatchEval next;
      Vector candidate;
      bool stalled = false;
      while (true) {
        candidate = theta - step * cur.grad;
        next = run_eval(full, candidate, true, it);
        if (next.loss <= cur.loss + noise_floor) break;
        step *= 0.5;
        if (step < 1e-18) {
          // No descent step exists along this gradient (a kink of the
          // constrained solution map); stop at the current point.
          stalled = true;
          break;
        }
      }
      if (stalled) break;
      theta = candidate;
      cur = next;
      result.iterations = it;
      if (cur.loss > divergence_scale)
        throw SolverError("train: loss diverged past 1e6 x initial; reduce step_size");
      result.trace.push_back({it, cur.loss, cur.grad.norm(), elapsed_ms()});
    }
  } else {
    // Stochastic: fixed step, seeded batches, periodic full-batch checks.
    constexpr int kCheckEvery = 25;
    for (int it = 1; it <= cfg.max_iters; ++it) {
      std::mt19937_64 rng = make_rng(cfg.seed, "train/batch/" + std::to_string(it));
      std::vector<Index> batch = full;
      for (Index k = 0; k < cfg.batch_size; ++k) {
        std::uniform_int_distribution<Index> pick(k, m - 1);
        std::swap(batch[static_cast<std::size_t>(k)],
                  batch[static_cast<std::size_t>(pick(rng))]);
      }
      batch.resize(static_cast<std::size_t>(cfg.batch_size));

      const BatchEval be = run_eval(batch, theta, true, it);
      theta -= step * be.grad;
      result.iterations = it;
      if (be.loss > divergence_scale)
        throw SolverError("train: loss diverged past 1e6 x initial; reduce step_size");
      result.trace.push_back({it, be.loss, be.grad.norm(), elapsed_ms()});

      if (it % kCheckEvery == 0) {
        cur = run_eval(full, theta, true, it);
        if (cur.grad.norm() < cfg.grad_tol) break;
      }
    }
    cur = run_eval(full, theta, true, result.iterations);
  }

  result.coefficients.theta = theta;
  result.coefficients.tag = EstimatorTag::IpoGrad;
  result.final_grad_norm = cur.grad.norm();
  result.final_loss = cur.loss;
  return result;
}

void write_loss_trace_csv(const std::string& path, const std::vector<TrainTracePoint>& trace) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(trace.size());
  for (const TrainTracePoint& p : trace) {
    rows.push_back({std::to_string(p.iteration), format_double(p.loss),
                    format_double(p.grad_norm), format_double(p.wall_time_ms)});
  }
  write_csv(path, {"iteration", "loss", "grad_norm", "wall_time_ms"}, rows);
}

}  // namespace ipo
