#include "ipo/simlab.hpp"

#include <Eigen/Cholesky>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ipo/covariance.hpp"
#include "ipo/csv.hpp"
#include "ipo/estimators.hpp"
#include "ipo/rng.hpp"
#include "ipo/solver.hpp"
#include "ipo/stats.hpp"

namespace ipo {

void validate(const SimSpec& spec) {
  if (spec.d_z <= 0 || spec.d_x_per_asset <= 0) throw ConfigError("sim: dimensions must be positive");
  if (spec.rho < 0.0 || spec.rho >= 1.0) throw ConfigError("sim: rho must lie in [0, 1)");
  if (spec.sigma <= 0.0) throw ConfigError("sim: sigma must be positive");
  if (!(spec.snr > 0.0)) throw ConfigError("sim: snr must be positive");
  if (spec.res < 1 || spec.res * spec.d_z < spec.d_z + 1)
    throw ConfigError("sim: res too small for a full-rank covariance estimate");
  if (spec.delta <= 0.0) throw ConfigError("sim: delta must be positive");
  if (spec.poly_degree < 1) throw ConfigError("sim: poly_degree must be >= 1");
  if (spec.gamma <= 0.0) throw ConfigError("sim: gamma must be positive");
  if (spec.n_obs < 4) throw ConfigError("sim: n_obs too small");
  if (spec.n_trials < 1) throw ConfigError("sim: n_trials must be >= 1");
}

GroundTruth generate_ground_truth(const SimSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  const Index d_x = spec.d_z * spec.d_x_per_asset;
  GroundTruth truth;
  truth.theta.resize(d_x, spec.poly_degree);
  for (int q = 0; q < spec.poly_degree; ++q) truth.theta.col(q) = normal_vector(d_x, rng);
  truth.v_true.resize(spec.d_z, spec.d_z);
  for (Index j = 0; j < spec.d_z; ++j)
    for (Index k = 0; k < spec.d_z; ++k)
      truth.v_true(j, k) = spec.sigma * spec.sigma *
                           std::pow(spec.rho, std::abs(double(j) - double(k)));
  return truth;
}

double calibrate_signal_scale(const SimSpec& spec, const GroundTruth& truth) {
  if (std::isinf(spec.snr)) return 1.0;
  // Standard-normal moments E[x^n]: zero for odd n, (n-1)!! for even n.
  auto moment = [](int n) -> double {
    if (n % 2 == 1) return 0.0;
    double m = 1.0;
    for (int k = n - 1; k > 1; k -= 2) m *= k;
    return m;
  };
  const int p = spec.poly_degree;
  const Index d_x = truth.theta.rows();
  const DesignMask P = DesignMask::block(spec.d_z, spec.d_x_per_asset);

  // Var(signal) summed over assets; independent features mean only matching
  // feature indices contribute. Features feeding several assets count once
  // per asset, i.e. with their design-column multiplicity.
  double signal_var = 0.0;
  for (Index k = 0; k < d_x; ++k) {
    double v_k = 0.0;
    for (int q = 1; q <= p; ++q)
      for (int r = 1; r <= p; ++r)
        v_k += truth.theta(k, q - 1) * truth.theta(k, r - 1) *
               (moment(q + r) - moment(q) * moment(r));
    signal_var += v_k * P.entries().col(k).sum();
  }
  const double noise_var = truth.v_true.trace();
  return std::sqrt(spec.snr * noise_var / signal_var);
}

ObservationPanel generate_panel(const SimSpec& spec, const GroundTruth& truth,
                                std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  const Index d_x = truth.theta.rows();
  const DesignMask P = DesignMask::block(spec.d_z, spec.d_x_per_asset);
  const double kappa = calibrate_signal_scale(spec, truth);
  const double noise_scale = std::isinf(spec.snr) ? 0.0 : 1.0;

  Eigen::LLT<Matrix> llt(truth.v_true);
  if (llt.info() != Eigen::Success)
    throw SolverError("sim: ground-truth covariance is not PD");
  const Matrix L = llt.matrixL();

  // Covariance estimate from fresh residual draws, shared by the panel.
  std::vector<Vector> draws;
  draws.reserve(static_cast<std::size_t>(spec.res * spec.d_z));
  const Vector zero = Vector::Zero(spec.d_z);
  for (Index s = 0; s < spec.res * spec.d_z; ++s)
    draws.push_back(mvn_sample(zero, L, rng));
  const Matrix v_hat = sample_covariance(draws);

  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(spec.n_obs));
  for (Index i = 0; i < spec.n_obs; ++i) {
    Observation o;
    o.x = normal_vector(d_x, rng);
    Vector signal = Vector::Zero(spec.d_z);
    Vector x_pow = Vector::Ones(d_x);
    for (int q = 1; q <= spec.poly_degree; ++q) {
      x_pow = x_pow.cwiseProduct(o.x);
      signal += P.entries() * x_pow.cwiseProduct(truth.theta.col(q - 1));
    }
    o.y = kappa * signal + noise_scale * mvn_sample(zero, L, rng);
    o.v_hat = v_hat;
    o.v_true = truth.v_true;
    obs.push_back(std::move(o));
  }
  return ObservationPanel(std::move(obs));
}

double pve(const ObservationPanel& panel, const DesignMask& P, const Coefficients& theta) {
  const Index m = panel.size();
  if (m < 2) throw InsufficientSampleError("pve: needs m >= 2");
  const Index d_z = panel.asset_dim();

  Vector mean_y = Vector::Zero(d_z);
  for (Index i = 0; i < m; ++i) mean_y += panel[i].y;
  mean_y /= static_cast<double>(m);

  Vector sq_resid = Vector::Zero(d_z);
  Vector var_y = Vector::Zero(d_z);
  for (Index i = 0; i < m; ++i) {
    const Observation& o = panel[i];
    const Vector r = o.y - predict_returns(o.x, P, theta);
    sq_resid += r.cwiseAbs2();
    var_y += (o.y - mean_y).cwiseAbs2();
  }
  sq_resid /= static_cast<double>(m);
  var_y /= static_cast<double>(m - 1);

  double acc = 0.0;
  for (Index j = 0; j < d_z; ++j) {
    if (var_y[j] <= 0.0)
      throw EstimationError("pve: asset " + std::to_string(j) + " has zero return variance");
    acc += 1.0 - sq_resid[j] / var_y[j];
  }
  return acc / static_cast<double>(d_z);
}

namespace {

std::pair<ObservationPanel, ObservationPanel> split_half(const ObservationPanel& panel) {
  const Index m = panel.size();
  std::vector<Observation> head(panel.observations().begin(),
                                panel.observations().begin() + m / 2);
  std::vector<Observation> tail(panel.observations().begin() + m / 2,
                                panel.observations().end());
  return {ObservationPanel(std::move(head)), ObservationPanel(std::move(tail))};
}

double oos_mean_cost(const ObservationPanel& oos, const DesignMask& P,
                     const Coefficients& theta, double delta,
                     const NullspaceReduction* red) {
  double acc = 0.0;
  for (Index i = 0; i < oos.size(); ++i) {
    const Observation& o = oos[i];
    const Vector y_hat = predict_returns(o.x, P, theta);
    const Vector z = red ? solve_equality(y_hat, o.v_hat, delta, *red)
                         : solve_unconstrained(y_hat, o.v_hat, delta);
    acc += mvo_cost(z, o.y, *o.v_true, delta);
  }
  return acc / static_cast<double>(oos.size());
}

std::string cell_stream(const std::string& sim, std::initializer_list<double> params,
                        int trial) {
  std::ostringstream os;
  os << sim;
  for (double p : params) os << "/" << format_double(p);
  os << "/trial/" << trial;
  return os.str();
}

}  // namespace

std::vector<Sim1Row> run_sim1(const Sim1Config& cfg, const ExecContext& exec) {
  validate(cfg.base);
  if (cfg.region == RegionKind::Inequality)
    throw ConfigError("sim1: region must be unconstrained or equality");
  std::vector<Sim1Row> rows;

  for (double rho : cfg.rho_grid) {
    for (double snr : cfg.snr_grid) {
      for (Index res : cfg.res_grid) {
        SimSpec spec = cfg.base;
        spec.rho = rho;
        spec.snr = snr;
        spec.res = res;
        const Index d_z = spec.d_z;
        const DesignMask P = DesignMask::block(d_z, spec.d_x_per_asset);

        const int T = spec.n_trials;
        std::vector<double> cost_ols(T), cost_ipo(T), pve_ols(T), pve_ipo(T);

        exec.parallel_for(static_cast<std::size_t>(T), [&](std::size_t t) {
          const std::string stream =
              cell_stream("sim1", {rho, snr, double(res)}, static_cast<int>(t));
          const GroundTruth truth =
              generate_ground_truth(spec, derive_seed(spec.seed, stream + "/truth"));
          const ObservationPanel panel =
              generate_panel(spec, truth, derive_seed(spec.seed, stream + "/panel"));
          auto [insample, oos] = split_half(panel);

          const Coefficients ols = fit_ols(insample, P);
          Coefficients ipo;
          std::optional<NullspaceReduction> red;
          if (cfg.region == RegionKind::Equality) {
            red = nullspace_reduce(Matrix::Ones(1, d_z), Vector::Ones(1));
            ipo = solve_ipo(assemble_equality(insample, P, spec.delta, *red));
          } else {
            ipo = solve_ipo(assemble_unconstrained(insample, P, spec.delta));
          }

          const NullspaceReduction* red_ptr = red ? &*red : nullptr;
          cost_ols[t] = oos_mean_cost(oos, P, ols, spec.delta, red_ptr);
          cost_ipo[t] = oos_mean_cost(oos, P, ipo, spec.delta, red_ptr);
          pve_ols[t] = pve(oos, P, ols);
          pve_ipo[t] = pve(oos, P, ipo);
        });

        auto emit = [&](const std::string& method, const std::vector<double>& cost,
                        const std::vector<double>& pv) {
          Sim1Row row;
          row.rho = rho;
          row.snr = snr;
          row.res = res;
          row.method = method;
          row.mean_cost = mean(cost);
          row.cost_lo = percentile(cost, 0.025);
          row.cost_hi = percentile(cost, 0.975);
          row.mean_pve = mean(pv);
          row.pve_lo = percentile(pv, 0.025);
          row.pve_hi = percentile(pv, 0.975);
          row.per_trial_cost = cost;
          rows.push_back(std::move(row));
        };
        emit("OLS", cost_ols, pve_ols);
        emit("IPO", cost_ipo, pve_ipo);
      }
    }
  }
  return rows;
}

std::vector<Sim2Row> run_sim2(const Sim2Config& cfg, const ExecContext& exec) {
  if (cfg.region == RegionKind::Inequality)
    throw ConfigError("sim2: region must be unconstrained or equality");
  std::vector<Sim2Row> rows;
  using clock = std::chrono::steady_clock;

  for (Index d_z : cfg.d_z_grid) {
    SimSpec spec = cfg.base;
    spec.d_z = d_z;
    validate(spec);
    const DesignMask P = DesignMask::block(d_z, spec.d_x_per_asset);
    const int T = spec.n_trials;
    std::vector<double> sec_ols(T), sec_ipo(T), sec_grad(T), iters(T);

    // Trials run sequentially so each timing sees an unloaded machine; the
    // trainer gets the worker pool.
    for (int t = 0; t < T; ++t) {
      const std::string stream = cell_stream("sim2", {double(d_z)}, t);
      const GroundTruth truth =
          generate_ground_truth(spec, derive_seed(spec.seed, stream + "/truth"));
      const ObservationPanel panel =
          generate_panel(spec, truth, derive_seed(spec.seed, stream + "/panel"));
      auto [insample, oos] = split_half(panel);
      (void)oos;

      auto t0 = clock::now();
      const Coefficients ols = fit_ols(insample, P);
      sec_ols[t] = std::chrono::duration<double>(clock::now() - t0).count();
      (void)ols;

      t0 = clock::now();
      if (cfg.region == RegionKind::Equality) {
        const NullspaceReduction red = nullspace_reduce(Matrix::Ones(1, d_z), Vector::Ones(1));
        solve_ipo(assemble_equality(insample, P, spec.delta, red));
      } else {
        solve_ipo(assemble_unconstrained(insample, P, spec.delta));
      }
      sec_ipo[t] = std::chrono::duration<double>(clock::now() - t0).count();

      const FeasibleRegion region =
          cfg.region == RegionKind::Equality
              ? FeasibleRegion::equality(Matrix::Ones(1, d_z), Vector::Ones(1), spec.delta)
              : FeasibleRegion::unconstrained(d_z, spec.delta);
      TrainConfig train_cfg = cfg.train;
      train_cfg.seed = derive_seed(spec.seed, stream + "/train");
      t0 = clock::now();
      const TrainResult tr = train(insample, P, region, train_cfg, exec);
      sec_grad[t] = std::chrono::duration<double>(clock::now() - t0).count();
      iters[t] = tr.iterations;
    }

    auto emit = [&](const std::string& method, const std::vector<double>& secs, bool with_iters) {
      Sim2Row row;
      row.d_z = d_z;
      row.method = method;
      row.mean_seconds = mean(secs);
      row.sec_lo = percentile(secs, 0.025);
      row.sec_hi = percentile(secs, 0.975);
      if (with_iters) {
        row.mean_iterations = mean(iters);
        row.iter_lo = percentile(iters, 0.025);
        row.iter_hi = percentile(iters, 0.975);
      }
      rows.push_back(std::move(row));
    };
    emit("OLS", sec_ols, false);
    emit("IPO", sec_ipo, false);
    emit("IPO-GRAD", sec_grad, true);
  }
  return rows;
}

std::vector<Sim3Row> run_sim3(const Sim3Config& cfg, const ExecContext& exec) {
  std::vector<Sim3Row> rows;

  for (int p : cfg.p_grid) {
    for (double delta : cfg.delta_grid) {
      for (double gamma : cfg.gamma_grid) {
        SimSpec spec = cfg.base;
        spec.poly_degree = p;
        spec.delta = delta;
        spec.gamma = gamma;
        validate(spec);
        const Index d_z = spec.d_z;
        const DesignMask P = DesignMask::block(d_z, spec.d_x_per_asset);
        const FeasibleRegion region = FeasibleRegion::box(d_z, gamma, delta);

        const int T = spec.n_trials;
        std::vector<double> cost_ipo(T), cost_grad(T), in_ipo(T), in_grad(T);

        exec.parallel_for(static_cast<std::size_t>(T), [&](std::size_t t) {
          const std::string stream =
              cell_stream("sim3", {gamma, delta, double(p)}, static_cast<int>(t));
          const GroundTruth truth =
              generate_ground_truth(spec, derive_seed(spec.seed, stream + "/truth"));
          const ObservationPanel panel =
              generate_panel(spec, truth, derive_seed(spec.seed, stream + "/panel"));
          auto [insample, oos] = split_half(panel);

          // Heuristic: drop the box for estimation, keep it in the policy.
          const Coefficients ipo = solve_ipo(assemble_unconstrained(insample, P, delta));
          TrainConfig train_cfg = cfg.train;
          train_cfg.seed = derive_seed(spec.seed, stream + "/train");
          const Coefficients grad =
              train(insample, P, region, train_cfg, ExecContext::serial()).coefficients;

          in_ipo[t] = loss_full(insample, P, region, ipo);
          in_grad[t] = loss_full(insample, P, region, grad);

          auto oos_cost = [&](const Coefficients& theta) {
            IpmOptions opts;
            opts.retain_factorization = false;
            double acc = 0.0;
            for (Index i = 0; i < oos.size(); ++i) {
              const Observation& o = oos[i];
              const Vector y_hat = predict_returns(o.x, P, theta);
              const Vector z = solve_inequality(y_hat, o.v_hat, region, opts).z_star;
              acc += mvo_cost(z, o.y, *o.v_true, delta);
            }
            return acc / static_cast<double>(oos.size());
          };
          cost_ipo[t] = oos_cost(ipo);
          cost_grad[t] = oos_cost(grad);
        });

        auto emit = [&](const std::string& method, const std::vector<double>& cost,
                        const std::vector<double>& in_loss) {
          Sim3Row row;
          row.gamma = gamma;
          row.delta = delta;
          row.p = p;
          row.method = method;
          row.mean_oos_cost = mean(cost);
          row.cost_lo = percentile(cost, 0.025);
          row.cost_hi = percentile(cost, 0.975);
          row.mean_insample_loss = mean(in_loss);
          row.per_trial_cost = cost;
          rows.push_back(std::move(row));
        };
        emit("IPO", cost_ipo, in_ipo);
        emit("IPO-GRAD", cost_grad, in_grad);
      }
    }
  }
  return rows;
}

}  // namespace ipo
