#include "ipo/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ipo/csv.hpp"
#include "ipo/estimators.hpp"
#include "ipo/rng.hpp"
#include "ipo/solver.hpp"
#include "ipo/stats.hpp"

namespace ipo {

MarketData load_market_data(const std::string& returns_csv, const std::string& features_csv) {
  const CsvTable ret = read_csv(returns_csv);
  const CsvTable feat = read_csv(features_csv);
  if (ret.columns.empty() || ret.columns.front() != "date")
    throw IngestError("backtest: '" + returns_csv + "' must start with a date column");
  if (feat.columns.empty() || feat.columns.front() != "date")
    throw IngestError("backtest: '" + features_csv + "' must start with a date column");

  if (ret.rows.size() != feat.rows.size()) {
    std::ostringstream os;
    os << "backtest: date mismatch, " << ret.rows.size() << " return days vs "
       << feat.rows.size() << " feature days";
    throw IngestError(os.str());
  }

  MarketData data;
  const Index d_z = static_cast<Index>(ret.columns.size()) - 1;
  const Index d_x = static_cast<Index>(feat.columns.size()) - 1;
  const Index days = static_cast<Index>(ret.rows.size());
  if (d_z < 1 || d_x < 1) throw IngestError("backtest: no data columns");
  data.returns.resize(days, d_z);
  data.features.resize(days, d_x);
  data.dates.reserve(static_cast<std::size_t>(days));

  std::vector<std::string> gaps;
  for (std::size_t r = 0; r < ret.rows.size(); ++r) {
    const std::string& date = ret.rows[r][0];
    if (feat.rows[r][0] != date)
      gaps.push_back(date + " vs " + feat.rows[r][0]);
    if (r > 0 && !(ret.rows[r - 1][0] < date))
      throw IngestError("backtest: dates not strictly ascending at " + date);
    data.dates.push_back(date);
    for (Index c = 0; c < d_z; ++c)
      data.returns(static_cast<Index>(r), c) = ret.number(r, c + 1);
    for (Index c = 0; c < d_x; ++c)
      data.features(static_cast<Index>(r), c) = feat.number(r, c + 1);
  }
  if (!gaps.empty()) {
    std::ostringstream os;
    os << "backtest: misaligned dates between returns and features:";
    for (std::size_t i = 0; i < std::min<std::size_t>(gaps.size(), 10); ++i)
      os << " " << gaps[i];
    if (gaps.size() > 10) os << " (+" << gaps.size() - 10 << " more)";
    throw IngestError(os.str());
  }
  return data;
}

FeasibleRegion RegionSpec::build(Index d_z, double delta) const {
  switch (kind) {
    case RegionKind::Unconstrained:
      return FeasibleRegion::unconstrained(d_z, delta);
    case RegionKind::Equality:
      return FeasibleRegion::equality(Matrix::Ones(1, d_z),
                                      Vector::Constant(1, equality_sum), delta);
    case RegionKind::Inequality: {
      Matrix G(2 * d_z, d_z);
      G << Matrix::Identity(d_z, d_z), -Matrix::Identity(d_z, d_z);
      return FeasibleRegion::inequality(Matrix::Ones(1, d_z),
                                        Vector::Constant(1, equality_sum), std::move(G),
                                        Vector::Constant(2 * d_z, box_gamma), delta);
    }
  }
  throw ConfigError("backtest: unknown region kind");
}

void validate(const BacktestConfig& cfg) {
  if (!(cfg.train_start < cfg.oos_start && cfg.oos_start < cfg.oos_end))
    throw ConfigError("backtest: need train_start < oos_start < oos_end");
  if (cfg.refit_every <= 0) throw ConfigError("backtest: refit_every must be positive");
  if (cfg.execution_lag < 1) throw ConfigError("backtest: execution_lag must be >= 1");
  if (cfg.delta <= 0.0) throw ConfigError("backtest: delta must be positive");
}

PerformanceReport metrics(const std::vector<double>& daily_returns, double delta) {
  if (daily_returns.size() < 2)
    throw InsufficientSampleError("metrics: needs at least 2 daily returns");
  PerformanceReport rep;
  rep.daily_returns = daily_returns;

  const double mu = mean(daily_returns);
  const double var = variance_population(daily_returns);
  const double sd = std::sqrt(var);
  rep.mvo_cost = -mu + 0.5 * delta * var;
  rep.annual_return = 252.0 * mu;
  rep.volatility = std::sqrt(252.0) * sd;
  // Constant series leave rounding dust in the variance; treat anything at
  // machine scale as degenerate rather than dividing by it.
  if (sd <= 1e-15 * std::max(1.0, std::abs(mu))) {
    rep.sharpe_degenerate = true;
    rep.sharpe = std::numeric_limits<double>::quiet_NaN();
    rep.volatility = 0.0;
  } else {
    rep.sharpe = std::sqrt(252.0) * mu / sd;
  }
  rep.value_at_risk = percentile(daily_returns, 0.05);

  double equity = 0.0, peak = 0.0, dd_acc = 0.0;
  for (double r : daily_returns) {
    equity += r;
    peak = std::max(peak, equity);
    dd_acc += equity - peak;
  }
  rep.avg_drawdown = dd_acc / static_cast<double>(daily_returns.size());
  return rep;
}

namespace {

Index date_lower_bound(const std::vector<std::string>& dates, const std::string& target) {
  const auto it = std::lower_bound(dates.begin(), dates.end(), target);
  return static_cast<Index>(it - dates.begin());
}

Coefficients fit_estimator(const ObservationPanel& panel, const DesignMask& P,
                           const BacktestConfig& cfg, EstimatorTag estimator,
                           const ExecContext& exec) {
  switch (estimator) {
    case EstimatorTag::Ols:
      return fit_ols(panel, P);
    case EstimatorTag::IpoUnconstrained:
    case EstimatorTag::IpoEquality: {
      if (cfg.region.kind == RegionKind::Unconstrained)
        return solve_ipo(assemble_unconstrained(panel, P, cfg.delta));
      // Equality and inequality regions share the analytic equality fit:
      // the box, when present, is dropped for estimation and enforced by
      // the realized policy.
      const Index d_z = panel.asset_dim();
      const NullspaceReduction red = nullspace_reduce(
          Matrix::Ones(1, d_z), Vector::Constant(1, cfg.region.equality_sum));
      return solve_ipo(assemble_equality(panel, P, cfg.delta, red));
    }
    case EstimatorTag::IpoGrad: {
      const FeasibleRegion region = cfg.region.build(panel.asset_dim(), cfg.delta);
      TrainConfig tc = cfg.train;
      return train(panel, P, region, tc, exec).coefficients;
    }
    case EstimatorTag::IpoUnbiased: {
      if (cfg.region.kind == RegionKind::Unconstrained) {
        const Coefficients star = solve_ipo(assemble_unconstrained(panel, P, cfg.delta));
        return unbias(panel, P, cfg.delta, star, IpoCase::Unconstrained);
      }
      const Index d_z = panel.asset_dim();
      const NullspaceReduction red = nullspace_reduce(
          Matrix::Ones(1, d_z), Vector::Constant(1, cfg.region.equality_sum));
      const Coefficients star = solve_ipo(assemble_equality(panel, P, cfg.delta, red));
      return unbias(panel, P, cfg.delta, star, IpoCase::Equality, &red);
    }
  }
  throw ConfigError("backtest: unsupported estimator");
}

}  // namespace

BacktestResult run_backtest(const MarketData& data, const DesignMask& P,
                            const BacktestConfig& cfg, EstimatorTag estimator,
                            const ExecContext& exec) {
  validate(cfg);
  const Index days = static_cast<Index>(data.dates.size());
  const Index d_z = data.returns.cols();
  if (P.asset_dim() != d_z || P.feature_dim() != data.features.cols())
    throw IngestError("backtest: design mask does not match the data columns");

  EwmaConfig ewma = cfg.ewma;
  if (ewma.burn_in == 0) ewma.burn_in = 2 * (d_z + 1);

  std::vector<Vector> returns;
  returns.reserve(static_cast<std::size_t>(days));
  for (Index t = 0; t < days; ++t) returns.push_back(data.returns.row(t).transpose());
  const CovarianceSeries covs = ewma_covariance(returns, ewma);

  const Index train_begin = std::max(date_lower_bound(data.dates, cfg.train_start),
                                     covs.first_day);
  const Index oos_begin = date_lower_bound(data.dates, cfg.oos_start);
  Index oos_end = date_lower_bound(data.dates, cfg.oos_end);
  if (oos_end < days && data.dates[static_cast<std::size_t>(oos_end)] == cfg.oos_end)
    ++oos_end;  // oos_end is inclusive
  if (oos_begin >= days)
    throw IngestError("backtest: data ends before oos_start " + cfg.oos_start);
  if (oos_begin <= train_begin)
    throw IngestError("backtest: no training data before oos_start (check train_start and burn-in)");
  // Decisions need a realized return execution_lag days later.
  oos_end = std::min(oos_end, days - cfg.execution_lag);
  if (oos_end <= oos_begin)
    throw IngestError("backtest: out-of-sample window is empty after lag truncation");

  const FeasibleRegion region = cfg.region.build(d_z, cfg.delta);
  std::optional<NullspaceReduction> red;
  if (region.kind() != RegionKind::Unconstrained)
    red = nullspace_reduce(region.A(), region.b());

  auto build_training_panel = [&](Index fold_start) {
    // Pairs (x_t, y_{t+lag}) with the pair's return strictly before the fold.
    std::vector<Observation> obs;
    for (Index t = train_begin; t + cfg.execution_lag < fold_start; ++t) {
      Observation o;
      o.x = data.features.row(t).transpose();
      o.y = data.returns.row(t + cfg.execution_lag).transpose();
      o.v_hat = covs.at_day(t);
      o.v_true = o.v_hat;  // estimate substituted for the realized covariance
      obs.push_back(std::move(o));
    }
    if (obs.size() < 2)
      throw IngestError("backtest: fewer than 2 training observations before fold");
    return ObservationPanel(std::move(obs));
  };

  BacktestResult result;
  result.weights.resize(oos_end - oos_begin, d_z);
  std::vector<double> daily;
  daily.reserve(static_cast<std::size_t>(oos_end - oos_begin));

  IpmOptions ipm_opts;
  ipm_opts.retain_factorization = false;

  for (Index fold_start = oos_begin; fold_start < oos_end;
       fold_start += cfg.refit_every) {
    const Index fold_end = std::min<Index>(fold_start + cfg.refit_every, oos_end);
    const ObservationPanel training = build_training_panel(fold_start);
    const Coefficients theta = fit_estimator(training, P, cfg, estimator, exec);
    result.fold_fits.push_back(
        {data.dates[static_cast<std::size_t>(fold_start)], theta});

    for (Index i = fold_start; i < fold_end; ++i) {
      const Vector x = data.features.row(i).transpose();
      const Vector y_hat = predict_returns(x, P, theta);
      const Matrix& v_hat = covs.at_day(i);
      Vector z;
      try {
        switch (region.kind()) {
          case RegionKind::Unconstrained:
            z = solve_unconstrained(y_hat, v_hat, cfg.delta);
            break;
          case RegionKind::Equality:
            z = solve_equality(y_hat, v_hat, cfg.delta, *red);
            break;
          case RegionKind::Inequality:
            z = solve_inequality(y_hat, v_hat, region, ipm_opts).z_star;
            break;
        }
      } catch (const SolverError& e) {
        throw SolverError("backtest: decision failed on " +
                          data.dates[static_cast<std::size_t>(i)] + ": " + e.what());
      }
      result.weights.row(i - oos_begin) = z.transpose();
      result.decision_dates.push_back(data.dates[static_cast<std::size_t>(i)]);
      daily.push_back(z.dot(data.returns.row(i + cfg.execution_lag).transpose()));
    }
  }

  result.report = metrics(daily, cfg.delta);
  return result;
}

DominanceRatio bootstrap_dominance(const std::vector<double>& returns_a,
                                   const std::vector<double>& returns_b, double delta,
                                   int n_samples, Index sample_size, std::uint64_t seed) {
  if (returns_a.size() != returns_b.size())
    throw PanelError("bootstrap: series lengths differ");
  const Index n = static_cast<Index>(returns_a.size());
  if (n < sample_size)
    throw InsufficientSampleError("bootstrap: series shorter than the sample size");
  if (n_samples < 1 || sample_size < 2)
    throw ConfigError("bootstrap: need n_samples >= 1 and sample_size >= 2");

  auto costs = [&](const std::vector<double>& series, const std::vector<Index>& idx) {
    std::vector<double> sub;
    sub.reserve(idx.size());
    for (Index i : idx) sub.push_back(series[static_cast<std::size_t>(i)]);
    const double mu = mean(sub);
    const double sd = std::sqrt(variance_population(sub));
    const double c_mvo = -mu + 0.5 * delta * sd * sd;
    const double c_sr = sd > 0.0 ? -mu / sd : std::numeric_limits<double>::quiet_NaN();
    return std::pair<double, double>(c_mvo, c_sr);
  };

  int win_mvo = 0, win_sr = 0;
  std::vector<Index> pool(static_cast<std::size_t>(n));
  for (int k = 0; k < n_samples; ++k) {
    std::mt19937_64 rng = make_rng(seed, "bootstrap/" + std::to_string(k));
    std::iota(pool.begin(), pool.end(), Index(0));
    // Identical index set for both series (partial Fisher-Yates).
    for (Index j = 0; j < sample_size; ++j) {
      std::uniform_int_distribution<Index> pick(j, n - 1);
      std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    const std::vector<Index> idx(pool.begin(), pool.begin() + sample_size);
    const auto [mvo_a, sr_a] = costs(returns_a, idx);
    const auto [mvo_b, sr_b] = costs(returns_b, idx);
    if (mvo_a < mvo_b) ++win_mvo;
    if (sr_a < sr_b) ++win_sr;  // NaN comparisons never count
  }

  DominanceRatio dr;
  dr.n_samples = n_samples;
  dr.mvo = static_cast<double>(win_mvo) / n_samples;
  dr.sharpe = static_cast<double>(win_sr) / n_samples;
  return dr;
}

}  // namespace ipo
