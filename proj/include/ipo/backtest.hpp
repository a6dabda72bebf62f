#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ipo/covariance.hpp"
#include "ipo/exec.hpp"
#include "ipo/panel.hpp"
#include "ipo/trainer.hpp"

namespace ipo {

/// Daily market history: one row per trading day, ISO-8601 dates ascending.
struct MarketData {
  std::vector<std::string> dates;
  Matrix returns;   // days x d_z
  Matrix features;  // days x d_x
};

/// Loads aligned wide-format CSVs (date column first). Throws IngestError on
/// misaligned dates, listing the gaps.
MarketData load_market_data(const std::string& returns_csv, const std::string& features_csv);

/// Decision-program shape for the backtest: unconstrained, sum-constraint
/// equality, or the same equality plus a symmetric box.
struct RegionSpec {
  RegionKind kind = RegionKind::Unconstrained;
  double equality_sum = 0.0;
  double box_gamma = 0.125;

  FeasibleRegion build(Index d_z, double delta) const;
};

struct BacktestConfig {
  std::string train_start;
  std::string oos_start;
  std::string oos_end;
  int refit_every = 504;  // trading days between refits
  int execution_lag = 1;  // decision at close i earns y(i + lag)
  double delta = 50.0;
  EwmaConfig ewma{0.94, 0};
  RegionSpec region;
  TrainConfig train;  // IPO-GRAD settings
};

void validate(const BacktestConfig& cfg);

struct PerformanceReport {
  double annual_return = 0.0;
  double sharpe = 0.0;
  bool sharpe_degenerate = false;
  double volatility = 0.0;
  double avg_drawdown = 0.0;
  double value_at_risk = 0.0;
  double mvo_cost = 0.0;
  std::vector<double> daily_returns;
};

/// Metrics over realized daily returns: population mean/variance, 252-day
/// annualization, empirical 5% one-day VaR, mean running-peak drawdown on the
/// cumulative-sum equity curve. Zero variance flags sharpe degenerate.
PerformanceReport metrics(const std::vector<double>& daily_returns, double delta);

struct FoldFit {
  std::string start_date;
  Coefficients coefficients;
};

struct BacktestResult {
  PerformanceReport report;
  std::vector<std::string> decision_dates;
  Matrix weights;  // decisions x d_z
  std::vector<FoldFit> fold_fits;
};

/// Walk-forward evaluation: coefficients refit every refit_every trading days
/// on all data strictly before the fold, EWMA covariance through the decision
/// day, portfolio return realized execution_lag days later. The estimators
/// see the EWMA estimate in both covariance slots.
BacktestResult run_backtest(const MarketData& data, const DesignMask& P,
                            const BacktestConfig& cfg, EstimatorTag estimator,
                            const ExecContext& exec = ExecContext::serial());

struct DominanceRatio {
  double mvo = 0.0;
  double sharpe = 0.0;
  int n_samples = 0;
};

/// Shared-index bootstrap: draws n_samples subsets of sample_size days
/// without replacement (the same indices for both series), computes the
/// realized MVO and Sharpe-ratio costs, and reports the fraction of samples
/// where series_a's cost is strictly below series_b's.
DominanceRatio bootstrap_dominance(const std::vector<double>& returns_a,
                                   const std::vector<double>& returns_b, double delta,
                                   int n_samples, Index sample_size, std::uint64_t seed);

}  // namespace ipo
