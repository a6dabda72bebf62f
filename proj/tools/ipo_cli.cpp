// Experiment driver: simulation protocols, walk-forward backtests and direct
// coefficient fits, all emitting plot-ready CSV/JSON plus a run manifest.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "ipo/backtest.hpp"
#include "ipo/config.hpp"
#include "ipo/csv.hpp"
#include "ipo/estimators.hpp"
#include "ipo/manifest.hpp"
#include "ipo/rng.hpp"
#include "ipo/simlab.hpp"
#include "ipo/solver.hpp"
#include "ipo/stats.hpp"
#include "ipo/trainer.hpp"

namespace fs = std::filesystem;
using namespace ipo;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;  // backtest / fit only
  unsigned threads = 0;
  std::optional<std::uint64_t> seed_override;
  bool verbose = false;
};

ExecContext make_exec(const CommonArgs& args) {
  return args.threads == 0 ? ExecContext::hardware() : ExecContext(args.threads);
}

std::uint64_t effective_seed(const CommonArgs& args, const IniConfig& cfg) {
  if (args.seed_override) return *args.seed_override;
  return cfg.get_uint64("run", "seed", 0);
}

RegionKind parse_region(const std::string& name) {
  if (name == "unconstrained") return RegionKind::Unconstrained;
  if (name == "equality") return RegionKind::Equality;
  if (name == "inequality") return RegionKind::Inequality;
  throw ConfigError("config: unknown region '" + name +
                    "' (expected unconstrained|equality|inequality)");
}

EstimatorTag parse_estimator(const std::string& name, bool allow_unbiased) {
  if (name == "OLS") return EstimatorTag::Ols;
  if (name == "IPO") return EstimatorTag::IpoUnconstrained;  // region decides the case
  if (name == "IPO-GRAD") return EstimatorTag::IpoGrad;
  if (allow_unbiased && name == "IPO-UNBIASED") return EstimatorTag::IpoUnbiased;
  throw ConfigError("config: unknown estimator '" + name + "'");
}

TrainConfig parse_train(const IniConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.step_size = cfg.get_double("train", "step_size", 0.05);
  tc.batch_size = cfg.get_int("train", "batch_size", 0);
  tc.max_iters = static_cast<int>(cfg.get_int("train", "max_iters", 2000));
  tc.grad_tol = cfg.get_double("train", "grad_tol", 1e-6);
  tc.smoothing = cfg.get_double("train", "smoothing", 0.0);
  tc.seed = derive_seed(seed, "train");
  return tc;
}

SimSpec parse_sim_base(const IniConfig& cfg, std::uint64_t seed) {
  SimSpec spec;
  spec.d_z = cfg.get_int("sim", "d_z", spec.d_z);
  spec.d_x_per_asset = cfg.get_int("sim", "d_x_per_asset", spec.d_x_per_asset);
  spec.sigma = cfg.get_double("sim", "sigma", spec.sigma);
  spec.n_obs = cfg.get_int("sim", "n_obs", spec.n_obs);
  spec.n_trials = cfg.get_int("sim", "n_trials", spec.n_trials);
  spec.seed = seed;
  return spec;
}

RunManifest start_manifest(const std::string& command, const IniConfig& cfg,
                           std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_echo = cfg.flatten();
  m.seed = seed;
  m.started_at = utc_timestamp();
  m.library_version = kLibraryVersion;
  return m;
}

void finish_manifest(RunManifest& m, const std::string& out_dir) {
  m.finished_at = utc_timestamp();
  write_manifest((fs::path(out_dir) / "manifest.json").string(), m);
}

const std::set<std::string> kRunKeys{"seed"};
const std::set<std::string> kTrainKeys{"step_size", "batch_size", "max_iters", "grad_tol",
                                       "smoothing"};

int cmd_sim1(const CommonArgs& args) {
  const IniConfig cfg = IniConfig::parse_file(args.config_path);
  cfg.require_known_keys({{"sim",
                           {"d_z", "d_x_per_asset", "sigma", "delta", "n_obs", "n_trials",
                            "rho", "snr", "res", "region"}},
                          {"run", kRunKeys}});
  const std::uint64_t seed = effective_seed(args, cfg);

  Sim1Config sc;
  sc.base = parse_sim_base(cfg, seed);
  sc.base.delta = cfg.get_double("sim", "delta", 1.0);
  if (cfg.has("sim", "rho")) sc.rho_grid = cfg.get_double_list("sim", "rho");
  if (cfg.has("sim", "snr")) sc.snr_grid = cfg.get_double_list("sim", "snr");
  if (cfg.has("sim", "res")) {
    sc.res_grid.clear();
    for (long r : cfg.get_int_list("sim", "res")) sc.res_grid.push_back(r);
  }
  sc.region = parse_region(cfg.get_string("sim", "region", "equality"));

  RunManifest manifest = start_manifest("sim1", cfg, seed);
  const auto rows = run_sim1(sc, make_exec(args));

  std::vector<std::vector<std::string>> out;
  for (const Sim1Row& r : rows) {
    out.push_back({format_double(r.rho), format_double(r.snr), std::to_string(r.res),
                   r.method, format_double(r.mean_cost), format_double(r.cost_lo),
                   format_double(r.cost_hi), format_double(r.mean_pve),
                   format_double(r.pve_lo), format_double(r.pve_hi)});
  }
  const std::string path = (fs::path(args.out_dir) / "sim1.csv").string();
  write_csv(path,
            {"rho", "snr", "res", "method", "mean_cost", "cost_p025", "cost_p975",
             "mean_pve", "pve_p025", "pve_p975"},
            out);
  manifest.add_output(path);
  finish_manifest(manifest, args.out_dir);
  return 0;
}

int cmd_sim2(const CommonArgs& args) {
  const IniConfig cfg = IniConfig::parse_file(args.config_path);
  cfg.require_known_keys({{"sim",
                           {"d_z", "d_x_per_asset", "sigma", "delta", "n_obs", "n_trials",
                            "rho", "snr", "res", "region"}},
                          {"train", kTrainKeys},
                          {"run", kRunKeys}});
  const std::uint64_t seed = effective_seed(args, cfg);

  Sim2Config sc;
  sc.base = parse_sim_base(cfg, seed);
  sc.base.d_x_per_asset = cfg.get_int("sim", "d_x_per_asset", 3);
  sc.base.rho = cfg.get_double("sim", "rho", 0.0);
  sc.base.snr = cfg.get_double("sim", "snr", 0.005);
  sc.base.res = cfg.get_int("sim", "res", 20);
  sc.base.delta = cfg.get_double("sim", "delta", 1.0);
  if (cfg.has("sim", "d_z")) {
    sc.d_z_grid.clear();
    for (long d : cfg.get_int_list("sim", "d_z")) sc.d_z_grid.push_back(d);
  }
  sc.region = parse_region(cfg.get_string("sim", "region", "unconstrained"));
  sc.train = parse_train(cfg, seed);

  RunManifest manifest = start_manifest("sim2", cfg, seed);
  const auto rows = run_sim2(sc, make_exec(args));

  std::vector<std::vector<std::string>> out;
  for (const Sim2Row& r : rows) {
    out.push_back({std::to_string(r.d_z), r.method, format_double(r.mean_seconds),
                   format_double(r.sec_lo), format_double(r.sec_hi),
                   format_double(r.mean_iterations), format_double(r.iter_lo),
                   format_double(r.iter_hi)});
  }
  const std::string path = (fs::path(args.out_dir) / "sim2.csv").string();
  write_csv(path,
            {"d_z", "method", "mean_seconds", "sec_p025", "sec_p975", "mean_iterations",
             "iter_p025", "iter_p975"},
            out);
  manifest.add_output(path);
  finish_manifest(manifest, args.out_dir);
  return 0;
}

int cmd_sim3(const CommonArgs& args) {
  const IniConfig cfg = IniConfig::parse_file(args.config_path);
  cfg.require_known_keys({{"sim",
                           {"d_z", "d_x_per_asset", "sigma", "delta", "n_obs", "n_trials",
                            "rho", "snr", "res", "gamma", "poly_degree"}},
                          {"train", kTrainKeys},
                          {"run", kRunKeys}});
  const std::uint64_t seed = effective_seed(args, cfg);

  Sim3Config sc;
  sc.base = parse_sim_base(cfg, seed);
  sc.base.d_x_per_asset = cfg.get_int("sim", "d_x_per_asset", 3);
  sc.base.rho = cfg.get_double("sim", "rho", 0.0);
  sc.base.snr = cfg.get_double("sim", "snr", 0.005);
  sc.base.res = cfg.get_int("sim", "res", 20);
  if (cfg.has("sim", "gamma")) sc.gamma_grid = cfg.get_double_list("sim", "gamma");
  if (cfg.has("sim", "delta")) sc.delta_grid = cfg.get_double_list("sim", "delta");
  if (cfg.has("sim", "poly_degree")) {
    sc.p_grid.clear();
    for (long p : cfg.get_int_list("sim", "poly_degree")) sc.p_grid.push_back(int(p));
  }
  sc.train = parse_train(cfg, seed);

  RunManifest manifest = start_manifest("sim3", cfg, seed);
  const auto rows = run_sim3(sc, make_exec(args));

  std::vector<std::vector<std::string>> out;
  for (const Sim3Row& r : rows) {
    out.push_back({format_double(r.gamma), format_double(r.delta), std::to_string(r.p),
                   r.method, format_double(r.mean_oos_cost), format_double(r.cost_lo),
                   format_double(r.cost_hi), format_double(r.mean_insample_loss)});
  }
  const std::string path = (fs::path(args.out_dir) / "sim3.csv").string();
  write_csv(path,
            {"gamma", "delta", "p", "method", "mean_oos_cost", "cost_p025", "cost_p975",
             "mean_insample_loss"},
            out);
  manifest.add_output(path);
  finish_manifest(manifest, args.out_dir);
  return 0;
}

void write_coefficients_csv(const std::string& path, const std::vector<std::string>& names,
                            const Coefficients& coef) {
  std::vector<std::vector<std::string>> rows;
  for (Index k = 0; k < coef.theta.size(); ++k) {
    rows.push_back({names[static_cast<std::size_t>(k)], format_double(coef.theta[k]),
                    coef.std_err ? format_double((*coef.std_err)[k]) : ""});
  }
  write_csv(path, {"feature", "theta", "std_err"}, rows);
}

nlohmann::json report_json(const PerformanceReport& rep) {
  nlohmann::json j;
  j["annual_return"] = rep.annual_return;
  if (rep.sharpe_degenerate)
    j["sharpe"] = nullptr;
  else
    j["sharpe"] = rep.sharpe;
  j["sharpe_degenerate"] = rep.sharpe_degenerate;
  j["volatility"] = rep.volatility;
  j["avg_drawdown"] = rep.avg_drawdown;
  j["value_at_risk"] = rep.value_at_risk;
  j["mvo_cost"] = rep.mvo_cost;
  return j;
}

int cmd_backtest(const CommonArgs& args) {
  const IniConfig cfg = IniConfig::parse_file(args.config_path);
  cfg.require_known_keys(
      {{"data", {"returns", "features", "features_per_asset"}},
       {"backtest",
        {"train_start", "oos_start", "oos_end", "refit_every", "execution_lag", "delta",
         "estimators", "region", "equality_sum", "box_gamma"}},
       {"ewma", {"decay", "burn_in"}},
       {"bootstrap", {"n_samples", "sample_size"}},
       {"train", kTrainKeys},
       {"run", kRunKeys}});
  const std::uint64_t seed = effective_seed(args, cfg);

  const fs::path data_dir(args.data_dir);
  if (!fs::is_directory(data_dir))
    throw IngestError("backtest: data directory '" + args.data_dir + "' does not exist");
  const MarketData data =
      load_market_data((data_dir / cfg.get_string("data", "returns", "returns.csv")).string(),
                       (data_dir / cfg.get_string("data", "features", "features.csv")).string());

  const Index per_asset = cfg.get_int("data", "features_per_asset", 1);
  const Index d_z = data.returns.cols();
  if (data.features.cols() != d_z * per_asset)
    throw IngestError("backtest: feature columns do not match d_z * features_per_asset");
  const DesignMask P = DesignMask::block(d_z, per_asset);

  BacktestConfig bc;
  bc.train_start = cfg.get_string("backtest", "train_start");
  bc.oos_start = cfg.get_string("backtest", "oos_start");
  bc.oos_end = cfg.get_string("backtest", "oos_end");
  bc.refit_every = static_cast<int>(cfg.get_int("backtest", "refit_every", 504));
  bc.execution_lag = static_cast<int>(cfg.get_int("backtest", "execution_lag", 1));
  bc.delta = cfg.get_double("backtest", "delta", 50.0);
  bc.ewma.decay = cfg.get_double("ewma", "decay", 0.94);
  bc.ewma.burn_in = cfg.get_int("ewma", "burn_in", 0);
  bc.region.kind = parse_region(cfg.get_string("backtest", "region", "unconstrained"));
  bc.region.equality_sum = cfg.get_double("backtest", "equality_sum", 0.0);
  bc.region.box_gamma = cfg.get_double("backtest", "box_gamma", 0.125);
  bc.train = parse_train(cfg, seed);

  std::vector<std::string> estimator_names = {"OLS", "IPO"};
  if (cfg.has("backtest", "estimators"))
    estimator_names = cfg.get_string_list("backtest", "estimators");

  RunManifest manifest = start_manifest("backtest", cfg, seed);
  manifest.metadata.emplace_back("training_covariance",
                                 "ewma estimate substituted for the realized covariance");
  const ExecContext exec = make_exec(args);

  std::vector<std::string> feature_names(data.features.cols() > 0
                                             ? static_cast<std::size_t>(data.features.cols())
                                             : 0);
  {
    const CsvTable feat = read_csv(
        (data_dir / cfg.get_string("data", "features", "features.csv")).string());
    for (std::size_t c = 1; c < feat.columns.size(); ++c) feature_names[c - 1] = feat.columns[c];
  }

  nlohmann::json report;
  report["config"] = nlohmann::json::object();
  for (const auto& [k, v] : cfg.flatten()) report["config"][k] = v;
  report["estimators"] = nlohmann::json::object();

  std::map<std::string, BacktestResult> results;
  for (const std::string& name : estimator_names) {
    const EstimatorTag tag = parse_estimator(name, true);
    if (args.verbose) std::cerr << "backtest: running estimator " << name << "\n";
    BacktestResult res = run_backtest(data, P, bc, tag, exec);
    report["estimators"][name] = report_json(res.report);

    const std::string coef_path =
        (fs::path(args.out_dir) / ("coefficients_" + name + ".csv")).string();
    write_coefficients_csv(coef_path, feature_names, res.fold_fits.back().coefficients);
    manifest.add_output(coef_path);
    results.emplace(name, std::move(res));
  }

  // Pairwise dominance on the shared out-of-sample windows.
  if (estimator_names.size() >= 2) {
    const int n_samples = static_cast<int>(cfg.get_int("bootstrap", "n_samples", 1000));
    const Index sample_size = cfg.get_int("bootstrap", "sample_size", 252);
    nlohmann::json dom = nlohmann::json::object();
    for (std::size_t a = 0; a < estimator_names.size(); ++a) {
      for (std::size_t b = 0; b < estimator_names.size(); ++b) {
        if (a == b) continue;
        const auto& ra = results.at(estimator_names[a]).report.daily_returns;
        const auto& rb = results.at(estimator_names[b]).report.daily_returns;
        const DominanceRatio dr = bootstrap_dominance(ra, rb, bc.delta, n_samples,
                                                      sample_size, derive_seed(seed, "dr"));
        nlohmann::json entry;
        entry["dr_mvo"] = dr.mvo;
        entry["dr_sharpe"] = dr.sharpe;
        entry["n_samples"] = dr.n_samples;
        dom[estimator_names[a] + "_vs_" + estimator_names[b]] = entry;
      }
    }
    report["bootstrap_dominance"] = dom;
  }

  const std::string report_path = (fs::path(args.out_dir) / "report.json").string();
  {
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
  }
  manifest.add_output(report_path);

  // Daily returns, one column per estimator, indexed by decision date.
  {
    const auto& first = results.at(estimator_names.front());
    std::vector<std::string> cols = {"date"};
    for (const auto& n : estimator_names) cols.push_back(n);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < first.decision_dates.size(); ++i) {
      std::vector<std::string> row = {first.decision_dates[i]};
      for (const auto& n : estimator_names)
        row.push_back(format_double(results.at(n).report.daily_returns[i]));
      rows.push_back(std::move(row));
    }
    const std::string daily_path = (fs::path(args.out_dir) / "daily.csv").string();
    write_csv(daily_path, cols, rows);
    manifest.add_output(daily_path);
  }

  finish_manifest(manifest, args.out_dir);
  return 0;
}

// Long-format per-date covariance blocks: date,row,col,value with symbols
// matching the returns header. Entries are mirrored.
std::map<std::string, Matrix> load_covariance_blocks(const std::string& path,
                                                     const std::vector<std::string>& symbols) {
  const CsvTable table = read_csv(path);
  std::map<std::string, Index> sym_index;
  for (std::size_t i = 0; i < symbols.size(); ++i)
    sym_index[symbols[i]] = static_cast<Index>(i);
  const Index d = static_cast<Index>(symbols.size());

  std::map<std::string, Matrix> blocks;
  const Index c_date = table.column_index("date");
  const Index c_row = table.column_index("row");
  const Index c_col = table.column_index("col");
  const Index c_val = table.column_index("value");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& date = table.rows[r][static_cast<std::size_t>(c_date)];
    auto [it, inserted] = blocks.try_emplace(date, Matrix::Zero(d, d));
    const auto ri = sym_index.find(table.rows[r][static_cast<std::size_t>(c_row)]);
    const auto ci = sym_index.find(table.rows[r][static_cast<std::size_t>(c_col)]);
    if (ri == sym_index.end() || ci == sym_index.end())
      throw IngestError("covariance: unknown symbol at line " + std::to_string(r + 2));
    const double v = table.number(r, c_val);
    it->second(ri->second, ci->second) = v;
    it->second(ci->second, ri->second) = v;
  }
  return blocks;
}

int cmd_fit(const CommonArgs& args) {
  const IniConfig cfg = IniConfig::parse_file(args.config_path);
  cfg.require_known_keys(
      {{"data", {"returns", "features", "features_per_asset", "covariance"}},
       {"fit", {"estimators", "delta", "region", "equality_sum", "box_gamma", "lag"}},
       {"ewma", {"decay", "burn_in"}},
       {"train", kTrainKeys},
       {"run", kRunKeys}});
  const std::uint64_t seed = effective_seed(args, cfg);

  const fs::path data_dir(args.data_dir);
  if (!fs::is_directory(data_dir))
    throw IngestError("fit: data directory '" + args.data_dir + "' does not exist");
  const std::string returns_name = cfg.get_string("data", "returns", "returns.csv");
  const MarketData data =
      load_market_data((data_dir / returns_name).string(),
                       (data_dir / cfg.get_string("data", "features", "features.csv")).string());
  const Index per_asset = cfg.get_int("data", "features_per_asset", 1);
  const Index d_z = data.returns.cols();
  if (data.features.cols() != d_z * per_asset)
    throw IngestError("fit: feature columns do not match d_z * features_per_asset");
  const DesignMask P = DesignMask::block(d_z, per_asset);

  const double delta = cfg.get_double("fit", "delta", 1.0);
  RegionSpec region;
  region.kind = parse_region(cfg.get_string("fit", "region", "unconstrained"));
  region.equality_sum = cfg.get_double("fit", "equality_sum", 0.0);
  region.box_gamma = cfg.get_double("fit", "box_gamma", 0.125);
  const int lag = static_cast<int>(cfg.get_int("fit", "lag", 1));
  if (lag < 0) throw ConfigError("fit: lag must be nonnegative");

  // Covariance: EWMA by default, or supplied per-date blocks.
  const Index days = static_cast<Index>(data.dates.size());
  std::vector<Matrix> cov_by_day(static_cast<std::size_t>(days));
  Index first_day = 0;
  const std::string cov_source = cfg.get_string("data", "covariance", "ewma");
  if (cov_source == "ewma") {
    EwmaConfig ewma;
    ewma.decay = cfg.get_double("ewma", "decay", 0.94);
    ewma.burn_in = cfg.get_int("ewma", "burn_in", 0);
    if (ewma.burn_in == 0) ewma.burn_in = 2 * (d_z + 1);
    std::vector<Vector> returns;
    for (Index t = 0; t < days; ++t) returns.push_back(data.returns.row(t).transpose());
    const CovarianceSeries covs = ewma_covariance(returns, ewma);
    first_day = covs.first_day;
    for (Index t = first_day; t < days; ++t)
      cov_by_day[static_cast<std::size_t>(t)] = covs.at_day(t);
  } else {
    const CsvTable ret_table = read_csv((data_dir / returns_name).string());
    std::vector<std::string> symbols(ret_table.columns.begin() + 1, ret_table.columns.end());
    const auto blocks = load_covariance_blocks((data_dir / cov_source).string(), symbols);
    for (Index t = 0; t < days; ++t) {
      const auto it = blocks.find(data.dates[static_cast<std::size_t>(t)]);
      if (it == blocks.end())
        throw IngestError("fit: no covariance block for date " +
                          data.dates[static_cast<std::size_t>(t)]);
      cov_by_day[static_cast<std::size_t>(t)] = it->second;
    }
  }

  std::vector<Observation> obs;
  for (Index t = first_day; t + lag < days; ++t) {
    Observation o;
    o.x = data.features.row(t).transpose();
    o.y = data.returns.row(t + lag).transpose();
    o.v_hat = cov_by_day[static_cast<std::size_t>(t)];
    o.v_true = o.v_hat;
    obs.push_back(std::move(o));
  }
  const ObservationPanel panel(std::move(obs));

  std::vector<std::string> estimator_names = cfg.get_string_list("fit", "estimators");
  RunManifest manifest = start_manifest("fit", cfg, seed);
  const ExecContext exec = make_exec(args);

  std::vector<std::string> feature_names;
  {
    const CsvTable feat = read_csv(
        (data_dir / cfg.get_string("data", "features", "features.csv")).string());
    feature_names.assign(feat.columns.begin() + 1, feat.columns.end());
  }

  std::optional<NullspaceReduction> red;
  if (region.kind != RegionKind::Unconstrained)
    red = nullspace_reduce(Matrix::Ones(1, d_z), Vector::Constant(1, region.equality_sum));

  std::map<std::string, Coefficients> fitted;
  for (const std::string& name : estimator_names) {
    const EstimatorTag tag = parse_estimator(name, true);
    Coefficients coef;
    if (tag == EstimatorTag::Ols) {
      coef = fit_ols(panel, P);
    } else if (tag == EstimatorTag::IpoGrad) {
      TrainConfig tc = parse_train(cfg, seed);
      const TrainResult res = train(panel, P, region.build(d_z, delta), tc, exec);
      coef = res.coefficients;
      const std::string trace_path =
          (fs::path(args.out_dir) / ("trace_" + name + ".csv")).string();
      write_loss_trace_csv(trace_path, res.trace);
      manifest.add_output(trace_path);
    } else {
      const IpoCase ipo_case =
          region.kind == RegionKind::Unconstrained ? IpoCase::Unconstrained : IpoCase::Equality;
      const NullspaceReduction* red_ptr = red ? &*red : nullptr;
      IpoQuadratic q = ipo_case == IpoCase::Unconstrained
                           ? assemble_unconstrained(panel, P, delta)
                           : assemble_equality(panel, P, delta, *red);
      Coefficients star = solve_ipo(q);
      if (tag == EstimatorTag::IpoUnbiased)
        star = unbias(panel, P, delta, star, ipo_case, red_ptr);
      const Matrix var = theta_variance(panel, P, delta, star, ipo_case, red_ptr);
      star.std_err = var.diagonal().cwiseMax(0.0).cwiseSqrt();
      coef = std::move(star);
    }
    const std::string path =
        (fs::path(args.out_dir) / ("coefficients_" + name + ".csv")).string();
    write_coefficients_csv(path, feature_names, coef);
    manifest.add_output(path);
    fitted.emplace(name, std::move(coef));
  }

  // Pairwise coefficient gaps, recorded in the manifest.
  for (std::size_t a = 0; a < estimator_names.size(); ++a) {
    for (std::size_t b = a + 1; b < estimator_names.size(); ++b) {
      const double gap = (fitted.at(estimator_names[a]).theta -
                          fitted.at(estimator_names[b]).theta)
                             .cwiseAbs()
                             .maxCoeff();
      manifest.metadata.emplace_back(
          "max_abs_delta_" + estimator_names[a] + "_vs_" + estimator_names[b],
          format_double(gap));
    }
  }
  finish_manifest(manifest, args.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Integrated prediction and mean-variance optimization experiments"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool with_data) {
    cmd->add_option("--config", args.config_path, "Run configuration file")->required();
    cmd->add_option("--out", args.out_dir, "Output directory")->required();
    if (with_data)
      cmd->add_option("--data", args.data_dir, "Directory with input CSVs")->required();
    cmd->add_option("--threads", args.threads, "Worker threads (0 = hardware)");
    cmd->add_option("--seed", args.seed_override, "Root seed override");
    cmd->add_flag("--verbose", args.verbose, "Progress to stderr");
  };

  CLI::App* sim1 = app.add_subcommand("sim1", "Estimation-error simulation");
  CLI::App* sim2 = app.add_subcommand("sim2", "Timing comparison");
  CLI::App* sim3 = app.add_subcommand("sim3", "Box-constraint sweep");
  CLI::App* backtest = app.add_subcommand("backtest", "Walk-forward evaluation");
  CLI::App* fit = app.add_subcommand("fit", "Fit coefficients on panel files");
  add_common(sim1, false);
  add_common(sim2, false);
  add_common(sim3, false);
  add_common(backtest, true);
  add_common(fit, true);

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(args.out_dir);
    if (sim1->parsed()) return cmd_sim1(args);
    if (sim2->parsed()) return cmd_sim2(args);
    if (sim3->parsed()) return cmd_sim3(args);
    if (backtest->parsed()) return cmd_backtest(args);
    if (fit->parsed()) return cmd_fit(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
