#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ipo/estimators.hpp"
#include "ipo/rng.hpp"
#include "ipo/simlab.hpp"
#include "oracles.hpp"

using namespace ipo;

namespace {

SimSpec tiny_spec() {
  SimSpec spec;
  spec.d_z = 4;
  spec.d_x_per_asset = 1;
  spec.rho = 0.0;
  spec.snr = 0.05;
  spec.res = 10;
  spec.n_obs = 200;
  spec.n_trials = 3;
  spec.seed = 99;
  return spec;
}

}  // namespace

TEST_CASE("ground truth generation") {
  SUBCASE("diagonal covariance at rho 0") {
    SimSpec spec = tiny_spec();
    const GroundTruth truth = generate_ground_truth(spec, 1);
    const double s2 = spec.sigma * spec.sigma;
    CHECK(truth.v_true.isApprox(s2 * Matrix::Identity(spec.d_z, spec.d_z)));
    CHECK(truth.theta.rows() == spec.d_z);
    CHECK(truth.theta.cols() == 1);
  }
  SUBCASE("Toeplitz powers of rho") {
    SimSpec spec = tiny_spec();
    spec.d_z = 3;
    spec.rho = 0.5;
    const GroundTruth truth = generate_ground_truth(spec, 1);
    CHECK(truth.v_true(0, 2) == doctest::Approx(spec.sigma * spec.sigma * 0.25));
  }
  SUBCASE("positive definite across the correlation range") {
    for (double rho : {0.0, 0.25, 0.5, 0.75, 0.9, 0.99}) {
      SimSpec spec = tiny_spec();
      spec.rho = rho;
      const GroundTruth truth = generate_ground_truth(spec, 2);
      CHECK(oracles::smallest_eigenvalue(truth.v_true) > 0.0);
    }
  }
  SUBCASE("invalid specs") {
    SimSpec spec = tiny_spec();
    spec.rho = 1.0;
    CHECK_THROWS_AS(generate_ground_truth(spec, 1), ConfigError);
    spec = tiny_spec();
    spec.snr = 0.0;
    CHECK_THROWS_AS(generate_ground_truth(spec, 1), ConfigError);
  }
}

TEST_CASE("panel generation") {
  SUBCASE("noiseless limit recovers theta exactly by least squares") {
    SimSpec spec = tiny_spec();
    spec.snr = std::numeric_limits<double>::infinity();
    const GroundTruth truth = generate_ground_truth(spec, 3);
    CHECK(calibrate_signal_scale(spec, truth) == 1.0);
    const ObservationPanel panel = generate_panel(spec, truth, 4);
    const DesignMask P = DesignMask::identity(spec.d_z);
    const Coefficients ols = fit_ols(panel, P);
    CHECK((ols.theta - truth.theta.col(0)).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("signal-scale calibration hits the target snr empirically") {
    for (int p : {1, 2, 4}) {
      SimSpec spec = tiny_spec();
      spec.poly_degree = p;
      spec.d_x_per_asset = 2;
      spec.snr = 0.01;
      const GroundTruth truth = generate_ground_truth(spec, 5);
      const double kappa = calibrate_signal_scale(spec, truth);
      const DesignMask P = DesignMask::block(spec.d_z, spec.d_x_per_asset);

      // Empirical signal variance over many fresh feature draws.
      std::mt19937_64 rng(77);
      const int draws = 100000;
      const Index d_x = truth.theta.rows();
      Vector acc = Vector::Zero(spec.d_z), acc2 = Vector::Zero(spec.d_z);
      for (int i = 0; i < draws; ++i) {
        const Vector x = normal_vector(d_x, rng);
        Vector signal = Vector::Zero(spec.d_z);
        Vector x_pow = Vector::Ones(d_x);
        for (int q = 1; q <= p; ++q) {
          x_pow = x_pow.cwiseProduct(x);
          signal += P.entries() * x_pow.cwiseProduct(truth.theta.col(q - 1));
        }
        acc += signal;
        acc2 += signal.cwiseAbs2();
      }
      const Vector mean_sig = acc / draws;
      const double var_signal = kappa * kappa * (acc2 / draws - mean_sig.cwiseAbs2()).sum();
      const double var_noise = truth.v_true.trace();
      CHECK(var_signal / var_noise == doctest::Approx(spec.snr).epsilon(0.10));
    }
  }

  SUBCASE("covariance estimate improves with resolution") {
    SimSpec spec = tiny_spec();
    spec.n_obs = 4;
    const GroundTruth truth = generate_ground_truth(spec, 6);
    auto avg_err = [&](Index res) {
      SimSpec s = spec;
      s.res = res;
      double total = 0.0;
      for (int t = 0; t < 20; ++t) {
        const ObservationPanel panel =
            generate_panel(s, truth, derive_seed(7, "res-check/" + std::to_string(t)));
        total += (panel[0].v_hat - truth.v_true).norm();
      }
      return total / 20.0;
    };
    CHECK(avg_err(20) < avg_err(5));
  }

  SUBCASE("panels attach the ground-truth covariance and share v_hat") {
    SimSpec spec = tiny_spec();
    const GroundTruth truth = generate_ground_truth(spec, 8);
    const ObservationPanel panel = generate_panel(spec, truth, 9);
    CHECK(panel.has_v_true());
    CHECK(*panel[0].v_true == truth.v_true);
    CHECK(panel[0].v_hat == panel[panel.size() - 1].v_hat);
  }
}

TEST_CASE("proportion of variance explained") {
  std::mt19937_64 rng(10);
  const Index d_z = 3;
  const DesignMask P = DesignMask::identity(d_z);

  SUBCASE("perfect predictions score one") {
    const Vector theta0 = normal_vector(d_z, rng);
    std::vector<Observation> obs;
    for (int i = 0; i < 50; ++i) {
      Observation o;
      o.x = normal_vector(d_z, rng);
      o.y = o.x.cwiseProduct(theta0);
      o.v_hat = Matrix::Identity(d_z, d_z);
      obs.push_back(std::move(o));
    }
    Coefficients c;
    c.theta = theta0;
    CHECK(pve(ObservationPanel(obs), P, c) == doctest::Approx(1.0));
  }

  SUBCASE("zero coefficients on centered returns score about zero") {
    std::vector<Observation> obs;
    for (int i = 0; i < 4000; ++i) {
      Observation o;
      o.x = normal_vector(d_z, rng);
      o.y = normal_vector(d_z, rng);
      o.v_hat = Matrix::Identity(d_z, d_z);
      obs.push_back(std::move(o));
    }
    Coefficients c;
    c.theta = Vector::Zero(d_z);
    CHECK(std::abs(pve(ObservationPanel(obs), P, c)) < 0.05);
  }

  SUBCASE("degenerate return variance") {
    std::vector<Observation> obs;
    for (int i = 0; i < 5; ++i) {
      Observation o;
      o.x = normal_vector(d_z, rng);
      o.y = Vector::Ones(d_z);  // constant
      o.v_hat = Matrix::Identity(d_z, d_z);
      obs.push_back(std::move(o));
    }
    Coefficients c;
    c.theta = Vector::Zero(d_z);
    CHECK_THROWS_AS(pve(ObservationPanel(obs), P, c), EstimationError);
  }

  SUBCASE("least squares explains at least as much in sample as the decision fit") {
    SimSpec spec = tiny_spec();
    spec.d_z = 3;
    spec.res = 5;
    spec.snr = 0.05;
    double gap_acc = 0.0;
    for (int t = 0; t < 10; ++t) {
      const GroundTruth truth =
          generate_ground_truth(spec, derive_seed(11, "pve/" + std::to_string(t)));
      const ObservationPanel panel =
          generate_panel(spec, truth, derive_seed(12, "pve/" + std::to_string(t)));
      const Coefficients ols = fit_ols(panel, P);
      const Coefficients ipo = solve_ipo(assemble_unconstrained(panel, P, 1.0));
      gap_acc += pve(panel, P, ols) - pve(panel, P, ipo);
    }
    CHECK(gap_acc / 10.0 >= 0.0);
  }
}

TEST_CASE("sim1 runner shape and determinism") {
  Sim1Config cfg;
  cfg.base = tiny_spec();
  cfg.rho_grid = {0.0};
  cfg.snr_grid = {0.05};
  cfg.res_grid = {5, 20};
  cfg.region = RegionKind::Equality;

  const auto rows = run_sim1(cfg);
  REQUIRE(rows.size() == 4);  // 2 cells x 2 methods
  for (const auto& r : rows) {
    CHECK((r.method == "OLS" || r.method == "IPO"));
    CHECK(r.cost_lo <= r.mean_cost + 1e-12);
    CHECK(r.mean_cost <= r.cost_hi + 1e-12);
    CHECK(static_cast<int>(r.per_trial_cost.size()) == cfg.base.n_trials);
  }

  const auto rows2 = run_sim1(cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].mean_cost == rows2[i].mean_cost);
    CHECK(rows[i].per_trial_cost == rows2[i].per_trial_cost);
  }

  // threads must not change results
  const auto rows_mt = run_sim1(cfg, ExecContext(2));
  for (std::size_t i = 0; i < rows.size(); ++i)
    CHECK(rows[i].mean_cost == rows_mt[i].mean_cost);
}

TEST_CASE("sim1 unconstrained region also runs") {
  Sim1Config cfg;
  cfg.base = tiny_spec();
  cfg.base.n_trials = 2;
  cfg.rho_grid = {0.25};
  cfg.snr_grid = {0.05};
  cfg.res_grid = {10};
  cfg.region = RegionKind::Unconstrained;
  CHECK(run_sim1(cfg).size() == 2);
}

TEST_CASE("sim2 runner reports timings and iterations") {
  Sim2Config cfg;
  cfg.base = tiny_spec();
  cfg.base.d_x_per_asset = 1;
  cfg.base.n_obs = 120;
  cfg.base.n_trials = 2;
  cfg.base.snr = 0.05;
  cfg.d_z_grid = {5};
  cfg.region = RegionKind::Unconstrained;
  cfg.train.max_iters = 3000;
  cfg.train.grad_tol = 1e-6;

  const auto rows = run_sim2(cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].method == "OLS");
  CHECK(rows[1].method == "IPO");
  CHECK(rows[2].method == "IPO-GRAD");
  for (const auto& r : rows) CHECK(r.mean_seconds > 0.0);
  CHECK(rows[2].mean_iterations > 0.0);
}

TEST_CASE("sim3 runner: heuristic vs trained through the box") {
  Sim3Config cfg;
  cfg.base = tiny_spec();
  cfg.base.d_z = 4;
  cfg.base.n_obs = 120;
  cfg.base.n_trials = 2;
  cfg.base.snr = 0.05;
  cfg.gamma_grid = {0.5};
  cfg.delta_grid = {1.0};
  cfg.p_grid = {1};
  cfg.train.max_iters = 120;
  cfg.train.grad_tol = 1e-5;

  const auto rows = run_sim3(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "IPO");
  CHECK(rows[1].method == "IPO-GRAD");
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.mean_oos_cost));
    CHECK(std::isfinite(r.mean_insample_loss));
  }

  const auto rows2 = run_sim3(cfg);
  CHECK(rows[0].per_trial_cost == rows2[0].per_trial_cost);
  CHECK(rows[1].per_trial_cost == rows2[1].per_trial_cost);
}
