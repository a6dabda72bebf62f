#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ipo/qp_diff.hpp"
#include "ipo/rng.hpp"
#include "oracles.hpp"

using namespace ipo;

namespace {

// Tight solves so finite-difference noise stays below the gradient tolerance.
IpmOptions tight() {
  IpmOptions opts;
  opts.tolerance = 1e-11;
  opts.max_iterations = 300;
  return opts;
}

struct Instance {
  Vector y_hat;
  Matrix v_hat;
  Vector y_eval;   // realized returns in the cost
  Matrix v_eval;   // realized covariance in the cost
  FeasibleRegion region;
};

double realized_cost(const Instance& inst, const Vector& y_hat, const Matrix& v_hat) {
  const Vector z = solve_inequality(y_hat, v_hat, inst.region, tight()).z_star;
  return mvo_cost(z, inst.y_eval, inst.v_eval, inst.region.delta());
}

QpGradients backward_at(const Instance& inst) {
  const QpSolution sol = solve_inequality(inst.y_hat, inst.v_hat, inst.region, tight());
  const Vector g =
      -inst.y_eval + inst.region.delta() * (inst.v_eval * sol.z_star);
  return backward(sol, inst.region, g);
}

Instance random_instance(std::mt19937_64& rng, Index d, double gamma, double delta) {
  Instance inst{Vector(), Matrix(), Vector(), Matrix(),
                FeasibleRegion::box(d, gamma, delta)};
  inst.v_hat = oracles::random_spd(d, rng, 0.5, 2.0);
  inst.v_eval = oracles::random_spd(d, rng, 0.5, 2.0);
  inst.y_hat = 0.5 * normal_vector(d, rng);
  inst.y_eval = 0.5 * normal_vector(d, rng);
  return inst;
}

}  // namespace

TEST_CASE("inactive box reduces to the plain linear-solve adjoint") {
  // V = I, delta = 1, bounds never active: d cost/d yhat equals d cost/d z.
  const Index d = 4;
  Instance inst{Vector(), Matrix::Identity(d, d), Vector(), Matrix::Identity(d, d),
                FeasibleRegion::box(d, 100.0, 1.0)};
  std::mt19937_64 rng(1);
  inst.y_hat = normal_vector(d, rng);
  inst.y_eval = normal_vector(d, rng);

  const QpSolution sol = solve_inequality(inst.y_hat, inst.v_hat, inst.region, tight());
  const Vector g = -inst.y_eval + sol.z_star;
  const QpGradients grads = backward(sol, inst.region, g);
  CHECK((grads.d_cost_d_yhat - g).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(!grads.degenerate_active_set);
}

TEST_CASE("no-active-set backward equals the analytic equality-case action") {
  std::mt19937_64 rng(2);
  const Index d = 6;
  const Matrix V = oracles::random_spd(d, rng);
  Matrix A = Matrix::Ones(1, d);
  Vector b = Vector::Ones(1);
  Matrix G(2 * d, d);
  G << Matrix::Identity(d, d), -Matrix::Identity(d, d);
  const auto region = FeasibleRegion::inequality(A, b, G, Vector::Constant(2 * d, 1e6), 2.0);

  const Vector y_hat = normal_vector(d, rng);
  const QpSolution sol = solve_inequality(y_hat, V, region, tight());
  const Vector g = normal_vector(d, rng);
  const QpGradients grads = backward(sol, region, g);

  // Analytic: (1/delta) F (F'VF)^{-1} F' g.
  const auto red = nullspace_reduce(A, b);
  const Matrix R = red.F.transpose() * V * red.F;
  const Vector want = red.F * oracles::lu_solve(R, red.F.transpose() * g) / 2.0;
  CHECK((grads.d_cost_d_yhat - want).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pinned coordinate has a vanishing return gradient") {
  const Index d = 3;
  Instance inst{Vector(), Matrix::Identity(d, d), Vector(), Matrix::Identity(d, d),
                FeasibleRegion::box(d, 0.5, 1.0)};
  inst.y_hat = Vector::Zero(d);
  inst.y_hat[0] = 3.0;  // coordinate 0 pinned at +0.5 with lambda > 0
  inst.y_hat[1] = 0.1;
  std::mt19937_64 rng(3);
  inst.y_eval = normal_vector(d, rng);

  const QpGradients grads = backward_at(inst);
  CHECK(std::abs(grads.d_cost_d_yhat[0]) < 1e-7);

  const Vector fd = oracles::finite_difference_gradient(
      [&](const Vector& y) { return realized_cost(inst, y, inst.v_hat); }, inst.y_hat, 1e-5);
  CHECK(std::abs(fd[0]) < 1e-6);
  CHECK((grads.d_cost_d_yhat - fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("return gradients match finite differences on random box instances") {
  std::mt19937_64 rng(5);
  int tested = 0;
  int seed_bump = 0;
  while (tested < 10 && seed_bump < 40) {
    ++seed_bump;
    Instance inst = random_instance(rng, 10, 0.25, 1.0);
    const QpGradients grads = backward_at(inst);
    if (grads.degenerate_active_set) continue;  // criterion targets clean active sets
    ++tested;

    const Vector fd = oracles::finite_difference_gradient(
        [&](const Vector& y) { return realized_cost(inst, y, inst.v_hat); }, inst.y_hat, 1e-5);
    for (Index k = 0; k < fd.size(); ++k) {
      const double err = std::abs(grads.d_cost_d_yhat[k] - fd[k]);
      CHECK(err <= std::max(1e-4 * std::abs(fd[k]), 1e-6));
    }
  }
  CHECK(tested == 10);
}

TEST_CASE("covariance and constraint gradients match finite differences") {
  std::mt19937_64 rng(7);
  Instance inst = random_instance(rng, 5, 0.3, 1.5);
  const QpGradients grads = backward_at(inst);
  REQUIRE(!grads.degenerate_active_set);

  SUBCASE("d cost / d v_hat (symmetric convention)") {
    CHECK(grads.d_cost_d_vhat.isApprox(grads.d_cost_d_vhat.transpose()));
    for (Index j = 0; j < 5; ++j) {
      for (Index k = j; k < 5; ++k) {
        Matrix bump = Matrix::Zero(5, 5);
        bump(j, k) = 1e-6;
        bump(k, j) = 1e-6;  // same entry when j == k
        const double f_hi = realized_cost(inst, inst.y_hat, inst.v_hat + bump);
        const double f_lo = realized_cost(inst, inst.y_hat, inst.v_hat - bump);
        const double fd = (f_hi - f_lo) / 2e-6;
        const double want = j == k ? grads.d_cost_d_vhat(j, j)
                                   : 2.0 * grads.d_cost_d_vhat(j, k);
        CHECK(fd == doctest::Approx(want).epsilon(1e-3).scale(1.0));
      }
    }
  }

  SUBCASE("d cost / d h") {
    const Matrix G = inst.region.G();
    const Vector h = inst.region.h();
    for (Index j = 0; j < h.size(); ++j) {
      Vector hp = h, hm = h;
      hp[j] += 1e-6;
      hm[j] -= 1e-6;
      auto cost_with_h = [&](const Vector& hh) {
        const auto region =
            FeasibleRegion::inequality(inst.region.A(), inst.region.b(), G, hh,
                                       inst.region.delta());
        const Vector z = solve_inequality(inst.y_hat, inst.v_hat, region, tight()).z_star;
        return mvo_cost(z, inst.y_eval, inst.v_eval, inst.region.delta());
      };
      const double fd = (cost_with_h(hp) - cost_with_h(hm)) / 2e-6;
      CHECK(fd == doctest::Approx(grads.d_cost_d_h[j]).epsilon(1e-3).scale(1.0));
    }
  }
}

TEST_CASE("equality-side gradients match finite differences") {
  std::mt19937_64 rng(11);
  const Index d = 5;
  Matrix A = Matrix::Ones(1, d);
  Vector b = Vector::Constant(1, 0.2);
  Matrix G(2 * d, d);
  G << Matrix::Identity(d, d), -Matrix::Identity(d, d);
  const Vector h = Vector::Constant(2 * d, 0.3);

  Instance inst{0.5 * normal_vector(d, rng), oracles::random_spd(d, rng),
                0.5 * normal_vector(d, rng), oracles::random_spd(d, rng),
                FeasibleRegion::inequality(A, b, G, h, 1.0)};
  const QpGradients grads = backward_at(inst);
  REQUIRE(!grads.degenerate_active_set);

  SUBCASE("d cost / d b") {
    auto cost_with_b = [&](double bb) {
      const auto region =
          FeasibleRegion::inequality(A, Vector::Constant(1, bb), G, h, 1.0);
      const Vector z = solve_inequality(inst.y_hat, inst.v_hat, region, tight()).z_star;
      return mvo_cost(z, inst.y_eval, inst.v_eval, 1.0);
    };
    const double fd = (cost_with_b(0.2 + 1e-6) - cost_with_b(0.2 - 1e-6)) / 2e-6;
    CHECK(fd == doctest::Approx(grads.d_cost_d_b[0]).epsilon(1e-3).scale(1.0));
  }

  SUBCASE("d cost / d A") {
    for (Index k = 0; k < d; ++k) {
      auto cost_with_A = [&](double bump) {
        Matrix Ab = A;
        Ab(0, k) += bump;
        const auto region = FeasibleRegion::inequality(Ab, b, G, h, 1.0);
        const Vector z = solve_inequality(inst.y_hat, inst.v_hat, region, tight()).z_star;
        return mvo_cost(z, inst.y_eval, inst.v_eval, 1.0);
      };
      const double fd = (cost_with_A(1e-6) - cost_with_A(-1e-6)) / 2e-6;
      CHECK(fd == doctest::Approx(grads.d_cost_d_A(0, k)).epsilon(1e-3).scale(1.0));
    }
  }

  SUBCASE("d cost / d G on an active row") {
    Index active = -1;
    const QpSolution sol = solve_inequality(inst.y_hat, inst.v_hat, inst.region, tight());
    for (Index j = 0; j < sol.lambda_star.size(); ++j)
      if (sol.lambda_star[j] > 1e-4) active = j;
    REQUIRE(active >= 0);
    for (Index k = 0; k < d; ++k) {
      auto cost_with_G = [&](double bump) {
        Matrix Gb = G;
        Gb(active, k) += bump;
        const auto region = FeasibleRegion::inequality(A, b, Gb, h, 1.0);
        const Vector z = solve_inequality(inst.y_hat, inst.v_hat, region, tight()).z_star;
        return mvo_cost(z, inst.y_eval, inst.v_eval, 1.0);
      };
      const double fd = (cost_with_G(1e-6) - cost_with_G(-1e-6)) / 2e-6;
      CHECK(fd == doctest::Approx(grads.d_cost_d_G(active, k)).epsilon(1e-3).scale(1.0));
    }
  }
}

TEST_CASE("chain_to_theta") {
  std::mt19937_64 rng(13);
  QpGradients grads;
  grads.d_cost_d_yhat = normal_vector(3, rng);

  SUBCASE("zero features kill the gradient") {
    CHECK(chain_to_theta(grads, Vector::Zero(3), DesignMask::identity(3)).norm() == 0.0);
  }
  SUBCASE("identity mask with unit features passes the gradient through") {
    CHECK(chain_to_theta(grads, Vector::Ones(3), DesignMask::identity(3))
              .isApprox(grads.d_cost_d_yhat));
  }
  SUBCASE("full pipeline gradient matches finite differences in theta") {
    const Index d_z = 4, per_asset = 2;
    const DesignMask P = DesignMask::block(d_z, per_asset);
    Instance inst = random_instance(rng, d_z, 0.3, 1.0);
    const Vector x = normal_vector(P.feature_dim(), rng);

    auto loss_at = [&](const Vector& theta) {
      const Vector y_hat = P.entries() * x.cwiseProduct(theta);
      const Vector z = solve_inequality(y_hat, inst.v_hat, inst.region, tight()).z_star;
      return mvo_cost(z, inst.y_eval, inst.v_eval, inst.region.delta());
    };

    const Vector theta0 = normal_vector(P.feature_dim(), rng);
    const Vector y_hat = P.entries() * x.cwiseProduct(theta0);
    const QpSolution sol = solve_inequality(y_hat, inst.v_hat, inst.region, tight());
    const Vector g = -inst.y_eval + inst.region.delta() * (inst.v_eval * sol.z_star);
    const QpGradients full = backward(sol, inst.region, g);
    REQUIRE(!full.degenerate_active_set);
    const Vector grad_theta = chain_to_theta(full, x, P);

    const Vector fd = oracles::finite_difference_gradient(loss_at, theta0, 1e-5);
    for (Index k = 0; k < fd.size(); ++k)
      CHECK(std::abs(grad_theta[k] - fd[k]) <=
            std::max(1e-4 * std::abs(fd[k]), 1e-6));
  }
}

TEST_CASE("degenerate active set is flagged and regularized") {
  // Unconstrained optimum exactly on the boundary: lambda and slack both
  // vanish, the clean system is singular, and the ridge restores a finite
  // solve. Built by hand because an interior-point solve approaches this
  // limit only as its tolerance goes to zero.
  const Index d = 2;
  const auto region = FeasibleRegion::box(d, 0.5, 1.0);
  QpSolution sol;
  sol.z_star = Vector::Zero(d);
  sol.z_star[0] = 0.5;
  sol.lambda_star = Vector::Zero(region.num_inequalities());
  sol.nu_star = Vector::Zero(0);
  sol.factorization = factorize_kkt(sol, region, Matrix::Identity(d, d));

  const Vector g = Vector::Ones(d);
  const QpGradients grads = backward(sol, region, g);
  CHECK(grads.degenerate_active_set);
  CHECK(grads.d_cost_d_yhat.allFinite());
}

TEST_CASE("backward without a retained factorization is an error") {
  QpSolution sol;
  sol.z_star = Vector::Zero(2);
  const auto region = FeasibleRegion::box(2, 1.0, 1.0);
  CHECK_THROWS_AS(backward(sol, region, Vector::Zero(2)), DifferentiationError);
}
