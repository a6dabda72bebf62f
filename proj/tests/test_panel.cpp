#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ipo/panel.hpp"
#include "ipo/rng.hpp"
#include "oracles.hpp"

using namespace ipo;

namespace {

Observation make_obs(Vector x, Vector y, Matrix v) {
  Observation o;
  o.x = std::move(x);
  o.y = std::move(y);
  o.v_hat = std::move(v);
  return o;
}

}  // namespace

TEST_CASE("panel validates shapes and covariances") {
  const Matrix I2 = Matrix::Identity(2, 2);
  std::vector<Observation> obs;
  obs.push_back(make_obs(Vector::Ones(3), Vector::Zero(2), I2));
  const ObservationPanel panel(obs);
  CHECK(panel.size() == 1);
  CHECK(panel.feature_dim() == 3);
  CHECK(panel.asset_dim() == 2);

  SUBCASE("mismatched dimensions") {
    obs.push_back(make_obs(Vector::Ones(2), Vector::Zero(2), I2));
    CHECK_THROWS_AS((ObservationPanel(obs)), PanelError);
  }
  SUBCASE("asymmetric covariance") {
    Matrix bad = I2;
    bad(0, 1) = 1e-6;
    obs[0].v_hat = bad;
    CHECK_THROWS_AS((ObservationPanel(obs)), PanelError);
  }
  SUBCASE("indefinite covariance fails the Cholesky gate") {
    Matrix bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0;
    obs[0].v_hat = bad;
    CHECK_THROWS_AS((ObservationPanel(obs)), PanelError);
  }
  SUBCASE("empty panel") {
    CHECK_THROWS_AS((ObservationPanel({})), PanelError);
  }
}

TEST_CASE("design mask invariants") {
  CHECK_THROWS_AS((DesignMask(Matrix::Zero(2, 2))), PanelError);  // empty column
  Matrix frac(1, 1);
  frac << 0.5;
  CHECK_THROWS_AS((DesignMask(frac)), PanelError);

  const DesignMask block = DesignMask::block(2, 3);
  CHECK(block.feature_dim() == 6);
  CHECK(block.assets_features(1) == std::vector<Index>{3, 4, 5});
  const DesignMask id = DesignMask::identity(4);
  CHECK(id.entries() == Matrix::Identity(4, 4));
}

TEST_CASE("predict_returns examples") {
  const DesignMask I2 = DesignMask::identity(2);
  Coefficients theta;
  theta.theta = Vector(2);
  theta.theta << 0.1, 0.2;

  Vector x(2);
  x << 1.0, 1.0;
  CHECK(predict_returns(x, I2, theta).isApprox(theta.theta));

  x << 0.0, 0.0;
  CHECK(predict_returns(x, I2, theta).norm() == 0.0);

  // Hand oracle: P = [[1,1,0],[0,0,1]], x = (1,2,3), theta = 1 -> (3, 3).
  Matrix P(2, 3);
  P << 1, 1, 0, 0, 0, 1;
  const DesignMask mask(P);
  Coefficients ones;
  ones.theta = Vector::Ones(3);
  Vector x3(3);
  x3 << 1, 2, 3;
  const Vector got = predict_returns(x3, mask, ones);
  CHECK(got[0] == doctest::Approx(3.0));
  CHECK(got[1] == doctest::Approx(3.0));

  CHECK_THROWS_AS(predict_returns(x3, I2, theta), PanelError);
}

TEST_CASE("predict_returns is linear in theta") {
  std::mt19937_64 rng(7);
  const DesignMask P = DesignMask::block(3, 2);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector x = normal_vector(6, rng);
    Coefficients t1, t2, mix;
    t1.theta = normal_vector(6, rng);
    t2.theta = normal_vector(6, rng);
    const double a = 0.7, b = -1.3;
    mix.theta = a * t1.theta + b * t2.theta;
    const Vector lhs = predict_returns(x, P, mix);
    const Vector rhs = a * predict_returns(x, P, t1) + b * predict_returns(x, P, t2);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("mvo_cost examples and convexity") {
  Vector z(2), y(2);
  z << 1, 0;
  y << 0.1, 0.5;
  CHECK(mvo_cost(z, y, Matrix::Identity(2, 2), 2.0) == doctest::Approx(0.9));
  CHECK(mvo_cost(Vector::Zero(2), y, Matrix::Identity(2, 2), 3.0) == 0.0);

  // Hand expansion: -z'y = -0.10, z'Vz = 0.75 so the cost is 0.275.
  Matrix V(2, 2);
  V << 1.0, 0.5, 0.5, 1.0;
  z << 0.5, 0.5;
  y << 0.1, 0.1;
  CHECK(mvo_cost(z, y, V, 1.0) == doctest::Approx(0.275));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Matrix Vr = oracles::random_spd(4, rng);
  const Vector yr = normal_vector(4, rng);
  for (int rep = 0; rep < 50; ++rep) {
    const Vector z1 = normal_vector(4, rng);
    const Vector z2 = normal_vector(4, rng);
    const double t = unif(rng);
    const double lhs = mvo_cost(t * z1 + (1 - t) * z2, yr, Vr, 1.7);
    const double rhs = t * mvo_cost(z1, yr, Vr, 1.7) + (1 - t) * mvo_cost(z2, yr, Vr, 1.7);
    CHECK(lhs <= rhs + 1e-10);
  }

  CHECK_THROWS_AS(mvo_cost(z, y, V, 0.0), PanelError);
}

TEST_CASE("residual covariance") {
  const DesignMask P = DesignMask::identity(2);
  Coefficients zero;
  zero.theta = Vector::Zero(2);
  const Matrix I2 = Matrix::Identity(2, 2);

  SUBCASE("zero residuals give the zero matrix") {
    std::vector<Observation> obs;
    for (int i = 0; i < 3; ++i) obs.push_back(make_obs(Vector::Ones(2), Vector::Zero(2), I2));
    const auto sigma = residual_covariance(ObservationPanel(obs), P, zero);
    CHECK(sigma.sigma_hat.norm() == 0.0);
  }

  SUBCASE("hand outer-product sum") {
    Vector r1(2), r2(2);
    r1 << 1, 0;
    r2 << -1, 0;
    std::vector<Observation> obs;
    obs.push_back(make_obs(Vector::Zero(2), r1, I2));
    obs.push_back(make_obs(Vector::Zero(2), r2, I2));
    const auto sigma = residual_covariance(ObservationPanel(obs), P, zero);
    Matrix want(2, 2);
    want << 2, 0, 0, 0;
    CHECK(sigma.sigma_hat.isApprox(want));
  }

  SUBCASE("symmetric PSD on a random panel") {
    std::mt19937_64 rng(3);
    std::vector<Observation> obs;
    for (int i = 0; i < 3; ++i)
      obs.push_back(make_obs(normal_vector(2, rng), normal_vector(2, rng), I2));
    const auto sigma = residual_covariance(ObservationPanel(obs), P, zero);
    CHECK(sigma.sigma_hat == sigma.sigma_hat.transpose());
    CHECK(oracles::smallest_eigenvalue(sigma.sigma_hat) >= -1e-10);
  }

  SUBCASE("insufficient sample") {
    std::vector<Observation> obs;
    obs.push_back(make_obs(Vector::Zero(2), Vector::Zero(2), I2));
    CHECK_THROWS_AS(residual_covariance(ObservationPanel(obs), P, zero),
                    InsufficientSampleError);
  }
}

TEST_CASE("feasible region construction") {
  CHECK_THROWS_AS(FeasibleRegion::unconstrained(3, 0.0), PanelError);
  CHECK_THROWS_AS(FeasibleRegion::unconstrained(3, -1.0), PanelError);

  SUBCASE("consistent equality") {
    const auto region = FeasibleRegion::equality(Matrix::Ones(1, 3), Vector::Ones(1), 2.0);
    CHECK(region.kind() == RegionKind::Equality);
    CHECK(region.delta() == 2.0);
  }
  SUBCASE("inconsistent equality") {
    Matrix A(2, 3);
    A << 1, 1, 1, 1, 1, 1;
    Vector b(2);
    b << 1, 2;
    CHECK_THROWS_AS(FeasibleRegion::equality(A, b, 1.0), InfeasibleError);
  }
  SUBCASE("nullity zero") {
    CHECK_THROWS_AS(FeasibleRegion::equality(Matrix::Identity(3, 3), Vector::Zero(3), 1.0),
                    PanelError);
  }
  SUBCASE("feasible box with equality") {
    const auto region = FeasibleRegion::market_neutral_box(4, 0.5, 1.0);
    CHECK(region.num_inequalities() == 8);
    CHECK(region.num_equalities() == 1);
  }
  SUBCASE("empty box region detected infeasible") {
    // z'1 = 10 cannot hold with |z_j| <= 0.1 on 4 assets.
    Matrix G(8, 4);
    G << Matrix::Identity(4, 4), -Matrix::Identity(4, 4);
    CHECK_THROWS_AS(
        FeasibleRegion::inequality(Matrix::Ones(1, 4), Vector::Constant(1, 10.0), G,
                                   Vector::Constant(8, 0.1), 1.0),
        InfeasibleError);
  }
}

TEST_CASE("coefficients validation") {
  Coefficients c;
  c.theta = Vector::Ones(2);
  CHECK_NOTHROW(validate(c));
  c.std_err = Vector::Constant(2, -0.1);
  CHECK_THROWS_AS(validate(c), PanelError);
  c.std_err = Vector::Ones(3);
  CHECK_THROWS_AS(validate(c), PanelError);
  c.std_err.reset();
  c.theta[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate(c), PanelError);
}
