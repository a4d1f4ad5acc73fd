#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bvm/expfam.hpp"
#include "bvm/matrix.hpp"
#include "bvm/rng.hpp"

#include <cmath>

using namespace bvm;

namespace {

Eigen::VectorXd random_simplex(int categories, Rng& rng) {
  Eigen::VectorXd p(categories);
  double total = 0.0;
  for (int i = 0; i < categories; ++i) {
    p(i) = 0.05 + rng.uniform();  // bounded away from the boundary
    total += p(i);
  }
  p /= total;
  p(0) += 1.0 - p.sum();  // exact sum after rounding
  return p;
}

}  // namespace

TEST_CASE("multinomial spec validation") {
  MultinomialSpec spec;
  spec.probs = Eigen::VectorXd::Constant(1, 1.0);
  CHECK_THROWS_AS(spec.validate(), InvalidSimplex);
  spec.probs.resize(3);
  spec.probs << 0.5, 0.5, 0.0;
  CHECK_THROWS_AS(spec.validate(), InvalidSimplex);
  spec.probs << 0.5, 0.3, 0.3;
  CHECK_THROWS_AS(spec.validate(), InvalidSimplex);
  spec.probs << 0.5, 0.3, 0.2;
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.dim() == 2);
  CHECK(spec.balance() == doctest::Approx(5.0));
}

TEST_CASE("multinomial log partition against the direct formula") {
  Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    int d = 1 + static_cast<int>(rng.uniform() * 5);
    Eigen::VectorXd theta(d);
    for (int i = 0; i < d; ++i) theta(i) = rng.uniform(-3.0, 3.0);
    double direct = std::log(1.0 + theta.array().exp().sum());
    MultinomialSpec spec;
    spec.probs = Eigen::VectorXd::Constant(d + 1, 1.0 / (d + 1));
    ExpFamilyModel model = build_multinomial(spec);
    CHECK(model.log_partition(theta) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("multinomial log partition is overflow-stable") {
  MultinomialSpec spec;
  spec.probs = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  ExpFamilyModel model = build_multinomial(spec);
  Eigen::VectorXd theta(2);
  theta << 800.0, 750.0;
  double psi = model.log_partition(theta);
  CHECK(std::isfinite(psi));
  CHECK(psi == doctest::Approx(800.0).epsilon(1e-12));
}

TEST_CASE("multinomial grad and hessian against the enumeration oracle") {
  Rng rng(37);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd probs = random_simplex(4, rng);
    MultinomialSpec spec;
    spec.probs = probs;
    ExpFamilyModel model = build_multinomial(spec);
    Eigen::VectorXd theta = model.theta0;

    // Enumeration over atoms: mu = sum p_j x_j, F = sum p_j x_j x_j' - mu mu'.
    Eigen::VectorXd pa = model.atom_probs(theta);
    CHECK(pa.sum() == doctest::Approx(1.0).epsilon(1e-12));
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(model.dim);
    for (std::size_t j = 0; j < model.support.size(); ++j)
      mu += pa(static_cast<int>(j)) * model.support[j];
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(model.dim, model.dim);
    for (std::size_t j = 0; j < model.support.size(); ++j)
      second += pa(static_cast<int>(j)) * model.support[j] * model.support[j].transpose();
    Eigen::MatrixXd f = second - mu * mu.transpose();

    CHECK((model.grad(theta) - mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(operator_norm(model.hessian(theta).mat() - f) < 1e-12);
    // theta0 reproduces the simplex point.
    CHECK((mu - probs.tail(model.dim)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("multinomial sampler frequencies within 5 sigma") {
  MultinomialSpec spec;
  spec.probs = Eigen::VectorXd(3);
  spec.probs << 0.2, 0.5, 0.3;
  ExpFamilyModel model = build_multinomial(spec);
  const int n = 100000;
  Eigen::MatrixXd data = sample_sufficient(model, model.theta0, n, 12345);
  Eigen::VectorXd freq = data.colwise().mean();
  for (int k = 0; k < 2; ++k) {
    double p = spec.probs(k + 1);
    double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(freq(k) - p) < 5.0 * se);
  }
}

TEST_CASE("multinomial closed forms: frozen 2x2 Fisher information") {
  // p = (0.5, 0.3, 0.2): F = diag(0.3, 0.2) - (0.3, 0.2)(0.3, 0.2)'.
  MultinomialSpec spec;
  spec.probs = Eigen::VectorXd(3);
  spec.probs << 0.5, 0.3, 0.2;
  MultinomialClosedForms cf = multinomial_closed_forms(spec);
  CHECK(cf.F(0, 0) == doctest::Approx(0.21).epsilon(1e-12));
  CHECK(cf.F(0, 1) == doctest::Approx(-0.06).epsilon(1e-12));
  CHECK(cf.F(1, 1) == doctest::Approx(0.16).epsilon(1e-12));
  // F^{-1} = P^{-1} + 11'/p_0.
  CHECK(cf.F_inv(0, 0) == doctest::Approx(1.0 / 0.3 + 2.0).epsilon(1e-12));
  CHECK(cf.F_inv(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cf.F_inv(1, 1) == doctest::Approx(1.0 / 0.2 + 2.0).epsilon(1e-12));
}

TEST_CASE("multinomial closed forms: identities at random simplex points") {
  Rng rng(41);
  for (int d : {1, 2, 5, 10}) {
    for (int rep = 0; rep < 10; ++rep) {
      MultinomialSpec spec;
      spec.probs = random_simplex(d + 1, rng);
      MultinomialClosedForms cf = multinomial_closed_forms(spec);
      Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
      CHECK(operator_norm(cf.F.mat() * cf.F_inv.mat() - eye) < 1e-9);
      CHECK(operator_norm(cf.J.mat() * cf.J.mat() - cf.F.mat()) < 1e-9);
      CHECK(operator_norm(cf.J.mat() * cf.J_inv.mat() - eye) < 1e-9);
      CHECK(operator_norm(cf.J_factor * cf.J_factor.transpose() - cf.F.mat()) < 1e-9);
      CHECK(operator_norm(cf.J_factor.transpose() * cf.J_factor_inv - eye) < 1e-9);
    }
  }
}

TEST_CASE("gaussian location basics") {
  Eigen::VectorXd theta0(2);
  theta0 << 0.5, -1.0;
  ExpFamilyModel model = build_gaussian_location(theta0);
  CHECK(model.log_partition(theta0) == doctest::Approx(0.5 * theta0.squaredNorm()));
  CHECK((model.grad(theta0) - theta0).norm() < 1e-15);
  CHECK(operator_norm(model.hessian(theta0).mat() - Eigen::MatrixXd::Identity(2, 2)) <
        1e-15);
  const int n = 50000;
  Eigen::MatrixXd data = sample_sufficient(model, theta0, n, 99);
  Eigen::VectorXd mean = data.colwise().mean();
  CHECK((mean - theta0).norm() < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("mv-linear spec validation") {
  MvLinearSpec spec;
  spec.d_r = 2;
  spec.d_c = 1;
  spec.Pi = Eigen::MatrixXd::Zero(1, 2);
  spec.Sigma = Eigen::MatrixXd::Identity(2, 2);
  spec.Z = Eigen::MatrixXd::Ones(4, 1);
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.nominal_dim() == 6);
  CHECK(spec.coord_dim() == 5);
  spec.Sigma(1, 1) = -1.0;
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
}

TEST_CASE("mv-linear vech coordinates round-trip") {
  detail::MvLinearCoords coords{3, 2};
  Rng rng(43);
  Eigen::MatrixXd t1(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) t1(i, j) = t1(j, i) = rng.normal();
  Eigen::MatrixXd t2(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) t2(i, j) = rng.normal();
  auto [u1, u2] = coords.split(coords.join(t1, t2));
  CHECK((u1 - t1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((u2 - t2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mv-linear gradient matches finite differences of psi") {
  MvLinearSpec spec;
  spec.d_r = 2;
  spec.d_c = 2;
  spec.Pi.resize(2, 2);
  spec.Pi << 0.5, -0.2, 0.1, 0.8;
  spec.Sigma.resize(2, 2);
  spec.Sigma << 1.0, 0.25, 0.25, 2.0;
  spec.Z.resize(3, 2);
  spec.Z << 1.0, 0.0, 0.0, 1.0, 1.0, 1.0;
  ExpFamilyModel model = build_mv_linear(spec);
  Eigen::VectorXd theta = model.theta0;
  Eigen::VectorXd g = model.grad(theta);
  for (int j = 0; j < model.dim; ++j) {
    double h = 1e-6 * (1.0 + std::abs(theta(j)));
    Eigen::VectorXd tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    double fd = (model.log_partition(tp) - model.log_partition(tm)) / (2.0 * h);
    CHECK(g(j) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("mv-linear hessian positive definite at theta0") {
  MvLinearSpec spec;
  spec.d_r = 2;
  spec.d_c = 1;
  spec.Pi = Eigen::MatrixXd::Constant(1, 2, 0.4);
  spec.Sigma = Eigen::MatrixXd::Identity(2, 2);
  spec.Z = Eigen::MatrixXd::Ones(4, 1);
  ExpFamilyModel model = build_mv_linear(spec);
  auto [lo, hi] = eig_extremes(model.hessian(model.theta0));
  (void)hi;
  CHECK(lo > 1e-6);
}

TEST_CASE("mv-linear gradient matches the sampler mean") {
  MvLinearSpec spec;
  spec.d_r = 2;
  spec.d_c = 1;
  spec.Pi = Eigen::MatrixXd::Constant(1, 2, 0.4);
  spec.Sigma.resize(2, 2);
  spec.Sigma << 1.0, 0.3, 0.3, 1.0;
  spec.Z = Eigen::MatrixXd::Ones(4, 1);
  ExpFamilyModel model = build_mv_linear(spec);
  const int n = 200000;
  Eigen::MatrixXd data = sample_sufficient(model, model.theta0, n, 777);
  Eigen::VectorXd mean = data.colwise().mean();
  Eigen::VectorXd mu = model.grad(model.theta0);
  CHECK((mean - mu).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("mv-linear domain check rejects non-negative-definite theta1") {
  MvLinearSpec spec;
  spec.d_r = 1;
  spec.d_c = 1;
  spec.Pi = Eigen::MatrixXd::Constant(1, 1, 0.4);
  spec.Sigma = Eigen::MatrixXd::Identity(1, 1);
  spec.Z = Eigen::MatrixXd::Ones(2, 1);
  ExpFamilyModel model = build_mv_linear(spec);
  Eigen::VectorXd theta(2);
  theta << 0.5, 0.4;  // theta_1 > 0
  CHECK_FALSE(model.domain_check(theta));
  theta << -0.5, 0.4;
  CHECK(model.domain_check(theta));
}
