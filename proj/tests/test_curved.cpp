#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bvm/curved.hpp"
#include "bvm/harness.hpp"

#include <cmath>

using namespace bvm;

namespace {

CurvedMap two_point_el_map() {
  MomentModel mm;
  mm.support.push_back(Eigen::VectorXd::Zero(1));
  mm.support.push_back(Eigen::VectorXd::Ones(1));
  mm.moment_fn = builtin_moment_fn("mean", Eigen::VectorXd(), 1).fn;
  mm.n_moments = 1;
  mm.d1 = 1;
  mm.psi_lower = Eigen::VectorXd::Constant(1, 0.1);
  mm.psi_upper = Eigen::VectorXd::Constant(1, 0.9);
  return el_curved_map(mm, Eigen::VectorXd::Constant(1, 0.5));
}

}  // namespace

TEST_CASE("identity embedding is the flat model in curved clothing") {
  ExpFamilyModel base = build_gaussian_location(Eigen::VectorXd::Zero(2));
  CurvedMap cmap = identity_embedding(base);
  CHECK(cmap.d == 2);
  CHECK(cmap.d1 == 2);
  LocalFrame frame = LocalFrame::at(base);
  Linearization lin = linearize(cmap, frame, 100, 1.0, 256, 3);
  // J = I for the standard gaussian, so G = I and the residuals vanish.
  CHECK(operator_norm(lin.G - Eigen::MatrixXd::Identity(2, 2)) < 1e-8);
  CHECK(lin.delta1 < 1e-8);
  CHECK(lin.delta2 < 1e-8);
  CHECK(lin.gram_min == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("identity embedding: s equals Delta_n and curved TV tracks flat TV") {
  ExpFamilyModel base = build_gaussian_location(Eigen::VectorXd::Zero(1));
  CurvedMap cmap = identity_embedding(base);
  Eigen::MatrixXd data = sample_sufficient(base, base.theta0, 200, 7);
  CurvedLocalPosterior post = curved_local_posterior(cmap, PriorSpec::flat(), data);

  LocalFrame frame = LocalFrame::at(base);
  SampleSummary summary = make_summary(frame, data);
  CHECK((post.s - summary.delta_n).cwiseAbs().maxCoeff() < 1e-7);

  LocalPosterior flat = LocalPosterior::make(frame, summary, PriorSpec::flat());
  double tv_flat = tv_distance_quadrature(flat, QuadratureGrid{128, 10.0}).estimate;
  double tv_curved = curved_tv_quadrature(post, QuadratureGrid{128, 10.0}).estimate;
  // The gaussian location posterior is exactly gaussian: both vanish.
  CHECK(tv_flat < 1e-8);
  CHECK(tv_curved < 1e-6);
}

TEST_CASE("two-point EL map linearizes to the logit derivative") {
  CurvedMap cmap = two_point_el_map();
  CHECK(cmap.d == 1);
  CHECK(cmap.d1 == 1);
  LocalFrame frame = LocalFrame::at(cmap.base, cmap.map(cmap.eta0));
  Linearization lin = linearize(cmap, frame, 400, 1.0, 128, 5);
  // theta(eta) = logit(eta), J = 1/2 at eta0 = 1/2: G = J * 4 = 2.
  CHECK(lin.G(0, 0) == doctest::Approx(2.0).epsilon(1e-4));
  CHECK(lin.gram_min > 0.0);
}

TEST_CASE("injectivity floor is positive for the logit map") {
  CurvedMap cmap = two_point_el_map();
  double floor = injectivity_floor(cmap, 2000, 11);
  // |logit(a) - logit(b)| >= 4 |a - b| on (0, 1).
  CHECK(floor >= 4.0 - 1e-3);
}

TEST_CASE("s statistic matches its formula") {
  CurvedMap cmap = two_point_el_map();
  LocalFrame frame = LocalFrame::at(cmap.base, cmap.map(cmap.eta0));
  Linearization lin = linearize(cmap, frame, 100, 1.0, 128, 13);
  Eigen::VectorXd x_bar = Eigen::VectorXd::Constant(1, 0.56);
  Eigen::VectorXd s = s_statistic(lin, frame, x_bar, 100);
  double score = 10.0 * (x_bar(0) - 0.5) / 0.5;  // sqrt(n) J^{-1} (xbar - mu)
  double expected = lin.G(0, 0) * score / (lin.G(0, 0) * lin.G(0, 0));
  CHECK(s(0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("curved MLE recovers the sample mean on the two-point model") {
  CurvedMap cmap = two_point_el_map();
  for (double xbar : {0.42, 0.5, 0.63}) {
    CurvedMleResult mle =
        curved_mle(cmap, Eigen::VectorXd::Constant(1, xbar), 400, 6, 17);
    // Saturated binary likelihood: the MLE of eta is xbar itself.
    CHECK(std::abs(mle.eta_hat(0) - xbar) < 1e-4);
    CHECK(std::abs(mle.norm_error - std::abs(xbar - 0.5)) < 1e-4);
  }
}

TEST_CASE("curved MLE respects the box") {
  CurvedMap cmap = two_point_el_map();
  CurvedMleResult mle = curved_mle(cmap, Eigen::VectorXd::Constant(1, 0.97), 400, 6, 19);
  CHECK(mle.eta_hat(0) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("curved TV decays with n on the two-point model") {
  CurvedMap cmap = two_point_el_map();
  Eigen::VectorXd theta0 = cmap.map(cmap.eta0);
  double tv_small, tv_large;
  {
    Eigen::MatrixXd data = sample_sufficient(cmap.base, theta0, 100, 23);
    CurvedLocalPosterior post = curved_local_posterior(cmap, PriorSpec::flat(), data);
    tv_small = curved_tv_quadrature(post, QuadratureGrid{128, 10.0}).estimate;
  }
  {
    Eigen::MatrixXd data = sample_sufficient(cmap.base, theta0, 6400, 23);
    CurvedLocalPosterior post = curved_local_posterior(cmap, PriorSpec::flat(), data);
    tv_large = curved_tv_quadrature(post, QuadratureGrid{128, 10.0}).estimate;
  }
  CHECK(tv_large < tv_small);
}

TEST_CASE("curved quadrature and importance estimates agree") {
  CurvedMap cmap = two_point_el_map();
  Eigen::MatrixXd data = sample_sufficient(cmap.base, cmap.map(cmap.eta0), 200, 29);
  CurvedLocalPosterior post = curved_local_posterior(cmap, PriorSpec::flat(), data);
  DistanceEstimate q = curved_tv_quadrature(post, QuadratureGrid{128, 10.0});
  DistanceEstimate is = curved_tv_importance(post, 100000, 31);
  CHECK(std::abs(q.estimate - is.estimate) < q.error + 5.0 * is.error + 2e-3);
}

TEST_CASE("tail mass audit shrinks with n") {
  CurvedMap cmap = two_point_el_map();
  Eigen::VectorXd theta0 = cmap.map(cmap.eta0);
  Eigen::MatrixXd d1 = sample_sufficient(cmap.base, theta0, 100, 37);
  Eigen::MatrixXd d2 = sample_sufficient(cmap.base, theta0, 6400, 37);
  CurvedLocalPosterior p1 = curved_local_posterior(cmap, PriorSpec::flat(), d1);
  CurvedLocalPosterior p2 = curved_local_posterior(cmap, PriorSpec::flat(), d2);
  double m1 = tail_mass_audit(p1, 1.0);
  double m2 = tail_mass_audit(p2, 1.0);
  CHECK(m1 <= 1.0);
  CHECK(m2 >= 0.0);
  CHECK(m2 < m1 + 1e-12);
}

TEST_CASE("sur map pattern and domain validation") {
  SurSpec spec = detail::sur_toy_spec();
  CHECK_NOTHROW(sur_map(spec));
  SurSpec dead = spec;
  dead.pattern.row(0).setConstant(false);  // covariate 0 excluded everywhere
  dead.base_spec.Pi.row(0).setZero();
  CHECK_THROWS_AS(sur_map(dead), InvalidPattern);
  SurSpec off = spec;
  off.base_spec.Pi(0, 1) = 0.2;  // violates its own zero pattern
  CHECK_THROWS_AS(sur_map(off), InvalidPattern);
}

TEST_CASE("sur map reproduces theta(eta0) and is bilinear in its blocks") {
  SurSpec spec = detail::sur_toy_spec();
  CurvedMap cmap = sur_map(spec);
  Eigen::VectorXd theta0 = cmap.map(cmap.eta0);
  Eigen::MatrixXd sigma_inv = spec.base_spec.Sigma.inverse();
  detail::MvLinearCoords coords{2, 2};
  Eigen::VectorXd expected = coords.join(-0.5 * sigma_inv, spec.base_spec.Pi * sigma_inv);
  CHECK((theta0 - expected).cwiseAbs().maxCoeff() < 1e-12);

  // theta is linear in eta_2 = Pi for fixed Sigma^{-1} and linear in eta_1 for
  // fixed Pi, so the second-order linearization residual along (delta1, delta2)
  // is controlled by the cross term ~ ||delta1|| ||delta2||: halving both
  // shrinks the residual by 4.
  Rng rng(41);
  Eigen::VectorXd dir(cmap.d1);
  for (int i = 0; i < cmap.d1; ++i) dir(i) = rng.normal();
  dir /= dir.norm();
  auto resid = [&](double h) {
    Eigen::VectorXd fwd = cmap.map(cmap.eta0 + h * dir);
    Eigen::VectorXd bwd = cmap.map(cmap.eta0 - h * dir);
    return (fwd + bwd - 2.0 * theta0).norm();  // twice the quadratic part
  };
  double r1 = resid(0.2), r2 = resid(0.1);
  CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("ssem map builds the restricted reduced form") {
  SsemSpec spec = detail::ssem_toy_spec();
  CurvedMap cmap = ssem_map(spec);
  Eigen::VectorXd theta0 = cmap.map(cmap.eta0);
  // Pi = [[gamma + Pi12 beta, Pi12], [Pi22 beta, Pi22]].
  Eigen::MatrixXd pi(2, 2);
  pi << 0.3 + 0.2 * 0.5, 0.2, 0.7 * 0.5, 0.7;
  detail::MvLinearCoords coords{2, 2};
  Eigen::MatrixXd sigma_inv = spec.Sigma.inverse();
  Eigen::VectorXd expected = coords.join(-0.5 * sigma_inv, pi * sigma_inv);
  CHECK((theta0 - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ssem map rejects rank-deficient Pi22") {
  SsemSpec spec = detail::ssem_toy_spec();
  spec.Pi22.setZero();
  CHECK_THROWS_AS(ssem_map(spec), RankDeficient);
}

TEST_CASE("sur and ssem toy maps linearize cleanly") {
  for (int which : {0, 1}) {
    CurvedMap cmap = which == 0 ? sur_map(detail::sur_toy_spec())
                                : ssem_map(detail::ssem_toy_spec());
    LocalFrame frame = LocalFrame::at(cmap.base, cmap.map(cmap.eta0));
    Linearization lin = linearize(cmap, frame, 400, 1.0, 128, 43);
    CHECK(lin.gram_min > 1e-6);
    CHECK(lin.delta2 < 0.5);
  }
}
