#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bvm/diagnostics.hpp"
#include "bvm/el.hpp"
#include "bvm/expfam.hpp"
#include "bvm/local.hpp"
#include "bvm/matrix.hpp"
#include "bvm/rng.hpp"

// Curved exponential family layer: parameter-reduction maps eta -> theta(eta),
// their empirical linearization and injectivity checks, the curved local
// posterior with its Gaussian reference N(s, (G'G)^{-1}), the curved MLE and
// the tail-mass audit, plus the SUR and single-structural-equation instances.

namespace bvm {

struct DegenerateJacobian : std::runtime_error {
  explicit DegenerateJacobian(const std::string& what) : std::runtime_error(what) {}
};

struct NoConvergedStart : std::runtime_error {
  explicit NoConvergedStart(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidPattern : std::runtime_error {
  explicit InvalidPattern(const std::string& what) : std::runtime_error(what) {}
};

struct RankDeficient : std::runtime_error {
  explicit RankDeficient(const std::string& what) : std::runtime_error(what) {}
};

struct CurvedMap {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> map;  // eta -> theta
  int d1 = 0;
  int d = 0;
  Eigen::VectorXd eta0;
  Eigen::VectorXd psi_lower, psi_upper;                   // compact box Psi
  std::function<bool(const Eigen::VectorXd&)> predicate;  // optional extra restriction
  ExpFamilyModel base;

  bool eta_in_domain(const Eigen::VectorXd& eta) const {
    if (!(eta.array() >= psi_lower.array()).all()) return false;
    if (!(eta.array() <= psi_upper.array()).all()) return false;
    if (predicate && !predicate(eta)) return false;
    return true;
  }
};

// The analysis assumes J = I; maps over a general base model are pre-whitened
// through the frame at theta_0, so all curved quantities live in x -> J^{-1}x
// coordinates.
struct Linearization {
  Eigen::MatrixXd G;  // d x d1, whitened jacobian
  Eigen::VectorXd r1;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double kappa = 0.0;
  Eigen::MatrixXd gram;  // G'G
  double gram_min = 0.0, gram_max = 0.0;
  double cond1_product = 0.0;  // delta1 sqrt(d)
  double cond2_product = 0.0;  // delta2 d
};

inline Linearization linearize(const CurvedMap& cmap, const LocalFrame& frame, int n,
                               double kappa, int gamma_budget, std::uint64_t seed) {
  const int d1 = cmap.d1, d = cmap.d;
  const double root_n = std::sqrt(static_cast<double>(n));
  Eigen::VectorXd theta0 = cmap.map(cmap.eta0);
  auto scaled_shift = [&](const Eigen::VectorXd& gamma) {
    // sqrt(n) (theta(eta0 + gamma/sqrt(n)) - theta(eta0)), whitened.
    Eigen::VectorXd eta = cmap.eta0 + gamma / root_n;
    return Eigen::VectorXd(root_n * (frame.J * (cmap.map(eta) - theta0)));
  };

  Linearization lin;
  lin.kappa = kappa;
  lin.G.resize(d, d1);
  for (int j = 0; j < d1; ++j) {
    double h = 1e-6 * (1.0 + std::abs(cmap.eta0(j)));
    Eigen::VectorXd ep = cmap.eta0, em = cmap.eta0;
    ep(j) += h;
    em(j) -= h;
    lin.G.col(j) = frame.J * (cmap.map(ep) - cmap.map(em)) / (2.0 * h);
  }
  lin.gram = lin.G.transpose() * lin.G;
  {
    SymmetricMatrix gram(0.5 * (lin.gram + lin.gram.transpose()));
    auto [lo, hi] = eig_extremes(gram);
    lin.gram_min = lo;
    lin.gram_max = hi;
  }
  if (lin.gram_min < 1e-10)
    throw DegenerateJacobian("linearize: G'G min eigenvalue " + std::to_string(lin.gram_min));

  Rng rng(seed);
  // Small-gamma probes identify r_1n as the residual limit near zero.
  const double probe_radius = 1e-3 * std::sqrt(static_cast<double>(d));
  lin.r1 = Eigen::VectorXd::Zero(d);
  int probes = std::max(4, d1 + 1);
  double max_probe_residual = 0.0;
  for (int s = 0; s < probes; ++s) {
    Eigen::VectorXd gamma = probe_radius * rng.unit_sphere(d1);
    Eigen::VectorXd resid = scaled_shift(gamma) - lin.G * gamma;
    lin.r1 += resid / probes;
    max_probe_residual = std::max(max_probe_residual, resid.norm());
  }
  lin.delta1 = max_probe_residual;

  const double ball_radius = kappa * std::sqrt(static_cast<double>(d));
  for (int s = 0; s < gamma_budget; ++s) {
    Eigen::VectorXd gamma = rng.ball(d1, ball_radius);
    if (!cmap.eta_in_domain(cmap.eta0 + gamma / root_n)) continue;
    double g_norm = (lin.G * gamma).norm();
    if (g_norm < 1e-12) continue;
    Eigen::VectorXd resid = scaled_shift(gamma) - lin.G * gamma - lin.r1;
    lin.delta2 = std::max(lin.delta2, resid.norm() / g_norm);
  }
  lin.cond1_product = lin.delta1 * std::sqrt(static_cast<double>(d));
  lin.cond2_product = lin.delta2 * static_cast<double>(d);
  return lin;
}

// Empirical lower estimate of the injectivity constant epsilon_0: min over
// sampled eta of ||theta(eta) - theta(eta_0)|| / ||eta - eta_0||. Mixes
// uniform draws over Psi with a dense shell near eta_0.
inline double injectivity_floor(const CurvedMap& cmap, int grid_budget, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd theta0 = cmap.map(cmap.eta0);
  double floor = std::numeric_limits<double>::infinity();
  auto probe = [&](const Eigen::VectorXd& eta) {
    double dist = (eta - cmap.eta0).norm();
    if (dist < 1e-12 || !cmap.eta_in_domain(eta)) return;
    floor = std::min(floor, (cmap.map(eta) - theta0).norm() / dist);
  };
  const int d1 = cmap.d1;
  int uniform_budget = grid_budget / 2;
  for (int s = 0; s < uniform_budget; ++s) {
    Eigen::VectorXd eta(d1);
    for (int j = 0; j < d1; ++j) eta(j) = rng.uniform(cmap.psi_lower(j), cmap.psi_upper(j));
    probe(eta);
  }
  double span = (cmap.psi_upper - cmap.psi_lower).norm();
  for (int s = 0; s < grid_budget - uniform_budget; ++s) {
    double radius = span * std::pow(10.0, rng.uniform(-6.0, -0.5));
    probe(cmap.eta0 + radius * rng.unit_sphere(d1));
  }
  return floor;
}

inline Eigen::VectorXd s_statistic(const Linearization& lin, const LocalFrame& frame,
                                   const Eigen::VectorXd& x_bar, int n) {
  Eigen::VectorXd score =
      std::sqrt(static_cast<double>(n)) * (frame.J_inv * (x_bar - frame.mu));
  Eigen::LDLT<Eigen::MatrixXd> gram(lin.gram);
  if (gram.info() != Eigen::Success || !gram.isPositive())
    throw DegenerateJacobian("s_statistic: G'G not positive definite");
  return gram.solve(lin.G.transpose() * score);
}

struct CurvedLocalPosterior {
  CurvedMap cmap;
  LocalFrame frame;
  PriorSpec prior;
  Linearization lin;
  Eigen::VectorXd x_bar;
  int n = 0;
  Eigen::VectorXd s;
  Eigen::MatrixXd gram_inv;

  int dim() const { return cmap.d1; }

  Eigen::VectorXd eta_at(const Eigen::VectorXd& gamma) const {
    return cmap.eta0 + gamma / std::sqrt(static_cast<double>(n));
  }

  // u_gamma = sqrt(n) J (theta(eta) - theta_0) in whitened coordinates.
  Eigen::VectorXd u_gamma(const Eigen::VectorXd& gamma) const {
    Eigen::VectorXd theta = cmap.map(eta_at(gamma));
    return std::sqrt(static_cast<double>(n)) * (frame.J * (theta - frame.theta0));
  }

  double log_unnormalized(const Eigen::VectorXd& gamma) const {
    Eigen::VectorXd eta = eta_at(gamma);
    if (!cmap.eta_in_domain(eta)) return kNegInf;
    Eigen::VectorXd theta = cmap.map(eta);
    if (!cmap.base.domain_check(theta)) return kNegInf;
    double psi0 = cmap.base.log_partition(frame.theta0);
    double psi = cmap.base.log_partition(theta);
    double ll = n * x_bar.dot(theta - frame.theta0) - n * (psi - psi0);
    return ll + prior.log_density_up_to_constant(theta);
  }

  double log_reference(const Eigen::VectorXd& gamma) const {
    Eigen::VectorXd c = gamma - s;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram_inv);
    double quad = c.dot(ldlt.solve(c));
    double logdet = 0.0;
    Eigen::VectorXd diag = ldlt.vectorD();
    for (int i = 0; i < diag.size(); ++i) logdet += std::log(diag(i));
    return -0.5 * quad - 0.5 * logdet - 0.5 * dim() * std::log(2.0 * M_PI);
  }
};

inline CurvedLocalPosterior curved_local_posterior(const CurvedMap& cmap,
                                                   const PriorSpec& prior,
                                                   const Eigen::MatrixXd& data) {
  if (data.cols() != cmap.d)
    throw DimensionMismatch("curved_local_posterior: data dimension != ambient dimension");
  CurvedLocalPosterior post;
  post.cmap = cmap;
  post.frame = LocalFrame::at(cmap.base, cmap.map(cmap.eta0));
  post.prior = prior;
  post.x_bar = data.colwise().mean();
  post.n = static_cast<int>(data.rows());
  post.lin = linearize(cmap, post.frame, post.n, 1.0, 512, 11);
  post.s = s_statistic(post.lin, post.frame, post.x_bar, post.n);
  post.gram_inv = post.lin.gram.inverse();
  return post;
}

namespace detail {

inline double curved_l1_on_grid(const CurvedLocalPosterior& post, double radius, int nodes) {
  const Eigen::VectorXd& center = post.s;
  double log_shift = post.log_unnormalized(center);
  if (log_shift == kNegInf) log_shift = 0.0;
  double norm = 0.0;
  tensor_grid(center, radius, nodes, [&](const Eigen::VectorXd& g, double vol) {
    double lu = post.log_unnormalized(g);
    if (lu != kNegInf) norm += std::exp(lu - log_shift) * vol;
  });
  if (!(norm > 0.0))
    throw std::runtime_error("curved quadrature: posterior mass vanishes on grid");
  double dist = 0.0;
  tensor_grid(center, radius, nodes, [&](const Eigen::VectorXd& g, double vol) {
    double lu = post.log_unnormalized(g);
    double p = (lu == kNegInf) ? 0.0 : std::exp(lu - log_shift) / norm;
    dist += std::abs(p - std::exp(post.log_reference(g))) * vol;
  });
  return dist;
}

}  // namespace detail

inline DistanceEstimate curved_tv_quadrature(const CurvedLocalPosterior& post,
                                             const QuadratureGrid& grid) {
  const int d1 = post.dim();
  if (d1 > 3) throw DimensionTooLarge("curved quadrature limited to d1 <= 3");
  SymmetricMatrix gram_inv(0.5 * (post.gram_inv + post.gram_inv.transpose()));
  double sigma_max = std::sqrt(eig_extremes(gram_inv).second);
  double radius = grid.radius * sigma_max;
  double fine = detail::curved_l1_on_grid(post, radius, grid.nodes_per_axis);
  double coarse = detail::curved_l1_on_grid(post, radius, grid.nodes_per_axis / 2);
  double tail = detail::gaussian_tail_outside_box(d1, grid.radius);
  return {fine, std::abs(fine - coarse) + tail};
}

inline DistanceEstimate curved_tv_importance(const CurvedLocalPosterior& post, int budget,
                                             std::uint64_t seed) {
  if (budget < 1000) throw std::invalid_argument("importance: budget >= 1000 required");
  const int d1 = post.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(2.0 * post.gram_inv);
  if (llt.info() != Eigen::Success)
    throw DegenerateJacobian("curved importance: proposal covariance not PD");
  Eigen::MatrixXd chol = llt.matrixL();
  double log_det_prop = 0.0;
  for (int i = 0; i < d1; ++i) log_det_prop += 2.0 * std::log(chol(i, i));

  Rng rng(seed);
  Eigen::VectorXd log_w(budget), log_post(budget), log_prop(budget), log_phi(budget);
  Eigen::MatrixXd prop_inv = (2.0 * post.gram_inv).inverse();
  for (int i = 0; i < budget; ++i) {
    Eigen::VectorXd g = post.s + chol * rng.normal_vector(d1);
    Eigen::VectorXd c = g - post.s;
    log_prop(i) = -0.5 * c.dot(prop_inv * c) - 0.5 * log_det_prop -
                  0.5 * d1 * std::log(2.0 * M_PI);
    log_post(i) = post.log_unnormalized(g);
    log_phi(i) = post.log_reference(g);
    log_w(i) = (log_post(i) == kNegInf) ? kNegInf : log_post(i) - log_prop(i);
  }
  double max_lw = log_w.maxCoeff();
  if (max_lw == kNegInf)
    throw DegenerateWeights("curved importance: all proposal draws off-domain");
  double sum_w = 0.0, sum_w2 = 0.0;
  for (int i = 0; i < budget; ++i) {
    double w = (log_w(i) == kNegInf) ? 0.0 : std::exp(log_w(i) - max_lw);
    sum_w += w;
    sum_w2 += w * w;
  }
  if (sum_w * sum_w / sum_w2 < 0.005 * budget)
    throw DegenerateWeights("curved importance: effective sample size below 0.5% of budget");
  double log_zhat = max_lw + std::log(sum_w / budget);
  double estimate = 0.0;
  Eigen::VectorXd terms(budget);
  for (int i = 0; i < budget; ++i) {
    double p = (log_post(i) == kNegInf) ? 0.0 : std::exp(log_post(i) - log_zhat);
    terms(i) = std::abs(p - std::exp(log_phi(i))) / std::exp(log_prop(i));
    estimate += terms(i);
  }
  estimate /= budget;
  double var = (terms.array() - estimate).square().sum() /
               (static_cast<double>(budget) * (budget - 1));
  return {estimate, std::sqrt(var)};
}

// Maximum likelihood over Psi: projected gradient ascent with backtracking
// from eta_0-adjacent plus random starts.
struct CurvedMleResult {
  Eigen::VectorXd eta_hat;
  double norm_error = 0.0;
  double objective = 0.0;
};

inline CurvedMleResult curved_mle(const CurvedMap& cmap, const Eigen::VectorXd& x_bar, int n,
                                  int starts, std::uint64_t seed) {
  if (starts < 1) throw std::invalid_argument("curved_mle: starts >= 1 required");
  const int d1 = cmap.d1;
  auto objective = [&](const Eigen::VectorXd& eta) {
    if (!cmap.eta_in_domain(eta)) return kNegInf;
    Eigen::VectorXd theta = cmap.map(eta);
    if (!cmap.base.domain_check(theta)) return kNegInf;
    return n * x_bar.dot(theta) - n * cmap.base.log_partition(theta);
  };
  auto project = [&](Eigen::VectorXd eta) {
    for (int j = 0; j < d1; ++j)
      eta(j) = std::min(cmap.psi_upper(j), std::max(cmap.psi_lower(j), eta(j)));
    return eta;
  };
  auto fd_gradient = [&](const Eigen::VectorXd& eta) {
    Eigen::VectorXd g(d1);
    for (int j = 0; j < d1; ++j) {
      double h = 1e-6 * (1.0 + std::abs(eta(j)));
      Eigen::VectorXd ep = project(eta + h * Eigen::VectorXd::Unit(d1, j));
      Eigen::VectorXd em = project(eta - h * Eigen::VectorXd::Unit(d1, j));
      double span = ep(j) - em(j);
      g(j) = (span > 0.0) ? (objective(ep) - objective(em)) / span : 0.0;
    }
    return g;
  };

  Rng rng(seed);
  Eigen::VectorXd best;
  double best_value = kNegInf;
  bool any_converged = false;
  for (int s = 0; s < starts + 1; ++s) {
    Eigen::VectorXd eta;
    if (s == 0) {
      eta = cmap.eta0;
    } else {
      eta.resize(d1);
      for (int j = 0; j < d1; ++j) eta(j) = rng.uniform(cmap.psi_lower(j), cmap.psi_upper(j));
    }
    if (!cmap.eta_in_domain(eta)) continue;
    double value = objective(eta);
    if (value == kNegInf) continue;
    bool progressed = false;
    for (int it = 0; it < 200; ++it) {
      Eigen::VectorXd g = fd_gradient(eta);
      if (g.norm() < 1e-10 * (1.0 + std::abs(value))) break;
      double step = 1.0 / std::max(1.0, g.norm());
      bool moved = false;
      for (int bt = 0; bt < 50; ++bt) {
        Eigen::VectorXd eta_try = project(eta + step * g);
        double v_try = objective(eta_try);
        if (v_try > value + 1e-14 * std::abs(value)) {
          eta = eta_try;
          value = v_try;
          moved = true;
          progressed = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    if (progressed || s == 0) any_converged = true;
    if (value > best_value) {
      best_value = value;
      best = eta;
    }
  }
  if (!any_converged || best.size() == 0)
    throw NoConvergedStart("curved_mle: every start failed to make line-search progress");
  return {best, (best - cmap.eta0).norm(), best_value};
}

// Ratio of prior-weighted likelihood mass outside B(0, k_bar sqrt(d)) in the
// local curved parameter, by quadrature over Gamma (d1 <= 2).
inline double tail_mass_audit(const CurvedLocalPosterior& post, double k_bar, int nodes = 256) {
  const int d1 = post.dim();
  if (d1 > 2) throw DimensionTooLarge("tail_mass_audit: quadrature limited to d1 <= 2");
  const double cutoff = k_bar * std::sqrt(static_cast<double>(post.cmap.d));
  SymmetricMatrix gram_inv(0.5 * (post.gram_inv + post.gram_inv.transpose()));
  double sigma_max = std::sqrt(eig_extremes(gram_inv).second);
  double radius = std::max(cutoff + 2.0, post.s.norm() + 12.0 * sigma_max);
  Eigen::VectorXd origin = Eigen::VectorXd::Zero(d1);
  double log_shift = post.log_unnormalized(origin);
  if (log_shift == kNegInf) log_shift = 0.0;
  double outside = 0.0, total = 0.0;
  detail::tensor_grid(origin, radius, nodes, [&](const Eigen::VectorXd& g, double vol) {
    double lu = post.log_unnormalized(g);
    if (lu == kNegInf) return;
    double mass = std::exp(lu - log_shift) * vol;
    total += mass;
    if (g.norm() >= cutoff) outside += mass;
  });
  if (!(total > 0.0)) throw std::runtime_error("tail_mass_audit: no posterior mass on grid");
  return outside / total;
}

// ---------------------------------------------------------------------------
// Instances

inline CurvedMap identity_embedding(const ExpFamilyModel& base) {
  CurvedMap cmap;
  cmap.map = [](const Eigen::VectorXd& eta) { return eta; };
  cmap.d1 = base.dim;
  cmap.d = base.dim;
  cmap.eta0 = base.theta0;
  cmap.psi_lower = Eigen::VectorXd::Constant(base.dim, -20.0);
  cmap.psi_upper = Eigen::VectorXd::Constant(base.dim, 20.0);
  cmap.base = base;
  return cmap;
}

// Curved model induced by a moment-restricted multinomial: the base is the
// multinomial at q(eta_0) and the map is eta -> log(q_j(eta)/q_0(eta)).
inline CurvedMap el_curved_map(const MomentModel& moment_model, const Eigen::VectorXd& eta0) {
  CurvedMap cmap;
  cmap.d1 = moment_model.d1;
  cmap.d = moment_model.support_size() - 1;
  cmap.eta0 = eta0;
  cmap.psi_lower = moment_model.psi_lower;
  cmap.psi_upper = moment_model.psi_upper;
  cmap.map = [moment_model](const Eigen::VectorXd& eta) {
    return theta_of_eta(moment_model, eta);
  };
  ELSolution sol = profile_q(moment_model, eta0);
  MultinomialSpec spec;
  spec.probs = sol.q;
  cmap.base = build_multinomial(spec);
  return cmap;
}

// Seemingly unrelated regressions: eta = (vech Sigma^{-1}, free Pi entries),
// theta(eta) = (-Sigma^{-1}/2, Pi Sigma^{-1}) over the mv-linear base. The
// zero pattern marks which Pi entries are free.
struct SurSpec {
  MvLinearSpec base_spec;                      // Pi must respect the pattern
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> pattern;  // d_c x d_r, true = free
  double lambda_min_floor = 0.0;               // lambda_min(Sigma) > floor
  double operator_bound = 0.0;                 // ||Pi|| < M, M > 1
};

inline CurvedMap sur_map(const SurSpec& spec) {
  spec.base_spec.validate();
  const int d_r = spec.base_spec.d_r, d_c = spec.base_spec.d_c;
  if (spec.pattern.rows() != d_c || spec.pattern.cols() != d_r)
    throw InvalidPattern("sur_map: pattern shape mismatch");
  if (!(spec.lambda_min_floor > 0.0) || !(spec.operator_bound > 1.0))
    throw InvalidPattern("sur_map: need lambda_min > 0 and M > 1");
  for (int a = 0; a < d_c; ++a) {
    bool used = false;
    for (int k = 0; k < d_r; ++k) used = used || spec.pattern(a, k);
    if (!used)
      throw InvalidPattern("sur_map: covariate " + std::to_string(a) +
                           " excluded from every equation");
  }
  for (int a = 0; a < d_c; ++a)
    for (int k = 0; k < d_r; ++k)
      if (!spec.pattern(a, k) && spec.base_spec.Pi(a, k) != 0.0)
        throw InvalidPattern("sur_map: Pi violates its zero pattern");

  std::vector<std::pair<int, int>> free_entries;
  for (int a = 0; a < d_c; ++a)
    for (int k = 0; k < d_r; ++k)
      if (spec.pattern(a, k)) free_entries.emplace_back(a, k);

  const int sym = d_r * (d_r + 1) / 2;
  const int d1 = sym + static_cast<int>(free_entries.size());
  const detail::MvLinearCoords coords{d_r, d_c};

  auto unpack = [=](const Eigen::VectorXd& eta) {
    Eigen::MatrixXd sigma_inv = detail::unvech(eta.head(sym), d_r);
    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(d_c, d_r);
    for (std::size_t i = 0; i < free_entries.size(); ++i)
      pi(free_entries[i].first, free_entries[i].second) = eta(sym + static_cast<int>(i));
    return std::make_pair(sigma_inv, pi);
  };

  CurvedMap cmap;
  cmap.d1 = d1;
  cmap.d = coords.dim();
  cmap.map = [=](const Eigen::VectorXd& eta) {
    auto [sigma_inv, pi] = unpack(eta);
    return coords.join(-0.5 * sigma_inv, pi * sigma_inv);
  };
  cmap.eta0 = Eigen::VectorXd(d1);
  Eigen::MatrixXd sigma_inv0 = spec.base_spec.Sigma.inverse();
  cmap.eta0.head(sym) = detail::vech(sigma_inv0);
  for (std::size_t i = 0; i < free_entries.size(); ++i)
    cmap.eta0(sym + static_cast<int>(i)) =
        spec.base_spec.Pi(free_entries[i].first, free_entries[i].second);
  cmap.psi_lower = cmap.eta0.array() - 10.0;
  cmap.psi_upper = cmap.eta0.array() + 10.0;
  cmap.predicate = [=, floor = spec.lambda_min_floor, bound = spec.operator_bound](
                       const Eigen::VectorXd& eta) {
    auto [sigma_inv, pi] = unpack(eta);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_inv, Eigen::EigenvaluesOnly);
    // lambda_min(Sigma) > floor is lambda_max(Sigma^{-1}) < 1/floor, a convex
    // restriction; the operator bound caps ||Pi||.
    if (es.eigenvalues()(0) <= 0.0) return false;
    if (es.eigenvalues()(sigma_inv.rows() - 1) >= 1.0 / floor) return false;
    return operator_norm(pi) < bound;
  };
  cmap.base = build_mv_linear(spec.base_spec);
  return cmap;
}

// Single structural equation y1 = Y2 beta + Z1 gamma + v embedded in the
// reduced form through eta = (Sigma^{-1}, Pi12, Pi22, gamma, beta).
struct SsemSpec {
  int d_r = 0;   // dimension of (y1 : Y2)
  int d_z1 = 0;  // included instruments
  int d_z2 = 0;  // excluded instruments
  Eigen::VectorXd beta;    // d_r - 1
  Eigen::VectorXd gamma;   // d_z1
  Eigen::MatrixXd Pi12;    // d_z1 x (d_r - 1)
  Eigen::MatrixXd Pi22;    // d_z2 x (d_r - 1), full column rank
  Eigen::MatrixXd Sigma;   // d_r x d_r
  Eigen::MatrixXd Z;       // n x (d_z1 + d_z2)
};

inline CurvedMap ssem_map(const SsemSpec& spec) {
  const int d_r = spec.d_r, d_z1 = spec.d_z1, d_z2 = spec.d_z2;
  const int d_c = d_z1 + d_z2;
  const int d_r1 = d_r - 1;
  if (d_r < 2 || d_z1 < 1 || d_z2 < 1) throw InvalidSpec("ssem_map: dimensions too small");
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(spec.Pi22);
    if (svd.rank() < d_r1 ||
        svd.singularValues()(svd.singularValues().size() - 1) < 1e-10)
      throw RankDeficient("ssem_map: rank(Pi22) < d_r - 1");
  }
  const int sym = d_r * (d_r + 1) / 2;
  const detail::MvLinearCoords coords{d_r, d_c};
  const int d1 = sym + d_z1 * d_r1 + d_z2 * d_r1 + d_z1 + d_r1;

  auto build_pi = [=](const Eigen::MatrixXd& pi12, const Eigen::MatrixXd& pi22,
                      const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta) {
    // Reduced-form coefficient matrix: first column for y1, the rest for Y2.
    Eigen::MatrixXd pi(d_c, d_r);
    pi.block(0, 0, d_z1, 1) = pi12 * beta + gamma;
    pi.block(d_z1, 0, d_z2, 1) = pi22 * beta;
    pi.block(0, 1, d_z1, d_r1) = pi12;
    pi.block(d_z1, 1, d_z2, d_r1) = pi22;
    return pi;
  };
  auto unpack = [=](const Eigen::VectorXd& eta) {
    int off = 0;
    Eigen::MatrixXd sigma_inv = detail::unvech(eta.segment(off, sym), d_r);
    off += sym;
    Eigen::MatrixXd pi12 = Eigen::Map<const Eigen::MatrixXd>(eta.data() + off, d_z1, d_r1);
    off += d_z1 * d_r1;
    Eigen::MatrixXd pi22 = Eigen::Map<const Eigen::MatrixXd>(eta.data() + off, d_z2, d_r1);
    off += d_z2 * d_r1;
    Eigen::VectorXd gamma = eta.segment(off, d_z1);
    off += d_z1;
    Eigen::VectorXd beta = eta.segment(off, d_r1);
    return std::make_tuple(sigma_inv, pi12, pi22, gamma, beta);
  };

  CurvedMap cmap;
  cmap.d1 = d1;
  cmap.d = coords.dim();
  cmap.map = [=](const Eigen::VectorXd& eta) {
    auto [sigma_inv, pi12, pi22, gamma, beta] = unpack(eta);
    return coords.join(-0.5 * sigma_inv, build_pi(pi12, pi22, gamma, beta) * sigma_inv);
  };
  cmap.eta0 = Eigen::VectorXd(d1);
  {
    int off = 0;
    cmap.eta0.segment(off, sym) = detail::vech(Eigen::MatrixXd(spec.Sigma.inverse()));
    off += sym;
    Eigen::Map<Eigen::MatrixXd>(cmap.eta0.data() + off, d_z1, d_r1) = spec.Pi12;
    off += d_z1 * d_r1;
    Eigen::Map<Eigen::MatrixXd>(cmap.eta0.data() + off, d_z2, d_r1) = spec.Pi22;
    off += d_z2 * d_r1;
    cmap.eta0.segment(off, d_z1) = spec.gamma;
    off += d_z1;
    cmap.eta0.segment(off, d_r1) = spec.beta;
  }
  cmap.psi_lower = cmap.eta0.array() - 10.0;
  cmap.psi_upper = cmap.eta0.array() + 10.0;
  cmap.predicate = [=](const Eigen::VectorXd& eta) {
    auto [sigma_inv, pi12, pi22, gamma, beta] = unpack(eta);
    (void)pi12;
    (void)pi22;
    (void)gamma;
    (void)beta;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_inv, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0) > 0.0;
  };

  MvLinearSpec base;
  base.d_r = d_r;
  base.d_c = d_c;
  base.Pi = build_pi(spec.Pi12, spec.Pi22, spec.gamma, spec.beta);
  base.Sigma = spec.Sigma;
  base.Z = spec.Z;
  cmap.base = build_mv_linear(base);
  return cmap;
}

}  // namespace bvm
