#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvm/expfam.hpp"
#include "bvm/local.hpp"
#include "bvm/matrix.hpp"
#include "bvm/rng.hpp"

// Diagnostic quantities B_1n(c), B_2n(c), lambda_n(c), a_n, the inequality
// audits (pointwise and integrated deviation bounds, tail bound, reverse
// moment inequality) and growth-condition bookkeeping.

namespace bvm {

struct UnsupportedMethod : std::runtime_error {
  explicit UnsupportedMethod(const std::string& what) : std::runtime_error(what) {}
};

struct PreconditionViolated : std::runtime_error {
  explicit PreconditionViolated(const std::string& what) : std::runtime_error(what) {}
};

enum class BoundMethod { exact_enumeration, monte_carlo };

struct MomentBoundOptions {
  BoundMethod method = BoundMethod::exact_enumeration;
  int direction_restarts = 32;   // power-iteration restarts (exact expectations)
  int direction_budget = 4096;   // random-search budget (monte carlo expectations)
  int shell_budget = 16;         // theta probes on the ball boundary
  int mc_draws = 100000;
};

namespace detail {

// sup_{||a||=1} E|<a, V>|^k with an exact finite-support expectation, by the
// convex-homogeneous power iteration with random restarts.
inline double direction_sup_exact(const Eigen::MatrixXd& v_atoms, const Eigen::VectorXd& probs,
                                  int k, int restarts, Rng& rng) {
  const int d = static_cast<int>(v_atoms.cols());
  auto objective = [&](const Eigen::VectorXd& a) {
    Eigen::VectorXd t = v_atoms * a;
    double s = 0.0;
    for (int j = 0; j < t.size(); ++j) s += probs(j) * std::pow(std::abs(t(j)), k);
    return s;
  };
  auto gradient = [&](const Eigen::VectorXd& a) {
    Eigen::VectorXd t = v_atoms * a;
    Eigen::VectorXd w(t.size());
    for (int j = 0; j < t.size(); ++j)
      w(j) = probs(j) * k * std::pow(std::abs(t(j)), k - 1) * (t(j) >= 0.0 ? 1.0 : -1.0);
    return Eigen::VectorXd(v_atoms.transpose() * w);
  };
  double best = 0.0;
  for (int r = 0; r < restarts; ++r) {
    Eigen::VectorXd a = (r == 0 && d >= 1) ? Eigen::VectorXd::Unit(d, 0) : rng.unit_sphere(d);
    double value = objective(a);
    for (int it = 0; it < 500; ++it) {
      Eigen::VectorXd g = gradient(a);
      double gn = g.norm();
      if (gn < 1e-300) break;
      Eigen::VectorXd a_next = g / gn;
      double next = objective(a_next);
      if (next <= value + 1e-14 * (1.0 + value)) {
        value = std::max(value, next);
        break;
      }
      a = a_next;
      value = next;
    }
    best = std::max(best, value);
  }
  return best;
}

// Random-direction search over sampled rows: sup_a mean |<a, V_i>|^k.
inline double direction_sup_mc(const Eigen::MatrixXd& v_rows, int k, int budget, Rng& rng) {
  const int d = static_cast<int>(v_rows.cols());
  const int m = static_cast<int>(v_rows.rows());
  const int block = 256;
  double best = 0.0;
  for (int done = 0; done < budget; done += block) {
    int cols = std::min(block, budget - done);
    Eigen::MatrixXd dirs(d, cols);
    for (int j = 0; j < cols; ++j) dirs.col(j) = rng.unit_sphere(d);
    Eigen::MatrixXd t = v_rows * dirs;  // m x cols
    for (int j = 0; j < cols; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += std::pow(std::abs(t(i, j)), k);
      best = std::max(best, s / m);
    }
  }
  return best;
}

// Projected moment sup at one theta.
inline double projected_moment_sup(const ExpFamilyModel& model, const LocalFrame& frame,
                                   const Eigen::VectorXd& theta, int k,
                                   const MomentBoundOptions& opts, Rng& rng) {
  if (opts.method == BoundMethod::exact_enumeration) {
    if (!model.finite_support())
      throw UnsupportedMethod("exact enumeration requires a finite-support model");
    if (model.support.size() > 1000000)
      throw UnsupportedMethod("exact enumeration limited to 1e6 atoms");
    Eigen::VectorXd probs = model.atom_probs(theta);
    Eigen::VectorXd mean = model.grad(theta);
    Eigen::MatrixXd v(model.support.size(), model.dim);
    for (std::size_t j = 0; j < model.support.size(); ++j)
      v.row(static_cast<int>(j)) = (frame.J_inv * (model.support[j] - mean)).transpose();
    return direction_sup_exact(v, probs, k, opts.direction_restarts, rng);
  }
  Eigen::MatrixXd draws = model.sampler(theta, opts.mc_draws, rng.next_u64());
  Eigen::VectorXd mean = model.grad(theta);
  Eigen::MatrixXd v = (draws.rowwise() - mean.transpose()) * frame.J_inv.transpose();
  return direction_sup_mc(v, k, opts.direction_budget, rng);
}

// Sup over the ball ||J(theta - theta_0)||^2 <= c d / n: probe theta_0 plus
// boundary shell points, then polish the best shell direction locally.
inline double ball_moment_sup(const ExpFamilyModel& model, const LocalFrame& frame, int n,
                              double c, int k, const MomentBoundOptions& opts,
                              std::uint64_t seed) {
  Rng rng(seed);
  double best = projected_moment_sup(model, frame, frame.theta0, k, opts, rng);
  if (c <= 0.0) return best;
  const double radius = std::sqrt(c * model.dim / static_cast<double>(n));
  Eigen::VectorXd best_dir;
  for (int s = 0; s < opts.shell_budget; ++s) {
    Eigen::VectorXd w = rng.unit_sphere(model.dim);
    Eigen::VectorXd theta = frame.theta0 + radius * (frame.J_inv * w);
    if (!model.domain_check(theta)) continue;
    double value = projected_moment_sup(model, frame, theta, k, opts, rng);
    if (value > best) {
      best = value;
      best_dir = w;
    }
  }
  if (best_dir.size() > 0) {
    // Local polish: small perturbations of the best boundary direction.
    for (int it = 0; it < 8; ++it) {
      Eigen::VectorXd w = (best_dir + 0.25 * rng.normal_vector(model.dim)).normalized();
      Eigen::VectorXd theta = frame.theta0 + radius * (frame.J_inv * w);
      if (!model.domain_check(theta)) continue;
      double value = projected_moment_sup(model, frame, theta, k, opts, rng);
      if (value > best) {
        best = value;
        best_dir = w;
      }
    }
  }
  return best;
}

}  // namespace detail

inline double b1n(const ExpFamilyModel& model, const LocalFrame& frame, int n, double c,
                  const MomentBoundOptions& opts, std::uint64_t seed) {
  return detail::ball_moment_sup(model, frame, n, c, 3, opts, seed);
}

inline double b2n(const ExpFamilyModel& model, const LocalFrame& frame, int n, double c,
                  const MomentBoundOptions& opts, std::uint64_t seed) {
  return detail::ball_moment_sup(model, frame, n, c, 4, opts, seed);
}

inline double lambda_n(double b1_at_0, double b2_at_c, double c, int d, int n) {
  double ratio = c * d / static_cast<double>(n);
  return (std::sqrt(ratio) * b1_at_0 + ratio * b2_at_c) / 6.0;
}

// Largest c <= c_max with lambda_n(c) <= threshold; +infinity sentinel when
// the threshold never binds on [0, c_max].
inline double a_n_bisect(const ExpFamilyModel& model, const LocalFrame& frame, int n,
                         double c_max, const MomentBoundOptions& opts, std::uint64_t seed,
                         double threshold = 1.0 / 16.0, double tol = 1e-6) {
  if (c_max <= 0.0) throw std::invalid_argument("a_n_bisect: c_max > 0 required");
  double b1_0 = b1n(model, frame, n, 0.0, opts, seed);
  auto lambda_at = [&](double c) {
    double b2_c = b2n(model, frame, n, c, opts, seed);
    return lambda_n(b1_0, b2_c, c, model.dim, n);
  };
  if (lambda_at(c_max) <= threshold) return std::numeric_limits<double>::infinity();
  double lo = 0.0, hi = c_max;
  while (hi - lo > tol * std::max(1.0, hi)) {
    double mid = 0.5 * (lo + hi);
    if (lambda_at(mid) <= threshold)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Reverse moment inequality for log-concave samples:
//   (E ||X||^k)^{1/k} <= 2k (E ||X||^2)^{1/2}.

struct ReverseMomentReport {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

inline ReverseMomentReport lv_reverse_moment_check(const Eigen::MatrixXd& samples, int k) {
  if (k < 1) throw std::invalid_argument("lv_reverse_moment_check: k >= 1 required");
  const int m = static_cast<int>(samples.rows());
  Eigen::VectorXd norms = samples.rowwise().norm();
  double mean_k = 0.0, mean_2 = 0.0, mean_2k = 0.0;
  for (int i = 0; i < m; ++i) {
    double nk = std::pow(norms(i), k);
    mean_k += nk;
    mean_2 += norms(i) * norms(i);
    mean_2k += nk * nk;
  }
  mean_k /= m;
  mean_2 /= m;
  mean_2k /= m;
  ReverseMomentReport rep;
  rep.lhs = std::pow(mean_k, 1.0 / k);
  rep.rhs = 2.0 * k * std::sqrt(mean_2);
  double se = std::sqrt(std::max(0.0, mean_2k - mean_k * mean_k) / m);
  double rel_err = (mean_k > 0.0) ? se / (k * mean_k) : 0.0;  // relative error of lhs
  rep.holds = rep.lhs <= rep.rhs * (1.0 + 3.0 * rel_err);
  return rep;
}

// ---------------------------------------------------------------------------
// Lemma audits. These run on finite-support models with exact B's, so any
// reported violation is conclusive.

struct Lemma1Report {
  double lambda = 0.0;
  double max_excess_pointwise = 0.0;  // max |ln Z - ln Z~| - lambda ||u||^2
  double max_excess_upper = 0.0;      // max ln Z - (<Delta,u> - ||u||^2 (1-2 lambda)/2)
  int violations = 0;                 // samples with excess beyond 1e-10
  int samples = 0;
};

inline Lemma1Report lemma1_audit(const LocalPosterior& posterior, double c, int u_budget,
                                 std::uint64_t seed,
                                 const MomentBoundOptions& opts = MomentBoundOptions{}) {
  if (c <= 0.0) throw std::invalid_argument("lemma1_audit: c > 0 required");
  const auto& frame = posterior.frame;
  const auto& summary = posterior.summary;
  const int d = posterior.dim();
  Rng rng(seed);
  double b1_0 = b1n(frame.model, frame, summary.n, 0.0, opts, rng.next_u64());
  double b2_c = b2n(frame.model, frame, summary.n, c, opts, rng.next_u64());
  Lemma1Report rep;
  rep.lambda = lambda_n(b1_0, b2_c, c, d, summary.n);
  rep.samples = u_budget;
  const double radius = std::sqrt(c * d);
  for (int i = 0; i < u_budget; ++i) {
    Eigen::VectorXd u = rng.ball(d, radius);
    double lz = log_Z(frame, summary, u);
    if (lz == kNegInf) continue;  // off-domain points carry no claim
    double lzt = log_Z_tilde(summary, u);
    double excess1 = std::abs(lz - lzt) - rep.lambda * u.squaredNorm();
    double excess2 =
        lz - (summary.delta_n.dot(u) - 0.5 * u.squaredNorm() * (1.0 - 2.0 * rep.lambda));
    rep.max_excess_pointwise = std::max(rep.max_excess_pointwise, excess1);
    rep.max_excess_upper = std::max(rep.max_excess_upper, excess2);
    if (excess1 > 1e-10 || excess2 > 1e-10) ++rep.violations;
  }
  return rep;
}

struct AuditVerdict {
  double lhs = 0.0;
  double rhs = 0.0;
  double quadrature_error = 0.0;
  bool holds = false;
};

namespace detail {

inline double z_tilde_integral(const SampleSummary& summary, int d) {
  // int exp(<u,Delta> - ||u||^2/2) du over R^d.
  return std::pow(2.0 * M_PI, 0.5 * d) * std::exp(0.5 * summary.delta_n.squaredNorm());
}

template <typename Pred, typename Fn>
double grid_integral(int d, const Eigen::VectorXd& center, double radius, int nodes,
                     Pred&& pred, Fn&& fn) {
  double acc = 0.0;
  tensor_grid(center, radius, nodes, [&](const Eigen::VectorXd& u, double vol) {
    if (pred(u)) acc += fn(u) * vol;
  });
  return acc;
}

}  // namespace detail

// Integrated deviation inside the ball: lhs <= c d lambda e^{c d lambda}.
inline AuditVerdict lemma3_audit(const LocalPosterior& posterior, double c,
                                 const MomentBoundOptions& opts = MomentBoundOptions{},
                                 std::uint64_t seed = 1, int nodes = 256) {
  const int d = posterior.dim();
  if (d > 2) throw DimensionTooLarge("lemma3_audit: quadrature limited to d <= 2");
  const auto& frame = posterior.frame;
  const auto& summary = posterior.summary;
  Rng rng(seed);
  double b1_0 = b1n(frame.model, frame, summary.n, 0.0, opts, rng.next_u64());
  double b2_c = b2n(frame.model, frame, summary.n, c, opts, rng.next_u64());
  double lambda = lambda_n(b1_0, b2_c, c, d, summary.n);
  const double radius = std::sqrt(c * d);
  auto in_ball = [radius](const Eigen::VectorXd& u) { return u.norm() <= radius; };
  auto dev = [&](const Eigen::VectorXd& u) {
    double lz = log_Z(frame, summary, u);
    double z = (lz == kNegInf) ? 0.0 : std::exp(lz);
    return std::abs(z - std::exp(log_Z_tilde(summary, u)));
  };
  Eigen::VectorXd origin = Eigen::VectorXd::Zero(d);
  double fine = detail::grid_integral(d, origin, radius, nodes, in_ball, dev);
  double coarse = detail::grid_integral(d, origin, radius, nodes / 2, in_ball, dev);
  double zt = detail::z_tilde_integral(summary, d);
  AuditVerdict v;
  v.lhs = fine / zt;
  v.rhs = c * d * lambda * std::exp(c * d * lambda);
  v.quadrature_error = std::abs(fine - coarse) / zt;
  v.holds = v.lhs <= v.rhs + v.quadrature_error;
  return v;
}

// Tail bound: prior-weighted mass of Z_n outside the ball of radius
// k sqrt(c d) against (sup pi) e^{c d lambda} (int Z~) e^{-k c d / 8}.
inline AuditVerdict lemma4_audit(const LocalPosterior& posterior, double c, double k, double c1,
                                 const MomentBoundOptions& opts = MomentBoundOptions{},
                                 std::uint64_t seed = 1, int nodes = 512) {
  const int d = posterior.dim();
  if (d > 2) throw DimensionTooLarge("lemma4_audit: quadrature limited to d <= 2");
  const auto& frame = posterior.frame;
  const auto& summary = posterior.summary;
  Rng rng(seed);
  double b1_0 = b1n(frame.model, frame, summary.n, 0.0, opts, rng.next_u64());
  double b2_c = b2n(frame.model, frame, summary.n, c, opts, rng.next_u64());
  double lambda = lambda_n(b1_0, b2_c, c, d, summary.n);

  std::string failed;
  if (!(summary.delta_n.squaredNorm() < c1 * d)) failed += " ||Delta_n||^2 < C1 d;";
  if (!(lambda < 1.0 / 16.0)) failed += " lambda_n(c) < 1/16;";
  if (!(c > 16.0 * std::max(4.0 * c1, 1.0 / (1.0 - 2.0 * lambda))))
    failed += " c > 16 max{4 C1, 1/(1-2 lambda)};";
  if (!(k >= 1.0)) failed += " k >= 1;";
  if (!failed.empty()) throw PreconditionViolated("lemma4_audit:" + failed);

  const double inner = k * std::sqrt(c * d);
  const double outer = inner + 10.0 + summary.delta_n.norm();
  auto in_region = [inner](const Eigen::VectorXd& u) { return u.norm() >= inner; };
  auto weighted_z = [&](const Eigen::VectorXd& u) {
    double lz = log_Z(frame, summary, u);
    if (lz == kNegInf) return 0.0;
    return std::exp(lz + posterior.prior.log_density_up_to_constant(posterior.theta_at(u)));
  };
  Eigen::VectorXd origin = Eigen::VectorXd::Zero(d);
  double fine = detail::grid_integral(d, origin, outer, nodes, in_region, weighted_z);
  double coarse = detail::grid_integral(d, origin, outer, nodes / 2, in_region, weighted_z);

  // sup of the prior density over the probed region (flat prior: 1).
  double sup_prior = 0.0;
  detail::tensor_grid(origin, outer, 32, [&](const Eigen::VectorXd& u, double) {
    sup_prior = std::max(
        sup_prior, std::exp(posterior.prior.log_density_up_to_constant(posterior.theta_at(u))));
  });

  AuditVerdict v;
  v.lhs = fine;
  v.rhs = sup_prior * std::exp(c * d * lambda) * detail::z_tilde_integral(summary, d) *
          std::exp(-k * c * d / 8.0);
  v.quadrature_error = std::abs(fine - coarse);
  v.holds = v.lhs <= v.rhs + v.quadrature_error;
  return v;
}

// ||I - H_theta^{-1} J|| with H_theta the symmetric root of the Hessian at theta.
inline double h_theta_proximity(const ExpFamilyModel& model, const LocalFrame& frame,
                                const Eigen::VectorXd& theta) {
  if (!model.domain_check(theta)) throw OutOfDomain("h_theta_proximity: theta outside domain");
  SymmetricMatrix h = sym_sqrt(model.hessian(theta));
  Eigen::MatrixXd h_inv = h.mat().inverse();
  Eigen::MatrixXd dev = Eigen::MatrixXd::Identity(model.dim, model.dim) - h_inv * frame.J;
  return operator_norm(dev);
}

// ---------------------------------------------------------------------------
// Growth-condition bookkeeping.

struct GrowthCell {
  int d = 0;  // model dimension (or nominal dimension)
  int n = 0;
  int d_r = 0;  // optional response/covariate split; 0 when absent
  int d_c = 0;
};

struct GrowthCondition {
  std::string label;
  std::vector<double> values;  // one per sweep cell, in sweep order
  std::string verdict;         // "decreasing" iff strictly decreasing
};

struct GrowthReport {
  std::string regime_name;
  std::vector<GrowthCondition> conditions;
};

inline GrowthReport growth_check(const std::string& regime, const std::vector<GrowthCell>& cells,
                                 double alpha, double delta) {
  if (cells.size() < 2) throw std::invalid_argument("growth_check: need at least 2 cells");
  GrowthReport rep;
  rep.regime_name = regime;
  auto add = [&](const std::string& label, auto&& ratio) {
    GrowthCondition cond;
    cond.label = label;
    for (const auto& cell : cells) cond.values.push_back(ratio(cell));
    bool decreasing = true;
    for (std::size_t i = 1; i < cond.values.size(); ++i)
      if (!(cond.values[i] < cond.values[i - 1])) decreasing = false;
    cond.verdict = decreasing ? "decreasing" : "increasing";
    rep.conditions.push_back(std::move(cond));
  };
  add("d^4/n", [](const GrowthCell& c) { return std::pow(c.d, 4.0) / c.n; });
  add("d^(4+alpha+delta)/n",
      [&](const GrowthCell& c) { return std::pow(c.d, 4.0 + alpha + delta) / c.n; });
  add("d^4.5/n", [](const GrowthCell& c) { return std::pow(c.d, 4.5) / c.n; });
  if (cells.front().d_r > 0) {
    add("d_r^5/n", [](const GrowthCell& c) { return std::pow(c.d_r, 5.0) / c.n; });
    add("d_r d_c^3/n",
        [](const GrowthCell& c) { return c.d_r * std::pow(c.d_c, 3.0) / c.n; });
  }
  return rep;
}

}  // namespace bvm
