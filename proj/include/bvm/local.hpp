#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bvm/expfam.hpp"
#include "bvm/matrix.hpp"
#include "bvm/rng.hpp"

// Local parameter space machinery: the re-centering Delta_n, the likelihood
// ratio Z_n(u), its Gaussian surrogate, the local posterior, and L1 distances
// to the Gaussian reference (weighted by ||u||^alpha).

namespace bvm {

struct DimensionTooLarge : std::runtime_error {
  explicit DimensionTooLarge(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateWeights : std::runtime_error {
  explicit DegenerateWeights(const std::string& what) : std::runtime_error(what) {}
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LocalFrame {
  ExpFamilyModel model;
  Eigen::VectorXd theta0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd F;
  Eigen::MatrixXd J;
  Eigen::MatrixXd J_inv;

  static LocalFrame at(const ExpFamilyModel& model) { return at(model, model.theta0); }

  static LocalFrame at(const ExpFamilyModel& model, const Eigen::VectorXd& theta0) {
    LocalFrame frame;
    frame.model = model;
    frame.theta0 = theta0;
    frame.mu = model.grad(theta0);
    SymmetricMatrix f = model.hessian(theta0);
    frame.F = f.mat();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(frame.F);
    Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    frame.J = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
    frame.J_inv =
        es.eigenvectors() * roots.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    return frame;
  }
};

struct SampleSummary {
  int n = 0;
  Eigen::VectorXd x_bar;
  Eigen::VectorXd delta_n;
};

inline SampleSummary make_summary(const LocalFrame& frame, const Eigen::MatrixXd& data) {
  if (data.cols() != frame.model.dim)
    throw DimensionMismatch("make_summary: data column count != model dimension");
  SampleSummary s;
  s.n = static_cast<int>(data.rows());
  s.x_bar = data.colwise().mean();
  s.delta_n = std::sqrt(static_cast<double>(s.n)) * (frame.J_inv * (s.x_bar - frame.mu));
  return s;
}

// Prior specified through its log density up to a constant; the flat
// (improper) prior is the zero function.
struct PriorSpec {
  std::function<double(const Eigen::VectorXd&)> log_density_up_to_constant;
  std::function<std::optional<double>(double)> lipschitz_K;  // radius -> K or unknown
  std::optional<double> sup_log_ratio_bound;

  static PriorSpec flat() {
    PriorSpec p;
    p.log_density_up_to_constant = [](const Eigen::VectorXd&) { return 0.0; };
    p.lipschitz_K = [](double) { return std::optional<double>(0.0); };
    p.sup_log_ratio_bound = 0.0;
    return p;
  }
};

// log Z_n(u) = sqrt(n) <x_bar, J^{-1}u> - n [psi(theta_0 + J^{-1}u/sqrt(n)) - psi(theta_0)],
// and -inf whenever theta_0 + J^{-1}u/sqrt(n) leaves the domain.
inline double log_Z(const LocalFrame& frame, const SampleSummary& summary,
                    const Eigen::VectorXd& u) {
  const double root_n = std::sqrt(static_cast<double>(summary.n));
  Eigen::VectorXd theta = frame.theta0 + (frame.J_inv * u) / root_n;
  if (!frame.model.domain_check(theta)) return kNegInf;
  double psi0 = frame.model.log_partition(frame.theta0);
  double psi = frame.model.log_partition(theta);
  return root_n * summary.x_bar.dot(frame.J_inv * u) - summary.n * (psi - psi0);
}

inline double log_Z_tilde(const SampleSummary& summary, const Eigen::VectorXd& u) {
  return u.dot(summary.delta_n) - 0.5 * u.squaredNorm();
}

struct LocalPosterior {
  LocalFrame frame;
  SampleSummary summary;
  PriorSpec prior;

  static LocalPosterior make(const LocalFrame& frame, const SampleSummary& summary,
                             const PriorSpec& prior) {
    return LocalPosterior{frame, summary, prior};
  }

  int dim() const { return frame.model.dim; }

  Eigen::VectorXd theta_at(const Eigen::VectorXd& u) const {
    return frame.theta0 + (frame.J_inv * u) / std::sqrt(static_cast<double>(summary.n));
  }

  double log_unnormalized(const Eigen::VectorXd& u) const {
    double lz = log_Z(frame, summary, u);
    if (lz == kNegInf) return kNegInf;
    return lz + prior.log_density_up_to_constant(theta_at(u));
  }
};

inline double m_d_alpha(int d, double alpha) {
  if (d < 1) throw std::invalid_argument("m_d_alpha: d >= 1 required");
  double da = static_cast<double>(d) + alpha;
  return da * (1.0 + alpha * std::log(da) / da);
}

inline double gaussian_log_density(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                                   double variance = 1.0) {
  const double d = static_cast<double>(u.size());
  return -0.5 * (u - mean).squaredNorm() / variance -
         0.5 * d * std::log(2.0 * M_PI * variance);
}

struct QuadratureGrid {
  int nodes_per_axis = 128;  // >= 64
  double radius = 10.0;      // truncation radius around the reference mean
};

struct DistanceEstimate {
  double estimate = 0.0;
  double error = 0.0;  // absolute error bound (quadrature) or std error (MC)
};

namespace detail {

// Midpoint tensor-grid pass over [center - R, center + R]^d calling
// visit(u, cell_volume). d is small (<= 3).
template <typename Visit>
void tensor_grid(const Eigen::VectorXd& center, double radius, int nodes, Visit&& visit) {
  const int d = static_cast<int>(center.size());
  const double h = 2.0 * radius / nodes;
  double volume = std::pow(h, d);
  std::vector<int> idx(d, 0);
  Eigen::VectorXd u(d);
  while (true) {
    for (int k = 0; k < d; ++k) u(k) = center(k) - radius + (idx[k] + 0.5) * h;
    visit(u, volume);
    int k = 0;
    for (; k < d; ++k) {
      if (++idx[k] < nodes) break;
      idx[k] = 0;
    }
    if (k == d) break;
  }
}

// One quadrature pass: returns the alpha-weighted L1 distance between the
// grid-normalized posterior and the exact Gaussian reference.
inline double weighted_l1_on_grid(const LocalPosterior& posterior, double alpha,
                                  const Eigen::VectorXd& center, double radius, int nodes) {
  // Two passes: normalizer first, then the distance.
  double log_shift = posterior.log_unnormalized(center);
  if (log_shift == kNegInf) log_shift = 0.0;
  double norm = 0.0;
  tensor_grid(center, radius, nodes, [&](const Eigen::VectorXd& u, double vol) {
    double lu = posterior.log_unnormalized(u);
    if (lu != kNegInf) norm += std::exp(lu - log_shift) * vol;
  });
  if (!(norm > 0.0)) throw std::runtime_error("quadrature: posterior mass vanishes on grid");
  double dist = 0.0;
  const Eigen::VectorXd& mean = posterior.summary.delta_n;
  tensor_grid(center, radius, nodes, [&](const Eigen::VectorXd& u, double vol) {
    double lu = posterior.log_unnormalized(u);
    double p = (lu == kNegInf) ? 0.0 : std::exp(lu - log_shift) / norm;
    double phi = std::exp(gaussian_log_density(u, mean));
    double w = (alpha == 0.0) ? 1.0 : std::pow(u.norm(), alpha);
    dist += w * std::abs(p - phi) * vol;
  });
  return dist;
}

inline double gaussian_tail_outside_box(int d, double radius) {
  // Mass of N(mean, I) outside the axis-aligned box of half-width radius.
  double tail_one = 0.5 * std::erfc(radius / std::sqrt(2.0));
  return std::min(1.0, 2.0 * d * tail_one);
}

}  // namespace detail

inline DistanceEstimate alpha_moment_distance_quadrature(const LocalPosterior& posterior,
                                                         double alpha,
                                                         const QuadratureGrid& grid) {
  const int d = posterior.dim();
  if (d > 3) throw DimensionTooLarge("quadrature limited to d <= 3");
  if (grid.nodes_per_axis < 64)
    throw std::invalid_argument("quadrature: at least 64 nodes per axis");
  const Eigen::VectorXd& center = posterior.summary.delta_n;
  double fine = detail::weighted_l1_on_grid(posterior, alpha, center, grid.radius,
                                            grid.nodes_per_axis);
  double coarse = detail::weighted_l1_on_grid(posterior, alpha, center, grid.radius,
                                              grid.nodes_per_axis / 2);
  double tail = detail::gaussian_tail_outside_box(d, grid.radius);
  if (alpha > 0.0) tail *= std::pow(grid.radius * std::sqrt(static_cast<double>(d)) +
                                        center.norm(), alpha);
  return {fine, std::abs(fine - coarse) + tail};
}

inline DistanceEstimate tv_distance_quadrature(const LocalPosterior& posterior,
                                               const QuadratureGrid& grid) {
  return alpha_moment_distance_quadrature(posterior, 0.0, grid);
}

// Self-normalized importance-sampling estimate with proposal N(Delta_n, 2 I).
inline DistanceEstimate alpha_moment_distance_importance(const LocalPosterior& posterior,
                                                         double alpha, int budget,
                                                         std::uint64_t seed) {
  if (budget < 1000) throw std::invalid_argument("importance: budget >= 1000 required");
  const int d = posterior.dim();
  const Eigen::VectorXd& mean = posterior.summary.delta_n;
  const double proposal_var = 2.0;

  Rng rng(seed);
  Eigen::VectorXd log_w(budget);        // log of pi_un / proposal
  Eigen::VectorXd log_post(budget);     // log pi_un
  Eigen::VectorXd log_prop(budget);     // log proposal
  Eigen::VectorXd log_phi(budget);      // log reference gaussian
  Eigen::VectorXd weight_fn(budget);    // ||u||^alpha
  for (int i = 0; i < budget; ++i) {
    Eigen::VectorXd u = mean + std::sqrt(proposal_var) * rng.normal_vector(d);
    log_prop(i) = gaussian_log_density(u, mean, proposal_var);
    log_post(i) = posterior.log_unnormalized(u);
    log_phi(i) = gaussian_log_density(u, mean);
    log_w(i) = (log_post(i) == kNegInf) ? kNegInf : log_post(i) - log_prop(i);
    weight_fn(i) = (alpha == 0.0) ? 1.0 : std::pow(u.norm(), alpha);
  }

  double max_lw = log_w.maxCoeff();
  if (max_lw == kNegInf) throw DegenerateWeights("importance: all proposal draws off-domain");
  double sum_w = 0.0, sum_w2 = 0.0;
  for (int i = 0; i < budget; ++i) {
    double w = (log_w(i) == kNegInf) ? 0.0 : std::exp(log_w(i) - max_lw);
    sum_w += w;
    sum_w2 += w * w;
  }
  double ess = sum_w * sum_w / sum_w2;
  if (ess < 0.005 * budget)
    throw DegenerateWeights("importance: effective sample size below 0.5% of budget");
  double log_zhat = max_lw + std::log(sum_w / budget);  // normalizing constant of pi_un

  auto evaluate = [&](double log_z) {
    double acc = 0.0;
    for (int i = 0; i < budget; ++i) {
      double p = (log_post(i) == kNegInf) ? 0.0 : std::exp(log_post(i) - log_z);
      double integrand = weight_fn(i) * std::abs(p - std::exp(log_phi(i)));
      acc += integrand / std::exp(log_prop(i));
    }
    return acc / budget;
  };
  double estimate = evaluate(log_zhat);

  // Delta method: combine the per-draw spread with the sensitivity of the
  // estimate to the normalizing constant.
  double eps = 1e-4;
  double dT_dlogz = (evaluate(log_zhat + eps) - evaluate(log_zhat - eps)) / (2.0 * eps);
  double var = 0.0;
  for (int i = 0; i < budget; ++i) {
    double p = (log_post(i) == kNegInf) ? 0.0 : std::exp(log_post(i) - log_zhat);
    double f_i = weight_fn(i) * std::abs(p - std::exp(log_phi(i))) / std::exp(log_prop(i));
    double w_i = (log_w(i) == kNegInf) ? 0.0 : std::exp(log_w(i) - log_zhat);
    double influence = (f_i - estimate) + dT_dlogz * (w_i - 1.0);
    var += influence * influence;
  }
  var /= static_cast<double>(budget) * (budget - 1);
  return {estimate, std::sqrt(var)};
}

inline DistanceEstimate tv_distance_importance(const LocalPosterior& posterior, int budget,
                                               std::uint64_t seed) {
  return alpha_moment_distance_importance(posterior, 0.0, budget, seed);
}

}  // namespace bvm
