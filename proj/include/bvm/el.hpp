#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvm/rng.hpp"

// Moment-restricted multinomial machinery: the profile probabilities q(eta)
// maximizing sum_j w_j log q_j under sum_j q_j m(x_j, eta) = 0, solved through
// the Lagrangian dual, and the induced natural-parameter map
// theta_j(eta) = log(q_j(eta)/q_0(eta)).

namespace bvm {

struct Infeasible : std::runtime_error {
  explicit Infeasible(const std::string& what) : std::runtime_error(what) {}
};

struct BoundaryDegenerate : std::runtime_error {
  explicit BoundaryDegenerate(const std::string& what) : std::runtime_error(what) {}
};

struct MomentModel {
  std::vector<Eigen::VectorXd> support;  // d+1 points x_0 .. x_d
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> moment_fn;
  int n_moments = 0;  // M
  int d1 = 0;         // dimension of eta
  Eigen::VectorXd psi_lower, psi_upper;  // box domain for eta
  Eigen::VectorXd weights;               // defaults to uniform when empty

  int support_size() const { return static_cast<int>(support.size()); }

  Eigen::VectorXd effective_weights() const {
    const int m = support_size();
    if (weights.size() == 0) return Eigen::VectorXd::Constant(m, 1.0 / m);
    return weights / weights.sum();
  }

  bool eta_in_domain(const Eigen::VectorXd& eta) const {
    if (psi_lower.size() == 0) return true;
    return (eta.array() >= psi_lower.array()).all() &&
           (eta.array() <= psi_upper.array()).all();
  }

  Eigen::MatrixXd moment_matrix(const Eigen::VectorXd& eta) const {
    Eigen::MatrixXd m(support_size(), n_moments);
    for (int j = 0; j < support_size(); ++j)
      m.row(j) = moment_fn(support[static_cast<std::size_t>(j)], eta).transpose();
    return m;
  }
};

enum class ELStatus { converged, infeasible, boundary };

struct ELSolution {
  Eigen::VectorXd q;
  Eigen::VectorXd multiplier;
  double objective = 0.0;
  ELStatus status = ELStatus::converged;
};

namespace detail {

// Interiority of 0 in the convex hull of the active moment atoms: 0 is
// interior iff min over unit directions g of max_j <g, m_j> is positive.
// The inner max is convex piecewise linear; multi-start subgradient descent
// over the sphere gives a reliable estimate at these small dimensions.
inline double hull_interiority_margin(const Eigen::MatrixXd& atoms,
                                      const std::vector<int>& active, std::uint64_t seed) {
  const int m_dim = static_cast<int>(atoms.cols());
  Rng rng(seed);
  auto support_fn = [&](const Eigen::VectorXd& g, int& arg) {
    double best = -std::numeric_limits<double>::infinity();
    for (int j : active) {
      double v = atoms.row(j).dot(g);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    return best;
  };
  double overall = std::numeric_limits<double>::infinity();
  for (int start = 0; start < 64; ++start) {
    Eigen::VectorXd g = rng.unit_sphere(m_dim);
    int arg = 0;
    double value = support_fn(g, arg);
    double step = 0.5;
    for (int it = 0; it < 200; ++it) {
      Eigen::VectorXd g_try = (g - step * atoms.row(arg).transpose()).eval();
      double norm = g_try.norm();
      if (norm < 1e-12) {
        step *= 0.5;
        continue;
      }
      g_try /= norm;
      int arg_try = 0;
      double v_try = support_fn(g_try, arg_try);
      if (v_try < value) {
        g = g_try;
        value = v_try;
        arg = arg_try;
      } else {
        step *= 0.7;
        if (step < 1e-10) break;
      }
    }
    overall = std::min(overall, value);
  }
  return overall;
}

}  // namespace detail

inline ELSolution profile_q(const MomentModel& model, const Eigen::VectorXd& eta,
                            const Eigen::VectorXd& weight_override = Eigen::VectorXd()) {
  if (!model.eta_in_domain(eta)) throw Infeasible("profile_q: eta outside Psi");
  const int m = model.support_size();
  const int n_mom = model.n_moments;
  Eigen::VectorXd w =
      (weight_override.size() > 0) ? (weight_override / weight_override.sum()).eval()
                                   : model.effective_weights();
  Eigen::MatrixXd atoms = model.moment_matrix(eta);

  std::vector<int> active;
  for (int j = 0; j < m; ++j)
    if (w(j) > 0.0) active.push_back(j);
  if (detail::hull_interiority_margin(atoms, active, 0x9e3779b9ULL) <= 1e-10)
    throw Infeasible("profile_q: 0 not in the interior of the moment hull");

  // Damped Newton on the convex dual  t -> -sum_j w_j log(1 + t'm_j).
  Eigen::VectorXd t = Eigen::VectorXd::Zero(n_mom);
  auto denominators = [&](const Eigen::VectorXd& tt) {
    return (Eigen::VectorXd::Ones(m) + atoms * tt).eval();
  };
  auto dual_value = [&](const Eigen::VectorXd& denom) {
    double v = 0.0;
    for (int j = 0; j < m; ++j)
      if (w(j) > 0.0) v -= w(j) * std::log(denom(j));
    return v;
  };
  bool newton_converged = false;
  Eigen::VectorXd denom = denominators(t);
  double value = dual_value(denom);
  int stalls = 0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_mom);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n_mom, n_mom);
    for (int j = 0; j < m; ++j) {
      if (w(j) <= 0.0) continue;
      Eigen::VectorXd mj = atoms.row(j).transpose();
      grad -= w(j) / denom(j) * mj;
      hess += w(j) / (denom(j) * denom(j)) * mj * mj.transpose();
    }
    if (grad.norm() <= 1e-10) {
      newton_converged = true;
      break;
    }
    Eigen::VectorXd dir = -hess.ldlt().solve(grad);
    if (!dir.allFinite()) dir = -grad;
    // Backtracking keeping every denominator positive.
    double step = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      Eigen::VectorXd t_try = t + step * dir;
      Eigen::VectorXd denom_try = denominators(t_try);
      if (denom_try.minCoeff() > 1e-12) {
        double v_try = dual_value(denom_try);
        if (v_try <= value + 1e-14) {
          t = t_try;
          denom = denom_try;
          value = v_try;
          moved = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!moved) {
      // Gradient fallback on stall.
      double gstep = 1e-2;
      bool gmoved = false;
      for (int gs = 0; gs < 50 && !gmoved; ++gs) {
        Eigen::VectorXd t_try = t - gstep * grad;
        Eigen::VectorXd denom_try = denominators(t_try);
        if (denom_try.minCoeff() > 1e-12 && dual_value(denom_try) < value) {
          t = t_try;
          denom = denom_try;
          value = dual_value(denom_try);
          gmoved = true;
        }
        gstep *= 0.5;
      }
      if (!gmoved && ++stalls > 3) break;
    }
    if (t.norm() > 1e8) throw Infeasible("profile_q: dual divergence");
  }
  if (!newton_converged) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_mom);
    for (int j = 0; j < m; ++j)
      if (w(j) > 0.0) grad -= w(j) / denom(j) * atoms.row(j).transpose();
    if (grad.norm() > 1e-10) throw Infeasible("profile_q: dual did not converge");
  }

  ELSolution sol;
  sol.multiplier = t;
  sol.q = Eigen::VectorXd(m);
  for (int j = 0; j < m; ++j) sol.q(j) = w(j) / denom(j);
  sol.q /= sol.q.sum();  // removes O(1e-12) rounding drift
  sol.objective = 0.0;
  for (int j = 0; j < m; ++j)
    if (w(j) > 0.0) sol.objective += w(j) * std::log(sol.q(j));
  if (sol.q.minCoeff() < 1e-12) {
    sol.status = ELStatus::boundary;
    throw BoundaryDegenerate("profile_q: a profile probability collapsed below 1e-12");
  }
  sol.status = ELStatus::converged;
  return sol;
}

// theta_j(eta) = log(q_j(eta)/q_0(eta)), j = 1..d.
inline Eigen::VectorXd theta_of_eta(const MomentModel& model, const Eigen::VectorXd& eta,
                                    const Eigen::VectorXd& weight_override = Eigen::VectorXd()) {
  ELSolution sol = profile_q(model, eta, weight_override);
  const int d = model.support_size() - 1;
  Eigen::VectorXd theta(d);
  for (int j = 1; j <= d; ++j) theta(j - 1) = std::log(sol.q(j) / sol.q(0));
  return theta;
}

struct SmoothnessReport {
  Eigen::MatrixXd jacobian_fd;  // d x d1
  double max_secant_deviation = 0.0;
};

inline SmoothnessReport el_smoothness_probe(const MomentModel& model,
                                            const Eigen::VectorXd& eta0, double radius,
                                            int samples, std::uint64_t seed = 7) {
  const int d = model.support_size() - 1;
  const int d1 = static_cast<int>(eta0.size());
  Eigen::VectorXd theta0 = theta_of_eta(model, eta0);
  SmoothnessReport rep;
  rep.jacobian_fd.resize(d, d1);
  for (int j = 0; j < d1; ++j) {
    double h = 1e-6 * (1.0 + std::abs(eta0(j)));
    Eigen::VectorXd ep = eta0, em = eta0;
    ep(j) += h;
    em(j) -= h;
    rep.jacobian_fd.col(j) = (theta_of_eta(model, ep) - theta_of_eta(model, em)) / (2.0 * h);
  }
  Rng rng(seed);
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd eta = eta0 + rng.ball(d1, radius);
    if (!model.eta_in_domain(eta)) continue;
    Eigen::VectorXd predicted = theta0 + rep.jacobian_fd * (eta - eta0);
    double dev = (theta_of_eta(model, eta) - predicted).norm();
    rep.max_secant_deviation = std::max(rep.max_secant_deviation, dev);
  }
  return rep;
}

// Builtin moment functions addressable by name from harness configs.
struct NamedMomentFn {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> fn;
  int n_moments = 0;
};

// "mean": m(x, eta) = x - eta.
// "variance": m(x, eta) = (x - param)^2 - eta, scalar support, param = known mean.
// "linear-iv": support atoms (z, y, w), m(x, eta) = z (y - w eta), scalar eta.
inline NamedMomentFn builtin_moment_fn(const std::string& name,
                                       const Eigen::VectorXd& params, int support_dim) {
  if (name == "mean") {
    return {[](const Eigen::VectorXd& x, const Eigen::VectorXd& eta) {
              return Eigen::VectorXd(x - eta);
            },
            support_dim};
  }
  if (name == "variance") {
    if (params.size() < 1)
      throw std::invalid_argument("variance moment needs the known mean as parameter");
    double mu = params(0);
    return {[mu](const Eigen::VectorXd& x, const Eigen::VectorXd& eta) {
              Eigen::VectorXd out(1);
              out(0) = (x(0) - mu) * (x(0) - mu) - eta(0);
              return out;
            },
            1};
  }
  if (name == "linear-iv") {
    return {[](const Eigen::VectorXd& x, const Eigen::VectorXd& eta) {
              Eigen::VectorXd out(1);
              out(0) = x(0) * (x(1) - x(2) * eta(0));
              return out;
            },
            1};
  }
  throw std::invalid_argument("unknown moment function: " + name);
}

}  // namespace bvm
