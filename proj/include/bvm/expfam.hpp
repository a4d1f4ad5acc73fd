#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bvm/matrix.hpp"
#include "bvm/rng.hpp"

// Exponential families f(x;theta) = exp(<x,theta> - psi(theta)) with concrete
// instances: multinomial on a finite support, Gaussian location, and the
// multivariate linear model with fixed design.

namespace bvm {

struct OutOfDomain : std::runtime_error {
  explicit OutOfDomain(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidSimplex : std::runtime_error {
  explicit InvalidSimplex(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidSpec : std::runtime_error {
  explicit InvalidSpec(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct ExpFamilyModel {
  int dim = 0;  // dimension of theta
  std::function<double(const Eigen::VectorXd&)> log_partition;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
  std::function<SymmetricMatrix(const Eigen::VectorXd&)> hessian;
  std::function<bool(const Eigen::VectorXd&)> domain_check;
  // n independent rows of the sufficient statistic, deterministic in the seed.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, int, std::uint64_t)> sampler;
  Eigen::VectorXd theta0;
  // Finite-support models list their sufficient-statistic atoms here; atom
  // probabilities are exp(<x_j,theta> - psi(theta)). Empty means continuous.
  std::vector<Eigen::VectorXd> support;

  bool finite_support() const { return !support.empty(); }

  Eigen::VectorXd atom_probs(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd p(support.size());
    double psi = log_partition(theta);
    for (std::size_t j = 0; j < support.size(); ++j)
      p(static_cast<int>(j)) = std::exp(support[j].dot(theta) - psi);
    return p;
  }
};

inline double log_density(const ExpFamilyModel& model, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& theta) {
  if (!model.domain_check(theta)) throw OutOfDomain("log_density: theta outside domain");
  return x.dot(theta) - model.log_partition(theta);
}

inline Eigen::MatrixXd sample_sufficient(const ExpFamilyModel& model,
                                         const Eigen::VectorXd& theta, int n,
                                         std::uint64_t seed) {
  if (!model.domain_check(theta)) throw OutOfDomain("sample_sufficient: theta outside domain");
  if (n < 1) throw std::invalid_argument("sample_sufficient: n >= 1 required");
  return model.sampler(theta, n, seed);
}

// ---------------------------------------------------------------------------
// Multinomial (finite support of d+1 categories, category 0 as reference)

struct MultinomialSpec {
  Eigen::VectorXd probs;  // p_0 .. p_d on the simplex

  int dim() const { return static_cast<int>(probs.size()) - 1; }

  void validate() const {
    if (probs.size() < 2) throw InvalidSimplex("multinomial needs at least 2 categories");
    if ((probs.array() <= 0.0).any())
      throw InvalidSimplex("all category probabilities must be strictly positive");
    if (std::abs(probs.sum() - 1.0) > 1e-12)
      throw InvalidSimplex("probabilities must sum to 1 within 1e-12");
  }

  // max_i 1/p_i; the analysis assumes this stays O(d).
  double balance() const { return 1.0 / probs.minCoeff(); }
};

namespace detail {

// Stable psi(theta) = log(1 + sum_j exp(theta_j)).
inline double multinomial_psi(const Eigen::VectorXd& theta) {
  double m = std::max(0.0, theta.maxCoeff());
  double s = std::exp(-m);
  for (int j = 0; j < theta.size(); ++j) s += std::exp(theta(j) - m);
  return m + std::log(s);
}

inline Eigen::VectorXd multinomial_cell_probs(const Eigen::VectorXd& theta) {
  // (p_0, p_1, .., p_d) from the natural parameter.
  double m = std::max(0.0, theta.maxCoeff());
  Eigen::VectorXd w(theta.size() + 1);
  w(0) = std::exp(-m);
  for (int j = 0; j < theta.size(); ++j) w(j + 1) = std::exp(theta(j) - m);
  return w / w.sum();
}

}  // namespace detail

inline ExpFamilyModel build_multinomial(const MultinomialSpec& spec) {
  spec.validate();
  const int d = spec.dim();

  ExpFamilyModel model;
  model.dim = d;
  model.log_partition = [](const Eigen::VectorXd& theta) {
    return detail::multinomial_psi(theta);
  };
  model.grad = [](const Eigen::VectorXd& theta) {
    Eigen::VectorXd p = detail::multinomial_cell_probs(theta);
    return Eigen::VectorXd(p.tail(p.size() - 1));
  };
  model.hessian = [](const Eigen::VectorXd& theta) {
    Eigen::VectorXd full = detail::multinomial_cell_probs(theta);
    Eigen::VectorXd p = full.tail(full.size() - 1);
    Eigen::MatrixXd f = Eigen::MatrixXd(p.asDiagonal());
    f.noalias() -= p * p.transpose();
    return SymmetricMatrix(f);
  };
  model.domain_check = [](const Eigen::VectorXd& theta) { return theta.allFinite(); };
  model.theta0 = Eigen::VectorXd(d);
  for (int i = 0; i < d; ++i) model.theta0(i) = std::log(spec.probs(i + 1) / spec.probs(0));

  // One-hot atoms over categories 1..d; category 0 is the zero vector.
  model.support.reserve(d + 1);
  model.support.push_back(Eigen::VectorXd::Zero(d));
  for (int i = 0; i < d; ++i) {
    Eigen::VectorXd atom = Eigen::VectorXd::Zero(d);
    atom(i) = 1.0;
    model.support.push_back(atom);
  }

  model.sampler = [d](const Eigen::VectorXd& theta, int n, std::uint64_t seed) {
    Eigen::VectorXd cells = detail::multinomial_cell_probs(theta);
    Rng rng(seed);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, d);
    for (int i = 0; i < n; ++i) {
      int cat = rng.categorical(cells);
      if (cat > 0) out(i, cat - 1) = 1.0;
    }
    return out;
  };
  return model;
}

struct MultinomialClosedForms {
  SymmetricMatrix F;
  SymmetricMatrix F_inv;
  SymmetricMatrix J;      // symmetric square root, J J = F
  SymmetricMatrix J_inv;  // symmetric inverse root
  // Rank-one-update factors. These satisfy J_factor J_factor' = F (and the
  // companion display inverts the transpose); the symmetric root above is
  // what downstream whitening uses.
  Eigen::MatrixXd J_factor;
  Eigen::MatrixXd J_factor_inv;
};

// Closed forms from the rank-one update algebra:
//   F        = P - p p'
//   F^{-1}   = P^{-1} + e e' / p_0          (1 - p'P^{-1}p = p_0)
//   J_factor = P^{1/2} - p p' P^{-1/2} / (1 + sqrt(p_0))
//   J_factor^{-T} = P^{-1/2} + P^{-1} p p' P^{-1/2} / (p_0 + sqrt(p_0))
inline MultinomialClosedForms multinomial_closed_forms(const MultinomialSpec& spec) {
  spec.validate();
  const int d = spec.dim();
  const double p0 = spec.probs(0);
  Eigen::VectorXd p = spec.probs.tail(d);

  Eigen::MatrixXd fm = Eigen::MatrixXd(p.asDiagonal());
  fm.noalias() -= p * p.transpose();
  SymmetricMatrix f(fm);

  SymmetricMatrix f_inv = diag_minus_rank_one_inverse(p, p);

  Eigen::VectorXd sqrt_p = p.cwiseSqrt();
  double root_p0 = std::sqrt(p0);
  Eigen::MatrixXd j_factor = Eigen::MatrixXd(sqrt_p.asDiagonal());
  j_factor.noalias() -= (p * sqrt_p.transpose()) / (1.0 + root_p0);

  // P^{-1} p is the all-ones vector, so the update is ones * sqrt(p)'.
  Eigen::MatrixXd j_factor_inv = Eigen::MatrixXd(sqrt_p.cwiseInverse().asDiagonal());
  j_factor_inv.noalias() += (Eigen::VectorXd::Ones(d) * sqrt_p.transpose()) / (p0 + root_p0);

  // Symmetric root and its inverse from one eigendecomposition of F.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.mat());
  Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd jm = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
  Eigen::MatrixXd jim =
      es.eigenvectors() * roots.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  SymmetricMatrix j(0.5 * (jm + jm.transpose()));
  SymmetricMatrix j_inv(0.5 * (jim + jim.transpose()));

  auto check = [&](const Eigen::MatrixXd& lhs, const Eigen::MatrixXd& rhs, const char* label) {
    if (operator_norm(lhs - rhs) > 1e-9)
      throw std::logic_error(std::string("multinomial_closed_forms: identity failed: ") + label);
  };
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  check(f.mat() * f_inv.mat(), eye, "F F^{-1} = I");
  check(j.mat() * j.mat(), f.mat(), "J J = F");
  check(j.mat() * j_inv.mat(), eye, "J J^{-1} = I");
  check(j_factor * j_factor.transpose(), f.mat(), "J_factor J_factor' = F");
  check(j_factor.transpose() * j_factor_inv, eye, "J_factor' J_factor^{-T} = I");
  return {f, f_inv, j, j_inv, j_factor, j_factor_inv};
}

// ---------------------------------------------------------------------------
// Gaussian location family: x ~ N(theta, I_d), psi(theta) = ||theta||^2 / 2.

inline ExpFamilyModel build_gaussian_location(const Eigen::VectorXd& theta0) {
  const int d = static_cast<int>(theta0.size());
  ExpFamilyModel model;
  model.dim = d;
  model.log_partition = [](const Eigen::VectorXd& t) { return 0.5 * t.squaredNorm(); };
  model.grad = [](const Eigen::VectorXd& t) { return t; };
  model.hessian = [d](const Eigen::VectorXd&) {
    return SymmetricMatrix(Eigen::MatrixXd::Identity(d, d));
  };
  model.domain_check = [](const Eigen::VectorXd& t) { return t.allFinite(); };
  model.theta0 = theta0;
  model.sampler = [d](const Eigen::VectorXd& t, int n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd out(n, d);
    for (int i = 0; i < n; ++i) out.row(i) = (t + rng.normal_vector(d)).transpose();
    return out;
  };
  return model;
}

// ---------------------------------------------------------------------------
// Multivariate linear model y_i = Pi' z_i + u_i, u_i ~ N(0, Sigma), fixed
// design Z. Natural parameter theta = (-Sigma^{-1}/2, Pi Sigma^{-1}) with the
// trace inner product; sufficient statistic row i is (y y', z y').
//
// The symmetric block is stored half-vectorized (upper triangle, off-diagonal
// sufficient coordinates doubled) so that the family is minimal and the
// Fisher information stays positive definite. The nominal dimension quoted in
// growth conditions, d_r^2 + d_c d_r, counts the duplicated entries instead.

struct MvLinearSpec {
  int d_r = 0;
  int d_c = 0;
  Eigen::MatrixXd Pi;     // d_c x d_r
  Eigen::MatrixXd Sigma;  // d_r x d_r, positive definite
  Eigen::MatrixXd Z;      // n x d_c design

  int nominal_dim() const { return d_r * d_r + d_c * d_r; }
  int coord_dim() const { return d_r * (d_r + 1) / 2 + d_c * d_r; }

  void validate() const {
    if (d_r < 1 || d_c < 1) throw InvalidSpec("mv-linear: d_r, d_c >= 1 required");
    if (Pi.rows() != d_c || Pi.cols() != d_r) throw InvalidSpec("mv-linear: Pi shape");
    if (Sigma.rows() != d_r || Sigma.cols() != d_r) throw InvalidSpec("mv-linear: Sigma shape");
    if (Z.cols() != d_c || Z.rows() < d_c) throw InvalidSpec("mv-linear: design shape");
    auto [smin, smax] = eig_extremes(SymmetricMatrix(0.5 * (Sigma + Sigma.transpose())));
    (void)smax;
    if (smin <= 0.0) throw InvalidSpec("mv-linear: Sigma not positive definite");
    Eigen::MatrixXd a = Z.transpose() * Z / static_cast<double>(Z.rows());
    auto [amin, amax] = eig_extremes(SymmetricMatrix(0.5 * (a + a.transpose())));
    (void)amax;
    if (amin <= 1e-8) throw InvalidSpec("mv-linear: Z'Z/n nearly singular");
  }

  double max_design_row_norm() const { return Z.rowwise().norm().maxCoeff(); }
};

namespace detail {

// vech packing for the symmetric theta_1 block (upper triangle, row by row).
inline void vech_indices(int d_r, std::vector<std::pair<int, int>>& idx) {
  idx.clear();
  for (int i = 0; i < d_r; ++i)
    for (int j = i; j < d_r; ++j) idx.emplace_back(i, j);
}

inline Eigen::MatrixXd unvech(const Eigen::VectorXd& v, int d_r) {
  Eigen::MatrixXd m(d_r, d_r);
  int k = 0;
  for (int i = 0; i < d_r; ++i)
    for (int j = i; j < d_r; ++j) {
      m(i, j) = v(k);
      m(j, i) = v(k);
      ++k;
    }
  return m;
}

inline Eigen::VectorXd vech(const Eigen::MatrixXd& m) {
  const int d_r = static_cast<int>(m.rows());
  Eigen::VectorXd v(d_r * (d_r + 1) / 2);
  int k = 0;
  for (int i = 0; i < d_r; ++i)
    for (int j = i; j < d_r; ++j) v(k++) = m(i, j);
  return v;
}

struct MvLinearCoords {
  int d_r, d_c;

  int dim() const { return d_r * (d_r + 1) / 2 + d_c * d_r; }

  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> split(const Eigen::VectorXd& theta) const {
    const int s = d_r * (d_r + 1) / 2;
    Eigen::MatrixXd t1 = unvech(theta.head(s), d_r);
    Eigen::MatrixXd t2 = Eigen::Map<const Eigen::MatrixXd>(theta.data() + s, d_c, d_r);
    return {t1, t2};
  }

  Eigen::VectorXd join(const Eigen::MatrixXd& t1, const Eigen::MatrixXd& t2) const {
    const int s = d_r * (d_r + 1) / 2;
    Eigen::VectorXd theta(dim());
    theta.head(s) = vech(t1);
    Eigen::Map<Eigen::MatrixXd>(theta.data() + s, d_c, d_r) = t2;
    return theta;
  }

  // Sufficient-statistic packing: duplicated off-diagonals fold into a single
  // coordinate with weight 2, so <x, theta> = tr(X1 t1) + tr(X2' t2).
  Eigen::VectorXd pack_stat(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) const {
    const int s = d_r * (d_r + 1) / 2;
    Eigen::VectorXd x(dim());
    int k = 0;
    for (int i = 0; i < d_r; ++i)
      for (int j = i; j < d_r; ++j) x(k++) = (i == j) ? x1(i, i) : 2.0 * x1(i, j);
    Eigen::Map<Eigen::MatrixXd>(x.data() + s, d_c, d_r) = x2;
    return x;
  }
};

}  // namespace detail

inline ExpFamilyModel build_mv_linear(const MvLinearSpec& spec) {
  spec.validate();
  const int d_r = spec.d_r, d_c = spec.d_c;
  const detail::MvLinearCoords coords{d_r, d_c};
  const Eigen::MatrixXd z = spec.Z;
  const Eigen::MatrixXd a = z.transpose() * z / static_cast<double>(z.rows());

  auto negdef = [d_r](const Eigen::MatrixXd& t1) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t1, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(d_r - 1) < 0.0;
  };

  ExpFamilyModel model;
  model.dim = coords.dim();
  model.domain_check = [coords, negdef](const Eigen::VectorXd& theta) {
    if (!theta.allFinite()) return false;
    auto [t1, t2] = coords.split(theta);
    (void)t2;
    return negdef(t1);
  };
  model.log_partition = [coords, a](const Eigen::VectorXd& theta) {
    auto [t1, t2] = coords.split(theta);
    Eigen::LLT<Eigen::MatrixXd> llt(-2.0 * t1);
    if (llt.info() != Eigen::Success)
      throw OutOfDomain("mv-linear psi: theta_1 not negative definite");
    // t1^{-1} = -2 (-2 t1)^{-1}.
    Eigen::MatrixXd t1_inv = -2.0 * llt.solve(Eigen::MatrixXd::Identity(t1.rows(), t1.rows()));
    double quad = -0.25 * (t2.transpose() * a * t2 * t1_inv).trace();
    double logdet = 0.0;
    for (int i = 0; i < t1.rows(); ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    return quad - 0.5 * logdet;
  };
  model.grad = [coords, a](const Eigen::VectorXd& theta) {
    auto [t1, t2] = coords.split(theta);
    Eigen::MatrixXd t1_inv = t1.inverse();
    Eigen::MatrixXd s = t2.transpose() * a * t2;
    Eigen::MatrixXd g1 = 0.25 * t1_inv * s * t1_inv - 0.5 * t1_inv;
    g1 = 0.5 * (g1 + g1.transpose());
    Eigen::MatrixXd g2 = -0.5 * a * t2 * t1_inv;
    // Mean of the packed statistic: off-diagonal vech slots carry 2 g1_ij.
    const int d_r_ = static_cast<int>(t1.rows());
    Eigen::VectorXd mu(coords.dim());
    int k = 0;
    for (int i = 0; i < d_r_; ++i)
      for (int j = i; j < d_r_; ++j) mu(k++) = (i == j) ? g1(i, i) : 2.0 * g1(i, j);
    Eigen::Map<Eigen::MatrixXd>(mu.data() + k, t2.rows(), t2.cols()) = g2;
    return mu;
  };
  model.hessian = [grad = model.grad, dim = model.dim](const Eigen::VectorXd& theta) {
    // Central differences of the analytic gradient.
    Eigen::MatrixXd h(dim, dim);
    for (int j = 0; j < dim; ++j) {
      double step = 1e-5 * (1.0 + std::abs(theta(j)));
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += step;
      tm(j) -= step;
      h.col(j) = (grad(tp) - grad(tm)) / (2.0 * step);
    }
    return SymmetricMatrix(0.5 * (h + h.transpose()), 1e-5);
  };

  Eigen::MatrixXd sigma_inv = spec.Sigma.inverse();
  model.theta0 = coords.join(-0.5 * sigma_inv, spec.Pi * sigma_inv);

  model.sampler = [coords, z](const Eigen::VectorXd& theta, int n, std::uint64_t seed) {
    auto [t1, t2] = coords.split(theta);
    Eigen::MatrixXd sigma = (-2.0 * t1).inverse();
    Eigen::MatrixXd pi = t2 * sigma;
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    Eigen::MatrixXd chol = llt.matrixL();
    Rng rng(seed);
    const int d_r_ = static_cast<int>(t1.rows());
    const int rows = static_cast<int>(z.rows());
    Eigen::MatrixXd out(n, coords.dim());
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd zi = z.row(i % rows).transpose();
      Eigen::VectorXd y = pi.transpose() * zi + chol * rng.normal_vector(d_r_);
      out.row(i) = coords.pack_stat(y * y.transpose(), zi * y.transpose()).transpose();
    }
    return out;
  };
  return model;
}

}  // namespace bvm
