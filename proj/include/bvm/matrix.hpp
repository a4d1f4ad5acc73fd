#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

// Dense symmetric-matrix primitives: symmetric square roots, rank-one inverse
// updates, operator norms and eigenvalue extremes. Everything is dense; the
// target dimensions are a few hundred at most.

namespace bvm {

struct NotPositiveSemidefinite : std::runtime_error {
  explicit NotPositiveSemidefinite(const std::string& what) : std::runtime_error(what) {}
};

struct SingularUpdate : std::runtime_error {
  explicit SingularUpdate(const std::string& what) : std::runtime_error(what) {}
};

// Dense symmetric matrix; symmetry is enforced on construction.
class SymmetricMatrix {
 public:
  explicit SymmetricMatrix(const Eigen::MatrixXd& m, double tol = 1e-12) : m_(m) {
    if (m.rows() != m.cols() || m.rows() < 1)
      throw std::invalid_argument("SymmetricMatrix: square matrix of order >= 1 required");
    double scale = 1.0 + m.cwiseAbs().maxCoeff();
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale)
      throw std::invalid_argument("SymmetricMatrix: input is not symmetric");
    m_ = 0.5 * (m + m.transpose());  // exact symmetry
  }

  int order() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Eigen::MatrixXd m_;
};

inline double operator_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

inline std::pair<double, double> eig_extremes(const SymmetricMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.mat(), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return {ev(0), ev(ev.size() - 1)};
}

// Symmetric PSD square root via full eigendecomposition. Eigenvalues within
// -tol*||F|| of zero are clamped; anything more negative is an error.
inline SymmetricMatrix sym_sqrt(const SymmetricMatrix& f, double tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.mat());
  Eigen::VectorXd ev = es.eigenvalues();
  double norm = std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
  if (ev(0) < -tol * norm)
    throw NotPositiveSemidefinite("sym_sqrt: min eigenvalue " + std::to_string(ev(0)));
  Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd j = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return SymmetricMatrix(0.5 * (j + j.transpose()));
}

// (diag(D) - p p')^{-1} by Sherman-Morrison:
//   D^{-1} + D^{-1} p p' D^{-1} / (1 - p' D^{-1} p).
inline SymmetricMatrix diag_minus_rank_one_inverse(const Eigen::VectorXd& d,
                                                   const Eigen::VectorXd& p) {
  if (d.size() != p.size() || d.size() < 1)
    throw std::invalid_argument("diag_minus_rank_one_inverse: size mismatch");
  if ((d.array() <= 0.0).any())
    throw std::invalid_argument("diag_minus_rank_one_inverse: D must be strictly positive");
  Eigen::VectorXd dinv_p = p.cwiseQuotient(d);
  double denom = 1.0 - p.dot(dinv_p);
  if (denom <= 1e-14)
    throw SingularUpdate("diag_minus_rank_one_inverse: 1 - p'D^{-1}p = " + std::to_string(denom));
  Eigen::MatrixXd out = Eigen::MatrixXd(d.cwiseInverse().asDiagonal());
  out.noalias() += (dinv_p * dinv_p.transpose()) / denom;
  return SymmetricMatrix(out);
}

}  // namespace bvm
