#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "asentinel/errors.hpp"

namespace asentinel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Symmetric with eigenvalues >= -eig_tol * |trace|.
inline bool is_psd(const Matrix& m, double sym_tol = 1e-12, double eig_tol = 1e-10) {
  if (!is_symmetric(m, sym_tol)) return false;
  if (m.size() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const double floor = -eig_tol * std::max(std::abs(m.trace()), 1e-300);
  return es.eigenvalues().minCoeff() >= floor;
}

inline bool is_pd(const Matrix& m, double sym_tol = 1e-12) {
  if (!is_symmetric(m, sym_tol)) return false;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  return llt.info() == Eigen::Success;
}

/// Square root L (L Lᵀ = m) from the symmetric eigendecomposition. Eigenvalues
/// below clamp_tol * trace are clamped to zero; anything more negative throws.
inline Matrix psd_sqrt(const Matrix& m, double clamp_tol = 1e-10) {
  if (m.size() == 0) return m;
  if (!is_symmetric(m, 1e-10)) throw FactorizationError("covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  if (es.info() != Eigen::Success) throw FactorizationError("eigendecomposition failed");
  const double tr = std::abs(m.trace());
  Vector ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -clamp_tol * std::max(tr, 1e-300)) {
      throw FactorizationError("covariance has a negative eigenvalue " + std::to_string(ev(i)));
    }
    ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal();
}

/// log det of a symmetric positive definite matrix via Cholesky.
inline double logdet_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw FactorizationError("matrix is not positive definite");
  const Matrix& l = llt.matrixL();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

/// Inverse of a symmetric positive definite matrix.
inline Matrix inverse_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw FactorizationError("matrix is not positive definite");
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

inline Matrix matrix_power(const Matrix& a, int k) {
  Matrix out = Matrix::Identity(a.rows(), a.cols());
  for (int i = 0; i < k; ++i) out = a * out;
  return out;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace linalg
}  // namespace asentinel
