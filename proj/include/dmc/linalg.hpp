#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>

namespace dmc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LuInverse {
  MatrixXd inverse;
  double det = 0.0;
  double rcond = 0.0;  // reciprocal condition estimate in the infinity norm
  bool invertible = false;
};

//! LU factorization with partial pivoting; marks the matrix singular when the
//! reciprocal condition estimate falls below `rcond_floor`.
inline LuInverse lu_inverse(const MatrixXd& a, double rcond_floor = 1e-12) {
  LuInverse out;
  Eigen::PartialPivLU<MatrixXd> lu(a);
  out.det = lu.determinant();
  double norm_a = a.cwiseAbs().rowwise().sum().maxCoeff();
  if (out.det == 0.0 || !std::isfinite(out.det)) return out;
  MatrixXd inv = lu.inverse();
  double norm_inv = inv.cwiseAbs().rowwise().sum().maxCoeff();
  out.rcond = (norm_a > 0 && norm_inv > 0) ? 1.0 / (norm_a * norm_inv) : 0.0;
  if (!std::isfinite(out.rcond) || out.rcond < rcond_floor) return out;
  out.inverse = std::move(inv);
  out.invertible = true;
  return out;
}

//! Eigenvalues of a symmetric matrix (tridiagonalization + implicit QL/QR),
//! ascending order.
inline VectorXd symmetric_eigenvalues(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double min_eigenvalue(const MatrixXd& m) {
  return symmetric_eigenvalues(m)(0);
}

//! Operator (spectral) norm of a general square matrix, via the symmetric
//! eigensolver on m^T m.
inline double operator_norm(const MatrixXd& m) {
  VectorXd ev = symmetric_eigenvalues(m.transpose() * m);
  return std::sqrt(std::max(0.0, ev(ev.size() - 1)));
}

}  // namespace dmc
