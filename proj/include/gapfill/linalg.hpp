#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace gapfill {

/// Lower Cholesky factor of a symmetric matrix together with the diagonal
/// jitter that had to be added to obtain it.
struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

/// Factorize `a`; on failure add scale * 1e-10 to the diagonal, escalating by
/// 10x up to scale * 1e-6, then throw ConditioningError.
JitteredCholesky factorize_with_jitter(const Eigen::MatrixXd& a, double scale);

/// Square-root factor F with F F' = a for a symmetric PSD matrix. Tries a
/// Cholesky factorization first and falls back to an eigendecomposition in
/// which negative eigenvalues down to -tol * trace(a) are clipped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, double tol = 1e-10);

/// log|A| from a Cholesky factorization.
double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt);

}  // namespace gapfill
