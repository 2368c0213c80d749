#include "gapfill/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "gapfill/errors.hpp"

namespace gapfill {

JitteredCholesky factorize_with_jitter(const Eigen::MatrixXd& a, double scale) {
  JitteredCholesky out;
  out.llt.compute(a);
  if (out.llt.info() == Eigen::Success) return out;
  for (double j = 1e-10; j <= 1e-6 * (1.0 + 1e-12); j *= 10.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += j * scale;
    out.llt.compute(b);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = j * scale;
      return out;
    }
  }
  throw ConditioningError("covariance factorization failed after maximum jitter");
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a, double tol) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw ConditioningError("eigendecomposition failed");
  const double trace = std::abs(a.trace());
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < 0.0) {
      if (ev[i] < -tol * trace) {
        throw ConditioningError("matrix is not positive semi-definite (eigenvalue " +
                                std::to_string(ev[i]) + ")");
      }
      ev[i] = 0.0;
    }
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace gapfill
