#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "gapfill/basis.hpp"
#include "gapfill/covariance.hpp"
#include "gapfill/dataset.hpp"

namespace gapfill {

/// Per-resolution parameters of the structured K and the fine-scale variance.
/// theta3 is ignored for a basis without a temporal component.
struct FRKParams {
  std::vector<double> theta1;  // marginal variance
  std::vector<double> theta2;  // spatial e-folding length
  std::vector<double> theta3;  // temporal e-folding length
  double sigma2_zeta = 1.0;

  void validate(int n_res) const;
  /// Starting values: theta1 = var(z)/n_res, theta2 = diameter/5,
  /// theta3 = window/2, sigma2_zeta = 0.1 var(z).
  static FRKParams defaults(const BasisSet& basis, double var_z);
};

/// Block-diagonal matrix, one block per resolution.
struct BlockDiagonal {
  std::vector<Eigen::MatrixXd> blocks;

  Eigen::Index size() const;
  Eigen::MatrixXd dense() const;
};

/// K(theta) = bdiag(K_q) with K_q(i,j) = theta1 exp(-ds/theta2 - dt/theta3)
/// over centroid distances at resolution q.
BlockDiagonal structured_K(const FRKParams& params, const BasisSet& basis);

enum class KMode { FreeBlocks, Structured };

struct EmOptions {
  KMode mode = KMode::FreeBlocks;
  double tol = 1e-6;  // relative change of the marginal log-likelihood
  int max_iter = 200;
  std::optional<FRKParams> init;  // warm start; defaults() when unset
};

/// FRK model with its posterior given a dataset.
struct FittedFRK {
  FittedFRK(BasisSet b, BlockDiagonal k, double s2z) : basis(std::move(b)), K(std::move(k)), sigma2_zeta(s2z) {}

  BasisSet basis;
  BlockDiagonal K;
  double sigma2_zeta = 0.0;
  std::optional<FRKParams> params;  // set in Structured mode

  Eigen::VectorXd post_mean;  // E(eta | Z)
  Eigen::MatrixXd post_cov;   // var(eta | Z)

  // Fine-scale posterior at the data points: E(zeta_i | Z) = w_i (z_i - phi_i' mu),
  // with w_i = sigma2_zeta / (sigma2_zeta + sigma2_eps_i).
  std::vector<SpaceTimePoint> data_points;
  Eigen::VectorXd data_sigma_eps;
  Eigen::VectorXd data_resid;  // z_i - mu_eps_i - phi_i' E(eta | Z)

  std::vector<double> loglik;  // one entry per E-step
  int iterations = 0;
  bool converged = false;
};

/// Posterior of eta (and of zeta at the data) under fixed K and sigma2_zeta.
/// An empty dataset returns the prior.
FittedFRK frk_condition(const BasisSet& basis, BlockDiagonal K, double sigma2_zeta, const Dataset& data);

/// Marginal log-likelihood of the data under (K, sigma2_zeta).
double frk_loglik(const BasisSet& basis, const BlockDiagonal& K, double sigma2_zeta, const Dataset& data);

/// EM estimation of K and sigma2_zeta for Z = Phi eta + zeta + eps.
FittedFRK fit_em(const Dataset& data, const BasisSet& basis, const EmOptions& opts = {});

struct FrkPredictOptions {
  PredictionSpace space = PredictionSpace::Process;
  std::optional<Eigen::VectorXd> pred_sigma_eps;
};

PredictionResult frk_predict(const FittedFRK& fitted, std::span<const SpaceTimePoint> pts,
                             const FrkPredictOptions& opts = {});

/// Draws of Y = Phi eta + zeta given Z.
std::vector<FieldSample> frk_conditional_sim(const FittedFRK& fitted, std::span<const SpaceTimePoint> pts,
                                             int n_sims, std::uint64_t seed);

/// phi(a)' K phi(b) + sigma2_zeta 1[a == b].
double frk_implied_covariance(const FittedFRK& fitted, const SpaceTimePoint& a, const SpaceTimePoint& b);

/// Implied covariance at each lag along axis 1 (planar) or due east (sphere,
/// lags in km), averaged over the given origins.
std::vector<double> implied_covariance_curve(const FittedFRK& fitted, std::span<const SpaceTimePoint> origins,
                                             std::span<const double> lags);

/// Data-dependent basis phi(s)' = c(s)' (C + sigma2_eps I)^-1 with K = C + sigma2_eps I.
/// Taking eta | Z ~ Gau(Z, K), phi(s)' E(eta | Z) is the simple-kriging
/// predictor. Note the variance phi' K phi is the variance of the optimal
/// predictor, not the conditional variance of Y.
class ExactRecoveryBasis {
 public:
  ExactRecoveryBasis(std::vector<SpaceTimePoint> locations, CovarianceFunction cov, double sigma2_eps);

  std::size_t size() const { return locations_.size(); }
  /// n x m matrix whose rows are phi(pts[j])'.
  Eigen::MatrixXd evaluate(std::span<const SpaceTimePoint> pts) const;
  const Eigen::MatrixXd& K() const { return K_; }

  /// pred = phi' z and se_process^2 = phi' K phi.
  PredictionResult predict(const Eigen::VectorXd& z, std::span<const SpaceTimePoint> pts) const;

 private:
  std::vector<SpaceTimePoint> locations_;
  CovarianceFunction cov_;
  Eigen::MatrixXd K_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

ExactRecoveryBasis exact_recovery_basis(std::vector<SpaceTimePoint> locations, const CovarianceFunction& cov,
                                        double sigma2_eps);

}  // namespace gapfill
