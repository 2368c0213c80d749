#pragma once

#include <optional>
#include <span>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "gapfill/covariance.hpp"
#include "gapfill/dataset.hpp"

namespace gapfill {

enum class MeanModel {
  KnownZero,       // simple kriging
  UnknownConstant  // ordinary kriging
};

struct KrigingOptions {
  PredictionSpace space = PredictionSpace::Process;
  MeanModel mean = MeanModel::KnownZero;
  /// Measurement-error SD at each prediction point, used for the
  /// observation-space SE. When unset, the data's common SD is used for
  /// homoscedastic data and the root-mean-square SD otherwise. At a location
  /// that coincides with a datum the observation-space SE still adds the full
  /// error variance, i.e. it refers to a fresh, independent retrieval.
  std::optional<Eigen::VectorXd> pred_sigma_eps;
};

/// Factorized kriging system for one dataset and covariance. Immutable once
/// built; predict() may be called concurrently.
class KrigingSystem {
 public:
  KrigingSystem(Dataset data, CovarianceFunction cov, MeanModel mean = MeanModel::KnownZero);

  /// Kriging weight matrix (m x n); column j holds the weights for pts[j].
  Eigen::MatrixXd weights(std::span<const SpaceTimePoint> pts) const;

  PredictionResult predict(std::span<const SpaceTimePoint> pts, const KrigingOptions& opts = {}) const;

  /// Analytic conditional covariance var(Y* | Z) = C** - C*' (C + S)^-1 C*.
  Eigen::MatrixXd conditional_covariance(std::span<const SpaceTimePoint> pts) const;

  const Dataset& data() const { return data_; }
  const CovarianceFunction& cov() const { return cov_; }
  double default_pred_sigma_eps() const;

 private:
  Dataset data_;
  CovarianceFunction cov_;
  MeanModel mean_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;      // (C + S)^-1 (z - mu_eps - mean)
  Eigen::VectorXd ones_solve_;  // (C + S)^-1 1, ordinary kriging only
  double mean_hat_ = 0.0;
  double ones_quad_ = 0.0;
};

/// Exact simple kriging on all data.
PredictionResult simple_krige(const Dataset& data, const CovarianceFunction& cov,
                              std::span<const SpaceTimePoint> pred_points, const KrigingOptions& opts = {});

/// Spatial-only kriging within fixed temporal bins [origin + k w, origin + (k+1) w).
/// `spatial` must be an ExponentialSpatial covariance; time enters only through
/// the bin assignment. Prediction points in a bin without data get the prior
/// (pred 0, se_process sigma_Y) and are flagged in prior_only.
PredictionResult fixed_bin_krige(const Dataset& data, const CovarianceFunction& spatial, double bin_width,
                                 double bin_origin, std::span<const SpaceTimePoint> pred_points,
                                 const KrigingOptions& opts = {});

/// Kriging at (s; t) using only the data with time in the closed interval
/// [t - delta/2, t + delta/2]. Empty windows return the flagged prior.
PredictionResult moving_window_krige(const Dataset& data, const CovarianceFunction& cov, double delta,
                                     std::span<const SpaceTimePoint> pred_points,
                                     const KrigingOptions& opts = {});

}  // namespace gapfill
