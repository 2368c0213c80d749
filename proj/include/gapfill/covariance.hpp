#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gapfill/dataset.hpp"
#include "gapfill/geometry.hpp"

namespace gapfill {

enum class CovarianceKind {
  ExponentialSpatial,      // exp(-d / tau_s); time ignored
  SeparableExpSpaceTime,   // exp(-d / tau_s) * exp(-|dt| / tau_t)
  BinnedIndicatorTemporal  // exp(-d / tau_s) * 1[same temporal bin]
};

struct CovarianceFunction {
  CovarianceKind kind = CovarianceKind::ExponentialSpatial;
  double sigma2 = 1.0;  // process variance
  double tau_s = 1.0;   // spatial e-folding length (frame units; km on the sphere)
  double tau_t = 1.0;   // temporal e-folding length
  double bin_width = 1.0;
  double bin_origin = 0.0;

  void validate() const;

  static CovarianceFunction exponential(double sigma2, double tau_s);
  static CovarianceFunction separable(double sigma2, double tau_s, double tau_t);
  static CovarianceFunction binned(double sigma2, double tau_s, double bin_width, double bin_origin = 0.0);
};

double correlation(const CovarianceFunction& cov, const SpaceTimePoint& a, const SpaceTimePoint& b);

inline double covariance(const CovarianceFunction& cov, const SpaceTimePoint& a, const SpaceTimePoint& b) {
  return cov.sigma2 * correlation(cov, a, b);
}

Eigen::MatrixXd covariance_matrix(const CovarianceFunction& cov, std::span<const SpaceTimePoint> a,
                                  std::span<const SpaceTimePoint> b);
Eigen::MatrixXd covariance_matrix(const CovarianceFunction& cov, std::span<const SpaceTimePoint> a);

struct FieldSample {
  std::vector<SpaceTimePoint> points;
  Eigen::VectorXd values;
  std::uint64_t seed = 0;
};

/// Mean-zero Gaussian draw at `points` via a Cholesky factor of the covariance.
FieldSample simulate_unconditional(const CovarianceFunction& cov, std::span<const SpaceTimePoint> points,
                                   std::uint64_t seed);

/// Several unconditional draws sharing one factorization. Draw k uses seed
/// derived deterministically from `seed`.
std::vector<FieldSample> simulate_unconditional_many(const CovarianceFunction& cov,
                                                     std::span<const SpaceTimePoint> points, int n_sims,
                                                     std::uint64_t seed);

/// Conditional simulation of Y at `pred_points` given `data`, by conditioning
/// unconditional draws through the simple-kriging weights.
std::vector<FieldSample> simulate_conditional(const CovarianceFunction& cov, const Dataset& data,
                                              std::span<const SpaceTimePoint> pred_points, int n_sims,
                                              std::uint64_t seed);

}  // namespace gapfill
