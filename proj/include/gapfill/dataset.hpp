#pragma once

#include <vector>

#include <Eigen/Core>

#include "gapfill/geometry.hpp"

namespace gapfill {

/// Point retrievals Z = Y + eps with known per-point error SD and optional bias.
struct Dataset {
  std::vector<SpaceTimePoint> points;
  Eigen::VectorXd z;
  Eigen::VectorXd sigma_eps;
  Eigen::VectorXd mu_eps;  // empty means zero bias

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void validate() const;

  /// Homoscedastic dataset with constant error SD.
  static Dataset make(std::vector<SpaceTimePoint> pts, Eigen::VectorXd z, double sigma_eps);

  /// Copy of the rows named in `idx`.
  Dataset subset(const std::vector<std::size_t>& idx) const;
};

enum class PredictionSpace { Process, Observation };

/// Co-registered prediction and standard errors. `se()` returns the SE of the
/// requested space; both are always populated.
struct PredictionResult {
  std::vector<SpaceTimePoint> points;
  Eigen::VectorXd pred;
  Eigen::VectorXd se_process;
  Eigen::VectorXd se_observation;
  PredictionSpace space = PredictionSpace::Process;
  /// 1 where no data were available and the prior was returned.
  std::vector<unsigned char> prior_only;

  const Eigen::VectorXd& se() const {
    return space == PredictionSpace::Process ? se_process : se_observation;
  }
  std::size_t size() const { return points.size(); }
};

}  // namespace gapfill
