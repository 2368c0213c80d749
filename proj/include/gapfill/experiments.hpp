#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gapfill/basis.hpp"
#include "gapfill/covariance.hpp"
#include "gapfill/dataset.hpp"
#include "gapfill/frk.hpp"

namespace gapfill {

/// Unit-square simulation design shared by the worked examples. Every point
/// is stored as loc = (s1, s2), t = s2, so s2 can act as time.
struct ExperimentDesign {
  double tau = 0.15;
  double sigma2_y = 1.0;
  double sigma2_eps = 1.0;
  int m = 1000;          // retrievals
  int n_diag = 200;      // diagnostic locations
  int transect_rows = 0;  // optional fine transects along s1
  int transect_len = 0;
  double transect_h = 0.01;
};

struct Experiment {
  ExperimentDesign design;
  CovarianceFunction cov;
  std::vector<SpaceTimePoint> data_points;
  Eigen::VectorXd y_data;  // truth at the data locations
  Eigen::VectorXd noise;   // standard-normal retrieval errors
  std::vector<SpaceTimePoint> diag;
  Eigen::VectorXd y_diag;
  Eigen::VectorXd z_diag;  // left-out retrievals at the diagnostic locations
  std::vector<SpaceTimePoint> transect;  // rows of transect_len points, s1 fastest
  Eigen::VectorXd y_transect;

  /// Retrievals y_data + sqrt(sigma2_eps) * noise; the design variance by default.
  Dataset retrievals(std::optional<double> sigma2_eps = {}) const;
};

/// Draws locations and a joint realization of the truth at data, diagnostic
/// and transect points.
Experiment simulate_experiment(const ExperimentDesign& design, std::uint64_t seed);

/// RMSPE and the four 90% coverages of the process/observation comparison.
struct SpaceCoverage {
  double rmspe = 0.0;
  double process_vs_truth = 0.0;
  double process_vs_left_out = 0.0;
  double observation_vs_truth = 0.0;
  double observation_vs_left_out = 0.0;
};

SpaceCoverage score_spaces(const PredictionResult& res, const Experiment& exp, double level = 0.90);

/// Simple kriging with the true covariance.
SpaceCoverage run_example1(const Experiment& exp, double level = 0.90);

/// Three-resolution planar bisquare basis: 3x3, 9x9 and 27x27 centres.
BasisSet example3_basis();

struct FrkExperimentResult {
  SpaceCoverage scores;
  FittedFRK fitted;
};

/// FRK with structured K and sigma2_zeta estimated by EM.
FrkExperimentResult run_example3(const Experiment& exp, const EmOptions& opts = {KMode::Structured, 1e-6, 200, std::nullopt});

struct Example4Result {
  double rmspe_full = 0.0;
  double rmspe_binned = 0.0;
};

/// Full kriging against spatial-only kriging in fixed bins of s2 (as time).
Example4Result run_example4(const Experiment& exp, double bin_width = 0.1);

struct Example5Result {
  double rmspe_full = 0.0;
  double rmspe_frk = 0.0;
  double rmspe_window = 0.0;
};

/// Retrievals at sigma2_eps (10 by default): full kriging, FRK conditioned
/// with `fit` (K and sigma2_zeta estimated from the design-variance data), and
/// moving-window kriging with window `delta` on s2.
Example5Result run_example5(const Experiment& exp, const FittedFRK& fit, double sigma2_eps = 10.0,
                            double delta = 0.1);

}  // namespace gapfill
