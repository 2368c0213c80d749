#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gapfill/covariance.hpp"

namespace gapfill {

/// Two-sided standard-normal quantile z with P(|N(0,1)| <= z) = level.
double normal_quantile_two_sided(double level);

struct DiagnosticsReport {
  std::size_t N = 0;
  double MPE = 0.0;    // mean(truth - pred)
  double MAPE = 0.0;
  double RMSPE = 0.0;
  double R2 = 0.0;     // squared Pearson correlation; NaN when N < 2
  double slope = 0.0;  // sum(pred * truth) / sum(truth^2)
  double coverage = 0.0;
  double nominal_level = 0.95;
};

/// Discrepancy and coverage diagnostics. A truth value is covered when
/// |truth - pred| <= z(level) * se (closed interval).
DiagnosticsReport score(const Eigen::VectorXd& pred, const Eigen::VectorXd& se, const Eigen::VectorXd& truth,
                        double nominal_level);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double x) const { return x >= lower && x <= upper; }
};

/// (v - mu_eps - z sigma, v - mu_eps + z sigma): the value is first corrected
/// for its bias, then widened by the error SD.
Interval bias_adjusted_interval(double value, double mu_eps, double sigma, double level);

struct ComparisonInterval {
  double delta = 0.0;     // y1 - y2
  double mu_delta = 0.0;  // mu_eps1 - mu_eps2
  double sigma_delta = 0.0;
  double level = 0.95;
  double lower = 0.0;
  double upper = 0.0;
  bool contains_zero = false;
};

/// Interval for the difference of two predictors whose errors have biases
/// mu_eps1, mu_eps2, SDs sigma_k1, sigma_k2 and correlation rho. rho = 0 is
/// the case of a kriging product against an independent reference.
ComparisonInterval compare_predictors(double y1, double y2, double mu_eps1, double mu_eps2, double sigma_k1,
                                      double sigma_k2, double rho, double level);

/// (y1 - 2 y2 + y3) / h^2.
double second_order_quotient(double y1, double y2, double y3, double h);

/// Variance of the second-order quotient of a mean-zero process at three
/// equally spaced collinear points (s2 the midpoint, spacing h).
double quotient_variance_theoretical(const CovarianceFunction& cov, const SpaceTimePoint& s1,
                                     const SpaceTimePoint& s2, const SpaceTimePoint& s3, double h);

/// E|D| for D ~ N(0, sigma2).
double expected_abs_halfnormal(double sigma2);

/// Mean |second-order quotient| over all interior triples along `axis` (0 or 1)
/// of a row-major n1 x n2 grid (axis 0 varies fastest).
double smoothness_stat(const Eigen::VectorXd& values, int n1, int n2, double h, int axis);

/// One row of a validation table.
struct ReportRow {
  std::string label;
  DiagnosticsReport report;
};

/// Delimited table with columns Station, N, MPE, MAPE, RMSPE, R2, Slope, <level> Cov.
void write_report_table(std::ostream& os, const std::vector<ReportRow>& rows, char delim = ',');

}  // namespace gapfill
