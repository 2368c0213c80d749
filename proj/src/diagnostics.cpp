#include "gapfill/diagnostics.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>

#include "gapfill/errors.hpp"

namespace gapfill {

double normal_quantile_two_sided(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgumentError("level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
}

DiagnosticsReport score(const Eigen::VectorXd& pred, const Eigen::VectorXd& se, const Eigen::VectorXd& truth,
                        double nominal_level) {
  const auto n = truth.size();
  if (pred.size() != n || se.size() != n) throw InvalidArgumentError("score inputs have different lengths");
  if (n < 1) throw InvalidArgumentError("score needs at least one value");
  const double z = normal_quantile_two_sided(nominal_level);
  const Eigen::ArrayXd err = truth.array() - pred.array();
  DiagnosticsReport r;
  r.N = static_cast<std::size_t>(n);
  r.nominal_level = nominal_level;
  r.MPE = err.mean();
  r.MAPE = err.abs().mean();
  r.RMSPE = std::sqrt(err.square().mean());
  r.slope = pred.dot(truth) / truth.squaredNorm();
  r.coverage = (err.abs() <= z * se.array()).cast<double>().mean();
  if (n >= 2) {
    const Eigen::ArrayXd a = pred.array() - pred.mean(), b = truth.array() - truth.mean();
    const double denom = std::sqrt(a.square().sum() * b.square().sum());
    r.R2 = denom > 0.0 ? std::pow((a * b).sum() / denom, 2) : std::numeric_limits<double>::quiet_NaN();
  } else {
    r.R2 = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

Interval bias_adjusted_interval(double value, double mu_eps, double sigma, double level) {
  if (sigma < 0.0) throw InvalidArgumentError("sigma must be non-negative");
  const double z = normal_quantile_two_sided(level);
  const double centre = value - mu_eps;
  return {centre - z * sigma, centre + z * sigma};
}

ComparisonInterval compare_predictors(double y1, double y2, double mu_eps1, double mu_eps2, double sigma_k1,
                                      double sigma_k2, double rho, double level) {
  if (sigma_k1 < 0.0 || sigma_k2 < 0.0) throw InvalidArgumentError("sigmas must be non-negative");
  if (!(std::abs(rho) <= 1.0)) throw InvalidArgumentError("rho must lie in [-1, 1]");
  const double z = normal_quantile_two_sided(level);
  ComparisonInterval c;
  c.delta = y1 - y2;
  c.mu_delta = mu_eps1 - mu_eps2;
  const double var = sigma_k1 * sigma_k1 + sigma_k2 * sigma_k2 - 2.0 * rho * sigma_k1 * sigma_k2;
  c.sigma_delta = std::sqrt(std::max(var, 0.0));
  c.level = level;
  c.lower = c.delta - c.mu_delta - z * c.sigma_delta;
  c.upper = c.delta - c.mu_delta + z * c.sigma_delta;
  c.contains_zero = c.lower <= 0.0 && 0.0 <= c.upper;
  return c;
}

double second_order_quotient(double y1, double y2, double y3, double h) {
  if (!(h > 0.0)) throw InvalidArgumentError("h must be positive");
  return (y1 - 2.0 * y2 + y3) / (h * h);
}

double quotient_variance_theoretical(const CovarianceFunction& cov, const SpaceTimePoint& s1,
                                     const SpaceTimePoint& s2, const SpaceTimePoint& s3, double h) {
  if (!(h > 0.0)) throw InvalidArgumentError("h must be positive");
  const double d12 = distance(s1.loc, s2.loc), d23 = distance(s2.loc, s3.loc), d13 = distance(s1.loc, s3.loc);
  const double tol = 1e-9 * std::max(1.0, h);
  if (std::abs(d12 - h) > tol || std::abs(d23 - h) > tol || std::abs(d13 - 2.0 * h) > 2.0 * tol) {
    throw InvalidArgumentError("s2 must be the midpoint of s1 and s3 at spacing h");
  }
  const double r12 = correlation(cov, s1, s2), r23 = correlation(cov, s2, s3), r13 = correlation(cov, s1, s3);
  return cov.sigma2 / std::pow(h, 4) * (6.0 - 4.0 * r12 - 4.0 * r23 + 2.0 * r13);
}

double expected_abs_halfnormal(double sigma2) {
  if (sigma2 < 0.0) throw InvalidArgumentError("variance must be non-negative");
  return std::sqrt(2.0 * sigma2 / std::numbers::pi);
}

double smoothness_stat(const Eigen::VectorXd& values, int n1, int n2, double h, int axis) {
  if (values.size() != static_cast<Eigen::Index>(n1) * n2) throw InvalidArgumentError("grid size mismatch");
  if (axis != 0 && axis != 1) throw InvalidArgumentError("axis must be 0 or 1");
  const int along = axis == 0 ? n1 : n2;
  if (along < 3) throw InvalidArgumentError("need at least 3 points along the axis");
  auto at = [&](int i, int j) { return values[static_cast<Eigen::Index>(j) * n1 + i]; };
  double acc = 0.0;
  std::size_t count = 0;
  if (axis == 0) {
    for (int j = 0; j < n2; ++j) {
      for (int i = 1; i + 1 < n1; ++i, ++count) acc += std::abs(second_order_quotient(at(i - 1, j), at(i, j), at(i + 1, j), h));
    }
  } else {
    for (int j = 1; j + 1 < n2; ++j) {
      for (int i = 0; i < n1; ++i, ++count) acc += std::abs(second_order_quotient(at(i, j - 1), at(i, j), at(i, j + 1), h));
    }
  }
  return acc / static_cast<double>(count);
}

void write_report_table(std::ostream& os, const std::vector<ReportRow>& rows, char delim) {
  const double level = rows.empty() ? 0.95 : rows.front().report.nominal_level;
  os << "Station" << delim << "N" << delim << "MPE" << delim << "MAPE" << delim << "RMSPE" << delim << "R2"
     << delim << "Slope" << delim << std::lround(level * 100.0) << "% Cov.\n";
  const auto flags = os.flags();
  const auto prec = os.precision();
  for (const auto& row : rows) {
    const auto& r = row.report;
    os << row.label << delim << r.N << std::fixed << std::setprecision(2) << delim << r.MPE << delim << r.MAPE
       << delim << r.RMSPE << delim << r.R2 << std::setprecision(3) << delim << r.slope << std::setprecision(2)
       << delim << r.coverage << '\n';
    os.flags(flags);
  }
  os.precision(prec);
}

}  // namespace gapfill
