#include "gapfill/covariance.hpp"

#include <cmath>
#include <map>
#include <tuple>

#include "gapfill/errors.hpp"
#include "gapfill/linalg.hpp"
#include "gapfill/random.hpp"

namespace gapfill {

void CovarianceFunction::validate() const {
  if (!(sigma2 > 0.0)) throw InvalidArgumentError("sigma2 must be positive");
  if (!(tau_s > 0.0)) throw InvalidArgumentError("tau_s must be positive");
  if (kind == CovarianceKind::SeparableExpSpaceTime && !(tau_t > 0.0)) {
    throw InvalidArgumentError("tau_t must be positive");
  }
  if (kind == CovarianceKind::BinnedIndicatorTemporal && !(bin_width > 0.0)) {
    throw InvalidArgumentError("bin_width must be positive");
  }
}

CovarianceFunction CovarianceFunction::exponential(double sigma2, double tau_s) {
  CovarianceFunction c{CovarianceKind::ExponentialSpatial, sigma2, tau_s};
  c.validate();
  return c;
}

CovarianceFunction CovarianceFunction::separable(double sigma2, double tau_s, double tau_t) {
  CovarianceFunction c{CovarianceKind::SeparableExpSpaceTime, sigma2, tau_s, tau_t};
  c.validate();
  return c;
}

CovarianceFunction CovarianceFunction::binned(double sigma2, double tau_s, double bin_width, double bin_origin) {
  CovarianceFunction c{CovarianceKind::BinnedIndicatorTemporal, sigma2, tau_s, 1.0, bin_width, bin_origin};
  c.validate();
  return c;
}

double correlation(const CovarianceFunction& cov, const SpaceTimePoint& a, const SpaceTimePoint& b) {
  const double spatial = std::exp(-distance(a.loc, b.loc) / cov.tau_s);
  switch (cov.kind) {
    case CovarianceKind::ExponentialSpatial:
      return spatial;
    case CovarianceKind::SeparableExpSpaceTime:
      return spatial * std::exp(-std::abs(a.t - b.t) / cov.tau_t);
    case CovarianceKind::BinnedIndicatorTemporal:
      return bin_index(a.t, cov.bin_origin, cov.bin_width) == bin_index(b.t, cov.bin_origin, cov.bin_width)
                 ? spatial
                 : 0.0;
  }
  return 0.0;
}

Eigen::MatrixXd covariance_matrix(const CovarianceFunction& cov, std::span<const SpaceTimePoint> a,
                                  std::span<const SpaceTimePoint> b) {
  const auto na = static_cast<Eigen::Index>(a.size()), nb = static_cast<Eigen::Index>(b.size());
  Eigen::MatrixXd m(na, nb);
  for (Eigen::Index j = 0; j < nb; ++j) {
    for (Eigen::Index i = 0; i < na; ++i) {
      m(i, j) = cov.sigma2 * correlation(cov, a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
    }
  }
  return m;
}

Eigen::MatrixXd covariance_matrix(const CovarianceFunction& cov, std::span<const SpaceTimePoint> a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    m(j, j) = cov.sigma2;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      m(i, j) = cov.sigma2 * correlation(cov, a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
      m(j, i) = m(i, j);
    }
  }
  return m;
}

std::vector<FieldSample> simulate_unconditional_many(const CovarianceFunction& cov,
                                                     std::span<const SpaceTimePoint> points, int n_sims,
                                                     std::uint64_t seed) {
  if (points.empty()) throw InvalidArgumentError("simulation needs at least one point");
  cov.validate();
  const auto fac = factorize_with_jitter(covariance_matrix(cov, points), cov.sigma2);
  const Eigen::MatrixXd lower = fac.llt.matrixL();
  Rng rng(seed);
  std::vector<FieldSample> out;
  out.reserve(static_cast<std::size_t>(n_sims));
  for (int k = 0; k < n_sims; ++k) {
    const std::uint64_t s = k == 0 ? seed : rng.split();
    Rng draw(s);
    FieldSample f;
    f.points.assign(points.begin(), points.end());
    f.values = lower * draw.normal_vector(lower.rows());
    f.seed = s;
    out.push_back(std::move(f));
  }
  return out;
}

FieldSample simulate_unconditional(const CovarianceFunction& cov, std::span<const SpaceTimePoint> points,
                                   std::uint64_t seed) {
  return std::move(simulate_unconditional_many(cov, points, 1, seed).front());
}

std::vector<FieldSample> simulate_conditional(const CovarianceFunction& cov, const Dataset& data,
                                              std::span<const SpaceTimePoint> pred_points, int n_sims,
                                              std::uint64_t seed) {
  data.validate();
  if (data.empty()) throw InvalidArgumentError("conditional simulation needs data");
  cov.validate();

  // Simulate jointly on the distinct union of data and prediction points so
  // that coincident points share one value.
  using Key = std::tuple<int, double, double, double>;
  std::map<Key, Eigen::Index> index;
  std::vector<SpaceTimePoint> all;
  auto intern = [&](const SpaceTimePoint& p) {
    const Key k{static_cast<int>(p.loc.frame), p.loc.x, p.loc.y, p.t};
    auto [it, inserted] = index.try_emplace(k, static_cast<Eigen::Index>(all.size()));
    if (inserted) all.push_back(p);
    return it->second;
  };
  std::vector<Eigen::Index> data_idx, pred_idx;
  for (const auto& p : data.points) data_idx.push_back(intern(p));
  for (const auto& p : pred_points) pred_idx.push_back(intern(p));

  const auto m = static_cast<Eigen::Index>(data.size());
  const auto n = static_cast<Eigen::Index>(pred_points.size());
  Eigen::MatrixXd c = covariance_matrix(cov, data.points);
  c.diagonal() += data.sigma_eps.array().square().matrix();
  const auto fac = factorize_with_jitter(c, cov.sigma2);
  const Eigen::MatrixXd cross = covariance_matrix(cov, data.points, pred_points);
  const Eigen::MatrixXd weights = fac.llt.solve(cross);  // m x n

  const auto joint = factorize_with_jitter(covariance_matrix(cov, all), cov.sigma2);
  const Eigen::MatrixXd lower = joint.llt.matrixL();

  Rng rng(seed);
  std::vector<FieldSample> out;
  out.reserve(static_cast<std::size_t>(n_sims));
  for (int k = 0; k < n_sims; ++k) {
    const std::uint64_t s = rng.split();
    Rng draw(s);
    const Eigen::VectorXd y = lower * draw.normal_vector(lower.rows());
    Eigen::VectorXd resid(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double bias = data.mu_eps.size() != 0 ? data.mu_eps[i] : 0.0;
      resid[i] = data.z[i] - bias - (y[data_idx[static_cast<std::size_t>(i)]] + data.sigma_eps[i] * draw.normal());
    }
    FieldSample f;
    f.points.assign(pred_points.begin(), pred_points.end());
    f.values.resize(n);
    const Eigen::VectorXd correction = weights.transpose() * resid;
    for (Eigen::Index j = 0; j < n; ++j) f.values[j] = y[pred_idx[static_cast<std::size_t>(j)]] + correction[j];
    f.seed = s;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace gapfill
