#include "gapfill/kriging.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gapfill/errors.hpp"
#include "gapfill/linalg.hpp"

namespace gapfill {

KrigingSystem::KrigingSystem(Dataset data, CovarianceFunction cov, MeanModel mean)
    : data_(std::move(data)), cov_(cov), mean_(mean) {
  data_.validate();
  cov_.validate();
  if (data_.empty()) throw InvalidArgumentError("kriging needs at least one datum");
  Eigen::MatrixXd c = covariance_matrix(cov_, data_.points);
  c.diagonal() += data_.sigma_eps.array().square().matrix();
  llt_ = factorize_with_jitter(c, cov_.sigma2).llt;

  Eigen::VectorXd z = data_.z;
  if (data_.mu_eps.size() != 0) z -= data_.mu_eps;
  if (mean_ == MeanModel::UnknownConstant) {
    ones_solve_ = llt_.solve(Eigen::VectorXd::Ones(z.size()));
    ones_quad_ = ones_solve_.sum();
    mean_hat_ = ones_solve_.dot(z) / ones_quad_;
    z.array() -= mean_hat_;
  }
  alpha_ = llt_.solve(z);
}

double KrigingSystem::default_pred_sigma_eps() const {
  const auto& s = data_.sigma_eps;
  if ((s.array() == s[0]).all()) return s[0];
  return std::sqrt(s.array().square().mean());
}

Eigen::MatrixXd KrigingSystem::weights(std::span<const SpaceTimePoint> pts) const {
  const Eigen::MatrixXd cross = covariance_matrix(cov_, data_.points, pts);
  Eigen::MatrixXd w = llt_.solve(cross);
  if (mean_ == MeanModel::UnknownConstant) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double gap = 1.0 - w.col(j).sum();
      w.col(j) += ones_solve_ * (gap / ones_quad_);
    }
  }
  return w;
}

PredictionResult KrigingSystem::predict(std::span<const SpaceTimePoint> pts, const KrigingOptions& opts) const {
  const auto n = static_cast<Eigen::Index>(pts.size());
  PredictionResult r;
  r.points.assign(pts.begin(), pts.end());
  r.space = opts.space;
  r.prior_only.assign(pts.size(), 0);
  if (n == 0) return r;

  const Eigen::MatrixXd cross = covariance_matrix(cov_, data_.points, pts);
  const Eigen::MatrixXd solved = llt_.solve(cross);
  r.pred = cross.transpose() * alpha_;
  Eigen::VectorXd var = (cov_.sigma2 - (cross.array() * solved.array()).colwise().sum()).transpose();
  if (mean_ == MeanModel::UnknownConstant) {
    r.pred.array() += mean_hat_;
    const Eigen::VectorXd gap = (1.0 - (cross.transpose() * ones_solve_).array()).matrix();
    var.array() += gap.array().square() / ones_quad_;
  }
  var = var.cwiseMax(0.0);
  r.se_process = var.cwiseSqrt();

  Eigen::VectorXd eps2;
  if (opts.pred_sigma_eps) {
    if (opts.pred_sigma_eps->size() != n) throw InvalidArgumentError("pred_sigma_eps has wrong length");
    eps2 = opts.pred_sigma_eps->array().square();
  } else {
    eps2 = Eigen::VectorXd::Constant(n, std::pow(default_pred_sigma_eps(), 2));
  }
  r.se_observation = (var + eps2).cwiseSqrt();
  return r;
}

Eigen::MatrixXd KrigingSystem::conditional_covariance(std::span<const SpaceTimePoint> pts) const {
  const Eigen::MatrixXd cross = covariance_matrix(cov_, data_.points, pts);
  Eigen::MatrixXd out = covariance_matrix(cov_, pts);
  out.noalias() -= cross.transpose() * llt_.solve(cross);
  return out;
}

PredictionResult simple_krige(const Dataset& data, const CovarianceFunction& cov,
                              std::span<const SpaceTimePoint> pred_points, const KrigingOptions& opts) {
  return KrigingSystem(data, cov, opts.mean).predict(pred_points, opts);
}

namespace {

PredictionResult empty_result(std::span<const SpaceTimePoint> pts, const KrigingOptions& opts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  PredictionResult r;
  r.points.assign(pts.begin(), pts.end());
  r.space = opts.space;
  r.pred = Eigen::VectorXd::Zero(n);
  r.se_process = Eigen::VectorXd::Zero(n);
  r.se_observation = Eigen::VectorXd::Zero(n);
  r.prior_only.assign(pts.size(), 0);
  return r;
}

double pred_eps2(const KrigingOptions& opts, const Dataset& data, std::size_t j) {
  if (opts.pred_sigma_eps) return std::pow((*opts.pred_sigma_eps)[static_cast<Eigen::Index>(j)], 2);
  const auto& s = data.sigma_eps;
  if (s.size() == 0) return 0.0;
  if ((s.array() == s[0]).all()) return s[0] * s[0];
  return s.array().square().mean();
}

// Runs kriging for each group of prediction points sharing a data subset and
// scatters the results back. Groups with no data get the flagged prior.
void krige_groups(const Dataset& data, const CovarianceFunction& cov,
                  const std::map<std::vector<std::size_t>, std::vector<std::size_t>>& groups,
                  std::span<const SpaceTimePoint> pred_points, const KrigingOptions& opts, PredictionResult& r) {
  for (const auto& [data_idx, pred_idx] : groups) {
    std::vector<SpaceTimePoint> pts;
    pts.reserve(pred_idx.size());
    for (auto j : pred_idx) pts.push_back(pred_points[j]);
    if (data_idx.empty()) {
      for (auto j : pred_idx) {
        const auto jj = static_cast<Eigen::Index>(j);
        r.pred[jj] = 0.0;
        r.se_process[jj] = std::sqrt(cov.sigma2);
        r.se_observation[jj] = std::sqrt(cov.sigma2 + pred_eps2(opts, data, j));
        r.prior_only[j] = 1;
      }
      continue;
    }
    KrigingOptions sub = opts;
    if (opts.pred_sigma_eps) {
      Eigen::VectorXd s(static_cast<Eigen::Index>(pred_idx.size()));
      for (std::size_t k = 0; k < pred_idx.size(); ++k) {
        s[static_cast<Eigen::Index>(k)] = (*opts.pred_sigma_eps)[static_cast<Eigen::Index>(pred_idx[k])];
      }
      sub.pred_sigma_eps = s;
    } else {
      sub.pred_sigma_eps = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(pred_idx.size()),
                                                     std::sqrt(pred_eps2(opts, data, 0)));
    }
    const auto part = KrigingSystem(data.subset(data_idx), cov, opts.mean).predict(pts, sub);
    for (std::size_t k = 0; k < pred_idx.size(); ++k) {
      const auto jj = static_cast<Eigen::Index>(pred_idx[k]);
      const auto kk = static_cast<Eigen::Index>(k);
      r.pred[jj] = part.pred[kk];
      r.se_process[jj] = part.se_process[kk];
      r.se_observation[jj] = part.se_observation[kk];
    }
  }
}

}  // namespace

PredictionResult fixed_bin_krige(const Dataset& data, const CovarianceFunction& spatial, double bin_width,
                                 double bin_origin, std::span<const SpaceTimePoint> pred_points,
                                 const KrigingOptions& opts) {
  data.validate();
  spatial.validate();
  if (!(bin_width > 0.0)) throw InvalidArgumentError("bin width must be positive");
  if (spatial.kind != CovarianceKind::ExponentialSpatial) {
    throw InvalidArgumentError("fixed-bin kriging takes a spatial-only covariance");
  }
  if (opts.pred_sigma_eps && opts.pred_sigma_eps->size() != static_cast<Eigen::Index>(pred_points.size())) {
    throw InvalidArgumentError("pred_sigma_eps has wrong length");
  }
  std::map<std::int64_t, std::vector<std::size_t>> by_bin;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_bin[bin_index(data.points[i].t, bin_origin, bin_width)].push_back(i);
  }
  std::map<std::vector<std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t j = 0; j < pred_points.size(); ++j) {
    const auto it = by_bin.find(bin_index(pred_points[j].t, bin_origin, bin_width));
    groups[it == by_bin.end() ? std::vector<std::size_t>{} : it->second].push_back(j);
  }
  auto r = empty_result(pred_points, opts);
  krige_groups(data, spatial, groups, pred_points, opts, r);
  return r;
}

PredictionResult moving_window_krige(const Dataset& data, const CovarianceFunction& cov, double delta,
                                     std::span<const SpaceTimePoint> pred_points, const KrigingOptions& opts) {
  data.validate();
  cov.validate();
  if (!(delta > 0.0)) throw InvalidArgumentError("window width must be positive");
  if (opts.pred_sigma_eps && opts.pred_sigma_eps->size() != static_cast<Eigen::Index>(pred_points.size())) {
    throw InvalidArgumentError("pred_sigma_eps has wrong length");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data.points[a].t < data.points[b].t; });
  std::vector<double> times;
  times.reserve(order.size());
  for (auto i : order) times.push_back(data.points[i].t);

  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> ranges;
  for (std::size_t j = 0; j < pred_points.size(); ++j) {
    const double t = pred_points[j].t;
    const auto lo = std::lower_bound(times.begin(), times.end(), t - delta / 2.0) - times.begin();
    const auto hi = std::upper_bound(times.begin(), times.end(), t + delta / 2.0) - times.begin();
    ranges[{static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))}].push_back(j);
  }
  std::map<std::vector<std::size_t>, std::vector<std::size_t>> groups;
  for (const auto& [range, js] : ranges) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(range.first),
                                 order.begin() + static_cast<std::ptrdiff_t>(range.second));
    std::sort(idx.begin(), idx.end());
    auto& g = groups[idx];
    g.insert(g.end(), js.begin(), js.end());
  }
  auto r = empty_result(pred_points, opts);
  krige_groups(data, cov, groups, pred_points, opts, r);
  return r;
}

}  // namespace gapfill
