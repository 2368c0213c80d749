#include "gapfill/experiments.hpp"

#include <cmath>

#include "gapfill/diagnostics.hpp"
#include "gapfill/errors.hpp"
#include "gapfill/kriging.hpp"
#include "gapfill/random.hpp"

namespace gapfill {

namespace {

double rmspe(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
}

SpaceTimePoint unit_point(double s1, double s2) { return {Location::planar(s1, s2), s2}; }

}  // namespace

Dataset Experiment::retrievals(std::optional<double> sigma2_eps) const {
  const double s = std::sqrt(sigma2_eps.value_or(design.sigma2_eps));
  return Dataset::make(data_points, y_data + s * noise, s);
}

Experiment simulate_experiment(const ExperimentDesign& d, std::uint64_t seed) {
  if (d.m < 1 || d.n_diag < 1 || d.transect_rows < 0 || d.transect_len < 0) {
    throw InvalidArgumentError("experiment sizes must be positive");
  }
  Experiment e;
  e.design = d;
  e.cov = CovarianceFunction::exponential(d.sigma2_y, d.tau);
  Rng rng(seed);
  Rng loc_rng(rng.split());
  const std::uint64_t field_seed = rng.split();
  Rng noise_rng(rng.split());

  for (int i = 0; i < d.m; ++i) {
    const double a = loc_rng.uniform();
    e.data_points.push_back(unit_point(a, loc_rng.uniform()));
  }
  for (int i = 0; i < d.n_diag; ++i) {
    const double a = loc_rng.uniform();
    e.diag.push_back(unit_point(a, loc_rng.uniform()));
  }
  for (int r = 0; r < d.transect_rows; ++r) {
    const double s2 = (r + 0.5) / d.transect_rows;
    const double start = 0.5 * (1.0 - d.transect_h * (d.transect_len - 1));
    for (int k = 0; k < d.transect_len; ++k) e.transect.push_back(unit_point(start + k * d.transect_h, s2));
  }

  std::vector<SpaceTimePoint> all = e.data_points;
  all.insert(all.end(), e.diag.begin(), e.diag.end());
  all.insert(all.end(), e.transect.begin(), e.transect.end());
  const auto field = simulate_unconditional(e.cov, all, field_seed);
  e.y_data = field.values.head(d.m);
  e.y_diag = field.values.segment(d.m, d.n_diag);
  e.y_transect = field.values.tail(static_cast<Eigen::Index>(e.transect.size()));

  e.noise = noise_rng.normal_vector(d.m);
  e.z_diag = e.y_diag + std::sqrt(d.sigma2_eps) * noise_rng.normal_vector(d.n_diag);
  return e;
}

SpaceCoverage score_spaces(const PredictionResult& res, const Experiment& exp, double level) {
  SpaceCoverage c;
  c.rmspe = rmspe(res.pred, exp.y_diag);
  c.process_vs_truth = score(res.pred, res.se_process, exp.y_diag, level).coverage;
  c.process_vs_left_out = score(res.pred, res.se_process, exp.z_diag, level).coverage;
  c.observation_vs_truth = score(res.pred, res.se_observation, exp.y_diag, level).coverage;
  c.observation_vs_left_out = score(res.pred, res.se_observation, exp.z_diag, level).coverage;
  return c;
}

SpaceCoverage run_example1(const Experiment& exp, double level) {
  return score_spaces(simple_krige(exp.retrievals(), exp.cov, exp.diag), exp, level);
}

BasisSet example3_basis() { return build_basis_planar(GridSpec::unit_square(1, 1), {{3, 3}, {9, 9}, {27, 27}}); }

FrkExperimentResult run_example3(const Experiment& exp, const EmOptions& opts) {
  auto fitted = fit_em(exp.retrievals(), example3_basis(), opts);
  const auto res = frk_predict(fitted, exp.diag);
  return {score_spaces(res, exp), std::move(fitted)};
}

Example4Result run_example4(const Experiment& exp, double bin_width) {
  Example4Result r;
  const auto data = exp.retrievals();
  r.rmspe_full = rmspe(simple_krige(data, exp.cov, exp.diag).pred, exp.y_diag);

  // One spatial dimension s1; s2 becomes the time axis.
  auto to_line = [](std::vector<SpaceTimePoint> pts) {
    for (auto& p : pts) p = {Location::planar(p.loc.x, 0.0), p.loc.y};
    return pts;
  };
  Dataset line = data;
  line.points = to_line(data.points);
  const auto diag = to_line(exp.diag);
  r.rmspe_binned = rmspe(fixed_bin_krige(line, exp.cov, bin_width, 0.0, diag).pred, exp.y_diag);
  return r;
}

Example5Result run_example5(const Experiment& exp, const FittedFRK& fit, double sigma2_eps, double delta) {
  Example5Result r;
  const auto data = exp.retrievals(sigma2_eps);
  r.rmspe_full = rmspe(simple_krige(data, exp.cov, exp.diag).pred, exp.y_diag);
  const auto cond = frk_condition(fit.basis, fit.K, fit.sigma2_zeta, data);
  r.rmspe_frk = rmspe(frk_predict(cond, exp.diag).pred, exp.y_diag);
  r.rmspe_window = rmspe(moving_window_krige(data, exp.cov, delta, exp.diag).pred, exp.y_diag);
  return r;
}

}  // namespace gapfill
