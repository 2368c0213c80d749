#include "gapfill/frk.hpp"

#include <gsl/gsl_min.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <tuple>

#include "gapfill/errors.hpp"
#include "gapfill/linalg.hpp"
#include "gapfill/random.hpp"

namespace gapfill {

void FRKParams::validate(int n_res) const {
  const auto n = static_cast<std::size_t>(n_res);
  if (theta1.size() != n || theta2.size() != n || theta3.size() != n) {
    throw InvalidArgumentError("FRK parameters do not match the number of resolutions");
  }
  for (std::size_t q = 0; q < n; ++q) {
    if (!(theta1[q] > 0.0) || !(theta2[q] > 0.0) || !(theta3[q] > 0.0)) {
      throw InvalidArgumentError("FRK parameters must be strictly positive");
    }
  }
  if (!(sigma2_zeta > 0.0)) throw InvalidArgumentError("sigma2_zeta must be positive");
}

FRKParams FRKParams::defaults(const BasisSet& basis, double var_z) {
  if (!(var_z > 0.0)) var_z = 1.0;
  const auto n = static_cast<std::size_t>(basis.n_res());
  const double window = basis.temporal() ? basis.temporal()->window : 1.0;
  FRKParams p;
  p.theta1.assign(n, var_z / static_cast<double>(n));
  p.theta2.assign(n, basis.domain_diameter() / 5.0);
  p.theta3.assign(n, window / 2.0);
  p.sigma2_zeta = 0.1 * var_z;
  return p;
}

Eigen::Index BlockDiagonal::size() const {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.rows();
  return n;
}

Eigen::MatrixXd BlockDiagonal::dense() const {
  const Eigen::Index n = size();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    m.block(off, off, b.rows(), b.cols()) = b;
    off += b.rows();
  }
  return m;
}

namespace {

// Centroid distance matrices of one resolution and of the temporal basis.
struct CentroidDistances {
  std::vector<Eigen::MatrixXd> spatial;
  Eigen::MatrixXd temporal;  // 1x1 zero when the basis is spatial only
};

CentroidDistances centroid_distances(const BasisSet& basis) {
  CentroidDistances d;
  for (const auto& r : basis.resolutions()) {
    const auto n = static_cast<Eigen::Index>(r.centres.size());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      m(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        m(i, j) = m(j, i) = distance(r.centres[static_cast<std::size_t>(i)], r.centres[static_cast<std::size_t>(j)]);
      }
    }
    d.spatial.push_back(std::move(m));
  }
  if (basis.temporal()) {
    const auto& c = basis.temporal()->centres;
    const auto n = static_cast<Eigen::Index>(c.size());
    d.temporal.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        d.temporal(i, j) = std::abs(c[static_cast<std::size_t>(i)] - c[static_cast<std::size_t>(j)]);
      }
    }
  } else {
    d.temporal = Eigen::MatrixXd::Zero(1, 1);
  }
  return d;
}

Eigen::MatrixXd exp_corr(const Eigen::MatrixXd& dist, double scale) { return (-dist.array() / scale).exp().matrix(); }

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (b.size() == 1) return a * b(0, 0);
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Eigen::MatrixXd inverse_spd(const Eigen::LLT<Eigen::MatrixXd>& llt, Eigen::Index n) {
  return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

// Dense prior precision K^-1 (block diagonal) and log|K|.
struct PriorPrecision {
  Eigen::MatrixXd kinv;
  double logdet = 0.0;
};

PriorPrecision invert_blocks(const BlockDiagonal& K) {
  PriorPrecision p;
  const Eigen::Index n = K.size();
  p.kinv = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index off = 0;
  for (const auto& b : K.blocks) {
    Eigen::LLT<Eigen::MatrixXd> llt(b);
    if (llt.info() != Eigen::Success) throw ConditioningError("K block is not positive definite");
    p.kinv.block(off, off, b.rows(), b.cols()) = inverse_spd(llt, b.rows());
    p.logdet += log_det(llt);
    off += b.rows();
  }
  return p;
}

// Kronecker route for structured blocks: K_q^-1 = theta1^-1 Rs^-1 (x) Rt^-1.
PriorPrecision invert_structured(const FRKParams& params, const CentroidDistances& dist) {
  PriorPrecision p;
  Eigen::Index n = 0;
  for (const auto& s : dist.spatial) n += s.rows() * dist.temporal.rows();
  p.kinv = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index off = 0;
  const auto nt = dist.temporal.rows();
  for (std::size_t q = 0; q < dist.spatial.size(); ++q) {
    const auto ns = dist.spatial[q].rows();
    Eigen::LLT<Eigen::MatrixXd> ls(exp_corr(dist.spatial[q], params.theta2[q]));
    Eigen::LLT<Eigen::MatrixXd> lt(exp_corr(dist.temporal, params.theta3[q]));
    if (ls.info() != Eigen::Success || lt.info() != Eigen::Success) {
      throw ConditioningError("structured K block is not positive definite");
    }
    const auto nq = ns * nt;
    p.kinv.block(off, off, nq, nq) = kron(inverse_spd(ls, ns), inverse_spd(lt, nt)) / params.theta1[q];
    p.logdet += static_cast<double>(nq) * std::log(params.theta1[q]) + static_cast<double>(nt) * log_det(ls) +
                static_cast<double>(ns) * log_det(lt);
    off += nq;
  }
  return p;
}

struct EStep {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd resid;  // z - Phi mu
  Eigen::VectorXd v;      // diag(Phi Sigma Phi')
  double loglik = 0.0;
};

double quad_sparse_row(const SparseRowMatrix& phi, Eigen::Index i, const Eigen::MatrixXd& s) {
  double acc = 0.0;
  for (SparseRowMatrix::InnerIterator a(phi, i); a; ++a) {
    for (SparseRowMatrix::InnerIterator b(phi, i); b; ++b) acc += a.value() * b.value() * s(a.col(), b.col());
  }
  return acc;
}

EStep e_step(const SparseRowMatrix& phi, const Eigen::VectorXd& z, const Eigen::VectorXd& eps2,
             const PriorPrecision& prior, double s2z) {
  const Eigen::Index m = z.size();
  const Eigen::Index r = prior.kinv.rows();
  const Eigen::VectorXd d = (eps2.array() + s2z).matrix();
  const Eigen::VectorXd dinv = d.cwiseInverse();

  const SparseRowMatrix weighted = dinv.asDiagonal() * phi;
  Eigen::MatrixXd prec = prior.kinv;
  prec += Eigen::MatrixXd(Eigen::SparseMatrix<double>(phi.transpose() * weighted));
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw ConditioningError("posterior precision is not positive definite");

  const Eigen::VectorXd dz = dinv.cwiseProduct(z);
  const Eigen::VectorXd b = phi.transpose() * dz;
  EStep e;
  e.mu = llt.solve(b);
  e.sigma = inverse_spd(llt, r);
  e.resid = z - phi * e.mu;
  e.v.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) e.v[i] = quad_sparse_row(phi, i, e.sigma);

  const double quad = z.dot(dz) - b.dot(e.mu);
  e.loglik = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + d.array().log().sum() +
                     prior.logdet + log_det(llt) + quad);
  if (!std::isfinite(e.loglik)) throw DivergenceError("non-finite marginal log-likelihood");
  return e;
}

Eigen::VectorXd bias_corrected(const Dataset& data) {
  Eigen::VectorXd z = data.z;
  if (data.mu_eps.size() != 0) z -= data.mu_eps;
  return z;
}

FittedFRK assemble(const BasisSet& basis, BlockDiagonal K, double s2z, const Dataset& data, EStep&& e) {
  FittedFRK f{basis, std::move(K), s2z};
  f.post_mean = std::move(e.mu);
  f.post_cov = std::move(e.sigma);
  f.data_points = data.points;
  f.data_sigma_eps = data.sigma_eps;
  f.data_resid = std::move(e.resid);
  f.loglik.push_back(e.loglik);
  return f;
}

// Sum over the block of tr((Rs^-1 (x) Rt^-1) S) via the Kronecker structure.
double kron_trace(const Eigen::MatrixXd& a_inv, const Eigen::MatrixXd& b_inv, const Eigen::MatrixXd& s) {
  const auto ns = a_inv.rows(), nt = b_inv.rows();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < ns; ++j) {
      acc += a_inv(i, j) * (b_inv.array() * s.block(i * nt, j * nt, nt, nt).array()).sum();
    }
  }
  return acc;
}

// Negative expected complete-data log-likelihood of one block, profiled over theta1.
// Search range for an e-folding length over a centroid distance matrix.
// Below 1/20 of the closest spacing the correlation matrix is the identity to
// machine precision, so the objective is flat there.
std::pair<double, double> length_bounds(const Eigen::MatrixXd& d, double fallback) {
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d.data()[i] > 0.0) lo = std::min(lo, d.data()[i]);
  }
  const double hi = d.size() > 1 ? d.maxCoeff() : fallback;
  if (!std::isfinite(lo)) lo = fallback;
  return {0.05 * lo, 100.0 * std::max(hi, fallback)};
}

// |L^-1 F|_F^2 = tr(R^-1 F F') for lower-triangular L and F. L^-1 F is lower
// triangular, so each panel of columns only involves the trailing rows.
double lower_solve_norm2(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::MatrixXd& f) {
  const Eigen::Index n = f.rows();
  constexpr Eigen::Index kPanel = 64;
  const Eigen::MatrixXd& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index c = 0; c < n; c += kPanel) {
    const Eigen::Index w = std::min(kPanel, n - c);
    Eigen::MatrixXd x = f.block(c, c, n - c, w);
    l.block(c, c, n - c, n - c).triangularView<Eigen::Lower>().solveInPlace(x);
    acc += x.squaredNorm();
  }
  return acc;
}

struct BlockObjective {
  const Eigen::MatrixXd* ds;
  const Eigen::MatrixXd* dt;
  const Eigen::MatrixXd* s;
  const Eigen::MatrixXd* s_factor;  // lower F with F F' = S, spatial-only blocks
  bool temporal;
  std::pair<double, double> range2;
  std::pair<double, double> range3;

  // Returns (objective, theta1).
  std::pair<double, double> eval(double theta2, double theta3) const {
    constexpr double kBad = 1e300;
    if (!(theta2 >= range2.first && theta2 <= range2.second)) return {kBad, 1.0};
    if (temporal && !(theta3 >= range3.first && theta3 <= range3.second)) return {kBad, 1.0};
    const auto ns = ds->rows(), nt = dt->rows();
    const double n = static_cast<double>(ns * nt);
    Eigen::LLT<Eigen::MatrixXd> ls(exp_corr(*ds, theta2));
    if (ls.info() != Eigen::Success) return {kBad, 1.0};
    double tr = 0.0;
    double logdet_t = 0.0;
    if (temporal) {
      Eigen::LLT<Eigen::MatrixXd> lt(exp_corr(*dt, theta3));
      if (lt.info() != Eigen::Success) return {kBad, 1.0};
      logdet_t = log_det(lt);
      tr = kron_trace(inverse_spd(ls, ns), inverse_spd(lt, nt), *s);
    } else if (s_factor) {
      tr = lower_solve_norm2(ls, *s_factor);
    } else {
      tr = kron_trace(inverse_spd(ls, ns), Eigen::MatrixXd::Ones(1, 1), *s);
    }
    if (!(tr > 0.0) || !std::isfinite(tr)) return {kBad, 1.0};
    const double theta1 = tr / n;
    const double f = n * std::log(theta1) + static_cast<double>(nt) * log_det(ls) + static_cast<double>(ns) * logdet_t;
    return {std::isfinite(f) ? f : kBad, theta1};
  }
};

double gsl_block_objective(const gsl_vector* x, void* ctx) {
  const auto* obj = static_cast<const BlockObjective*>(ctx);
  const double t2 = std::exp(gsl_vector_get(x, 0));
  const double t3 = obj->temporal ? std::exp(gsl_vector_get(x, 1)) : 1.0;
  return obj->eval(t2, t3).first;
}

// Objective on log theta2 that remembers every evaluation.
struct LogLengthSearch {
  const BlockObjective* obj;
  std::map<double, std::pair<double, double>> seen;

  const std::pair<double, double>& at(double x) {
    auto it = seen.find(x);
    if (it == seen.end()) it = seen.emplace(x, obj->eval(std::exp(x), 1.0)).first;
    return it->second;
  }
};

double gsl_block_objective_1d(double x, void* ctx) { return static_cast<LogLengthSearch*>(ctx)->at(x).first; }

// Brent search over log theta2 after bracketing outward from the start.
// Returns the best point found with its (objective, theta1).
std::pair<double, std::pair<double, double>> minimize_log_length(const BlockObjective& obj, double x0,
                                                                 std::pair<double, double> start) {
  LogLengthSearch search{&obj, {}};
  search.seen.emplace(x0, start);
  const double lo = std::log(obj.range2.first), hi = std::log(obj.range2.second);
  auto f = [&](double x) { return search.at(x).first; };
  auto result = [&](double x) { return std::make_pair(x, search.at(x)); };
  double step = 0.1;
  double a = std::max(x0 - step, lo), b = std::min(x0 + step, hi);
  double fa = f(a), fb = f(b);
  double m = x0, fm = start.first;
  // Walk downhill, doubling the step, until the middle point is lowest.
  for (int k = 0; k < 40 && !(fm < fa && fm < fb); ++k) {
    if (fa <= fb) {
      if (a <= lo) return result(fa < fm ? a : m);
      b = m, fb = fm, m = a, fm = fa;
      step *= 2.0;
      a = std::max(m - step, lo);
      fa = f(a);
    } else {
      if (b >= hi) return result(fb < fm ? b : m);
      a = m, fa = fm, m = b, fm = fb;
      step *= 2.0;
      b = std::min(m + step, hi);
      fb = f(b);
    }
  }
  if (!(fm < fa && fm < fb)) return result(m);
  gsl_function fn{&gsl_block_objective_1d, &search};
  gsl_min_fminimizer* br = gsl_min_fminimizer_alloc(gsl_min_fminimizer_brent);
  gsl_min_fminimizer_set_with_values(br, &fn, m, fm, a, fa, b, fb);
  for (int it = 0; it < 30; ++it) {
    if (gsl_min_fminimizer_iterate(br) != 0) break;
    if (gsl_min_test_interval(gsl_min_fminimizer_x_lower(br), gsl_min_fminimizer_x_upper(br), 1e-2, 0.0) ==
        GSL_SUCCESS) {
      break;
    }
  }
  const double x = gsl_min_fminimizer_x_minimum(br);
  gsl_min_fminimizer_free(br);
  return result(x);
}

// Partial maximization over (log theta2, log theta3): Brent in one dimension,
// Nelder-Mead in two. Keeps the incoming values unless the objective strictly
// improves.
void maximize_block(const BlockObjective& obj, double& theta1, double& theta2, double& theta3) {
  theta2 = std::clamp(theta2, obj.range2.first, obj.range2.second);
  if (obj.temporal) theta3 = std::clamp(theta3, obj.range3.first, obj.range3.second);
  const auto start = obj.eval(theta2, theta3);
  double t2 = theta2, t3 = theta3;
  std::pair<double, double> best;
  if (!obj.temporal) {
    const auto [x, value] = minimize_log_length(obj, std::log(theta2), start);
    t2 = std::exp(x);
    best = value;
  } else {
    gsl_multimin_function fn{&gsl_block_objective, 2, const_cast<BlockObjective*>(&obj)};
    gsl_vector* x = gsl_vector_alloc(2);
    gsl_vector* step = gsl_vector_alloc(2);
    gsl_vector_set(x, 0, std::log(theta2));
    gsl_vector_set(x, 1, std::log(theta3));
    gsl_vector_set_all(step, 0.25);
    gsl_multimin_fminimizer* nm = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 2);
    gsl_multimin_fminimizer_set(nm, &fn, x, step);
    // A partial maximization suffices: each M-step only has to improve the
    // expected complete-data log-likelihood.
    for (int it = 0; it < 30; ++it) {
      if (gsl_multimin_fminimizer_iterate(nm) != 0) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(nm), 1e-3) == GSL_SUCCESS) break;
    }
    t2 = std::exp(gsl_vector_get(nm->x, 0));
    t3 = std::exp(gsl_vector_get(nm->x, 1));
    gsl_multimin_fminimizer_free(nm);
    gsl_vector_free(step);
    gsl_vector_free(x);
    best = obj.eval(t2, t3);
  }
  // The profiled theta1 at the incoming (theta2, theta3) is itself an improvement.
  if (best.first < start.first) {
    theta1 = best.second;
    theta2 = t2;
    theta3 = t3;
  } else if (start.first < 1e300) {
    theta1 = start.second;
  }
}

double update_sigma2_zeta(const EStep& e, const Eigen::VectorXd& eps2, double s2z) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < eps2.size(); ++i) {
    const double w = s2z / (s2z + eps2[i]);
    acc += std::pow(w * e.resid[i], 2) + w * eps2[i] + w * w * e.v[i];
  }
  return acc / static_cast<double>(eps2.size());
}

double sample_variance(const Eigen::VectorXd& z) {
  if (z.size() < 2) return 1.0;
  return (z.array() - z.mean()).square().sum() / static_cast<double>(z.size() - 1);
}

}  // namespace

BlockDiagonal structured_K(const FRKParams& params, const BasisSet& basis) {
  params.validate(basis.n_res());
  const auto dist = centroid_distances(basis);
  BlockDiagonal K;
  for (std::size_t q = 0; q < dist.spatial.size(); ++q) {
    K.blocks.push_back(params.theta1[q] *
                       kron(exp_corr(dist.spatial[q], params.theta2[q]), exp_corr(dist.temporal, params.theta3[q])));
  }
  return K;
}

double frk_loglik(const BasisSet& basis, const BlockDiagonal& K, double sigma2_zeta, const Dataset& data) {
  data.validate();
  const auto phi = basis.design_matrix(data.points);
  return e_step(phi, bias_corrected(data), data.sigma_eps.array().square(), invert_blocks(K), sigma2_zeta).loglik;
}

FittedFRK frk_condition(const BasisSet& basis, BlockDiagonal K, double sigma2_zeta, const Dataset& data) {
  data.validate();
  if (K.size() != static_cast<Eigen::Index>(basis.size())) throw InvalidArgumentError("K does not match basis");
  if (data.empty()) {
    FittedFRK f{basis, K, sigma2_zeta};
    f.post_mean = Eigen::VectorXd::Zero(K.size());
    f.post_cov = K.dense();
    return f;
  }
  const auto phi = basis.design_matrix(data.points);
  auto e = e_step(phi, bias_corrected(data), data.sigma_eps.array().square(), invert_blocks(K), sigma2_zeta);
  return assemble(basis, std::move(K), sigma2_zeta, data, std::move(e));
}

FittedFRK fit_em(const Dataset& data, const BasisSet& basis, const EmOptions& opts) {
  data.validate();
  if (data.empty()) throw InvalidArgumentError("EM needs data");
  const Eigen::VectorXd z = bias_corrected(data);
  const Eigen::VectorXd eps2 = data.sigma_eps.array().square();
  const double var_z = sample_variance(z);
  FRKParams params = opts.init ? *opts.init : FRKParams::defaults(basis, var_z);
  params.validate(basis.n_res());
  const double s2z_floor = 1e-10 * std::max(var_z, 1e-300);

  const auto phi = basis.design_matrix(data.points);
  const auto dist = centroid_distances(basis);
  const bool temporal = basis.temporal().has_value();
  const double window = temporal ? basis.temporal()->window : 1.0;

  BlockDiagonal K = structured_K(params, basis);
  double s2z = params.sigma2_zeta;
  PriorPrecision prior = opts.mode == KMode::Structured ? invert_structured(params, dist) : invert_blocks(K);
  EStep e = e_step(phi, z, eps2, prior, s2z);
  std::vector<double> trace{e.loglik};
  int it = 0;
  bool converged = false;

  for (it = 1; it <= opts.max_iter; ++it) {
    // M-step. Second moments of eta per resolution block.
    std::vector<Eigen::MatrixXd> second;
    for (int q = 0; q < basis.n_res(); ++q) {
      const auto off = basis.offset(q);
      const auto n = basis.count(q);
      second.push_back(e.sigma.block(off, off, n, n) + e.mu.segment(off, n) * e.mu.segment(off, n).transpose());
    }
    const double s2z_new = std::max(update_sigma2_zeta(e, eps2, s2z), s2z_floor);

    if (opts.mode == KMode::FreeBlocks) {
      for (std::size_t q = 0; q < second.size(); ++q) {
        K.blocks[q] = 0.5 * (second[q] + second[q].transpose());
      }
      prior = invert_blocks(K);
    } else {
      for (std::size_t q = 0; q < second.size(); ++q) {
        Eigen::MatrixXd factor;
        if (!temporal) {
          Eigen::LLT<Eigen::MatrixXd> llt(second[q]);
          if (llt.info() == Eigen::Success) factor = llt.matrixL();
        }
        const BlockObjective obj{&dist.spatial[q], &dist.temporal, &second[q], factor.size() ? &factor : nullptr,
                                 temporal,
                                 length_bounds(dist.spatial[q], basis.domain_diameter()),
                                 length_bounds(dist.temporal, window)};
        maximize_block(obj, params.theta1[q], params.theta2[q], params.theta3[q]);
      }
      prior = invert_structured(params, dist);
    }
    s2z = s2z_new;
    params.sigma2_zeta = s2z;

    e = e_step(phi, z, eps2, prior, s2z);
    const double prev = trace.back();
    trace.push_back(e.loglik);
    if (std::abs(e.loglik - prev) < opts.tol * std::abs(prev)) {
      converged = true;
      break;
    }
  }

  if (opts.mode == KMode::Structured) K = structured_K(params, basis);
  FittedFRK f = assemble(basis, std::move(K), s2z, data, std::move(e));
  f.loglik = std::move(trace);
  f.iterations = std::min(it, opts.max_iter);
  f.converged = converged;
  if (opts.mode == KMode::Structured) f.params = params;
  return f;
}

namespace {

using PointKey = std::tuple<int, double, double, double>;
PointKey key_of(const SpaceTimePoint& p) { return {static_cast<int>(p.loc.frame), p.loc.x, p.loc.y, p.t}; }

std::map<PointKey, Eigen::Index> data_index(const FittedFRK& f) {
  std::map<PointKey, Eigen::Index> idx;
  for (std::size_t i = 0; i < f.data_points.size(); ++i) idx.try_emplace(key_of(f.data_points[i]), static_cast<Eigen::Index>(i));
  return idx;
}

double quad_sparse(const std::vector<std::pair<int, double>>& phi, const Eigen::MatrixXd& s) {
  double acc = 0.0;
  for (const auto& [i, a] : phi) {
    for (const auto& [j, b] : phi) acc += a * b * s(i, j);
  }
  return acc;
}

double dot_sparse(const std::vector<std::pair<int, double>>& phi, const Eigen::VectorXd& v) {
  double acc = 0.0;
  for (const auto& [i, a] : phi) acc += a * v[i];
  return acc;
}

}  // namespace

PredictionResult frk_predict(const FittedFRK& fitted, std::span<const SpaceTimePoint> pts,
                             const FrkPredictOptions& opts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  if (opts.pred_sigma_eps && opts.pred_sigma_eps->size() != n) {
    throw InvalidArgumentError("pred_sigma_eps has wrong length");
  }
  double default_eps2 = 0.0;
  if (fitted.data_sigma_eps.size() > 0) {
    const auto& s = fitted.data_sigma_eps;
    default_eps2 = (s.array() == s[0]).all() ? s[0] * s[0] : s.array().square().mean();
  }
  const auto idx = data_index(fitted);
  const double s2z = fitted.sigma2_zeta;

  PredictionResult r;
  r.points.assign(pts.begin(), pts.end());
  r.space = opts.space;
  r.pred.resize(n);
  r.se_process.resize(n);
  r.se_observation.resize(n);
  r.prior_only.assign(pts.size(), 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& p = pts[static_cast<std::size_t>(j)];
    const auto phi = fitted.basis.evaluate_sparse(p);
    double pred = dot_sparse(phi, fitted.post_mean);
    const double v = quad_sparse(phi, fitted.post_cov);
    double var = v + s2z;
    if (auto it = idx.find(key_of(p)); it != idx.end()) {
      // Observed location: Y = (1 - w) phi'eta + w z_i + independent part.
      const double e2 = std::pow(fitted.data_sigma_eps[it->second], 2);
      const double w = s2z / (s2z + e2);
      pred += w * fitted.data_resid[it->second];
      var = (1.0 - w) * (1.0 - w) * v + w * e2;
    }
    const double eps2 = opts.pred_sigma_eps ? std::pow((*opts.pred_sigma_eps)[j], 2) : default_eps2;
    r.pred[j] = pred;
    r.se_process[j] = std::sqrt(std::max(var, 0.0));
    r.se_observation[j] = std::sqrt(std::max(var, 0.0) + eps2);
  }
  return r;
}

std::vector<FieldSample> frk_conditional_sim(const FittedFRK& fitted, std::span<const SpaceTimePoint> pts,
                                             int n_sims, std::uint64_t seed) {
  const Eigen::MatrixXd root = psd_sqrt(0.5 * (fitted.post_cov + fitted.post_cov.transpose()), 1e-10);
  const auto phi = fitted.basis.design_matrix(pts);
  const auto idx = data_index(fitted);
  const double s2z = fitted.sigma2_zeta;
  const auto n = static_cast<Eigen::Index>(pts.size());

  // Data index for each prediction point (-1 when unobserved).
  std::vector<Eigen::Index> obs(pts.size(), -1);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (auto it = idx.find(key_of(pts[j])); it != idx.end()) obs[j] = it->second;
  }
  const Eigen::VectorXd phi_mu = phi * fitted.post_mean;
  Rng rng(seed);
  std::vector<FieldSample> out;
  for (int k = 0; k < n_sims; ++k) {
    const std::uint64_t s = rng.split();
    Rng draw(s);
    const Eigen::VectorXd eta = fitted.post_mean + root * draw.normal_vector(root.cols());
    const Eigen::VectorXd smooth = phi * eta;
    FieldSample f;
    f.points.assign(pts.begin(), pts.end());
    f.values.resize(n);
    f.seed = s;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto i = obs[static_cast<std::size_t>(j)];
      if (i < 0) {
        f.values[j] = smooth[j] + std::sqrt(s2z) * draw.normal();
      } else {
        // zeta_i | Z, eta ~ N(w (z_i - phi_i'eta), w sigma2_eps_i)
        const double e2 = std::pow(fitted.data_sigma_eps[i], 2);
        const double w = s2z / (s2z + e2);
        const double zi = fitted.data_resid[i] + phi_mu[j];
        f.values[j] = smooth[j] + w * (zi - smooth[j]) + std::sqrt(w * e2) * draw.normal();
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

double frk_implied_covariance(const FittedFRK& fitted, const SpaceTimePoint& a, const SpaceTimePoint& b) {
  // Fixed summation order so that f(a, b) == f(b, a) exactly.
  if (key_of(b) < key_of(a)) return frk_implied_covariance(fitted, b, a);
  const auto pa = fitted.basis.evaluate_sparse(a);
  const auto pb = fitted.basis.evaluate_sparse(b);
  double acc = 0.0;
  for (const auto& [i, u] : pa) {
    for (const auto& [j, v] : pb) {
      // Cross-resolution entries of K are zero.
      Eigen::Index off = 0;
      for (const auto& blk : fitted.K.blocks) {
        if (i >= off && i < off + blk.rows()) {
          if (j >= off && j < off + blk.rows()) acc += u * v * blk(i - off, j - off);
          break;
        }
        off += blk.rows();
      }
    }
  }
  if (a == b) acc += fitted.sigma2_zeta;
  return acc;
}

std::vector<double> implied_covariance_curve(const FittedFRK& fitted, std::span<const SpaceTimePoint> origins,
                                             std::span<const double> lags) {
  std::vector<double> out;
  for (double h : lags) {
    double acc = 0.0;
    for (const auto& o : origins) {
      SpaceTimePoint p = o;
      if (o.loc.frame == Frame::Planar) {
        p.loc.x += h;
      } else {
        const double dlon = h / (kEarthRadiusKm * std::cos(o.loc.lat() * std::numbers::pi / 180.0)) * 180.0 /
                            std::numbers::pi;
        double lon = o.loc.lon() + dlon;
        lon = std::fmod(lon + 540.0, 360.0) - 180.0;
        p.loc = Location::sphere(lon, o.loc.lat());
      }
      acc += frk_implied_covariance(fitted, o, p);
    }
    out.push_back(origins.empty() ? 0.0 : acc / static_cast<double>(origins.size()));
  }
  return out;
}

ExactRecoveryBasis::ExactRecoveryBasis(std::vector<SpaceTimePoint> locations, CovarianceFunction cov,
                                       double sigma2_eps)
    : locations_(std::move(locations)), cov_(cov) {
  if (locations_.empty()) throw InvalidArgumentError("exact recovery needs data locations");
  if (sigma2_eps < 0.0) throw InvalidArgumentError("sigma2_eps must be non-negative");
  cov_.validate();
  K_ = covariance_matrix(cov_, locations_);
  K_.diagonal().array() += sigma2_eps;
  llt_.compute(K_);
  if (llt_.info() != Eigen::Success) throw ConditioningError("C + sigma2_eps I is not positive definite");
}

Eigen::MatrixXd ExactRecoveryBasis::evaluate(std::span<const SpaceTimePoint> pts) const {
  return llt_.solve(covariance_matrix(cov_, locations_, pts)).transpose();
}

PredictionResult ExactRecoveryBasis::predict(const Eigen::VectorXd& z, std::span<const SpaceTimePoint> pts) const {
  if (z.size() != static_cast<Eigen::Index>(locations_.size())) throw InvalidArgumentError("z has wrong length");
  const Eigen::MatrixXd phi = evaluate(pts);
  PredictionResult r;
  r.points.assign(pts.begin(), pts.end());
  r.pred = phi * z;
  const Eigen::MatrixXd pk = phi * K_;
  r.se_process = (pk.array() * phi.array()).rowwise().sum().max(0.0).sqrt().matrix();
  r.se_observation = r.se_process;
  r.prior_only.assign(pts.size(), 0);
  return r;
}

ExactRecoveryBasis exact_recovery_basis(std::vector<SpaceTimePoint> locations, const CovarianceFunction& cov,
                                        double sigma2_eps) {
  return ExactRecoveryBasis(std::move(locations), cov, sigma2_eps);
}

}  // namespace gapfill
