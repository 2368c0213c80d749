#include "gapfill/basis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "gapfill/errors.hpp"

namespace gapfill {

double eval_bisquare(double d, double aperture) {
  if (!(aperture > 0.0)) throw InvalidArgumentError("bisquare aperture must be positive");
  if (d > aperture) return 0.0;
  const double u = d / aperture;
  const double v = 1.0 - u * u;
  return v * v;
}

double eval_bisquare(const Location& s, const Location& centre, double aperture) {
  return eval_bisquare(distance(s, centre), aperture);
}

BasisSet::BasisSet(Frame frame, std::vector<SpatialResolution> resolutions, std::optional<TemporalBasis> temporal,
                   double domain_diameter)
    : frame_(frame), res_(std::move(resolutions)), temporal_(std::move(temporal)), diameter_(domain_diameter) {
  if (res_.empty()) throw InvalidArgumentError("basis needs at least one resolution");
  if (temporal_ && (temporal_->centres.empty() || !(temporal_->aperture > 0.0))) {
    throw InvalidArgumentError("invalid temporal basis");
  }
  for (const auto& r : res_) {
    if (r.centres.empty() || !(r.aperture > 0.0)) throw InvalidArgumentError("invalid spatial resolution");
    for (const auto& c : r.centres) {
      if (c.frame != frame_) throw FrameMismatchError("basis centre in wrong frame");
    }
  }
  int off = 0;
  for (int q = 0; q < n_res(); ++q) {
    offsets_.push_back(off);
    off += count(q);
  }
  size_ = static_cast<std::size_t>(off);
}

int BasisSet::count(int q) const {
  return static_cast<int>(res_[static_cast<std::size_t>(q)].centres.size()) * n_temporal();
}

BasisFunction BasisSet::function(std::size_t i) const {
  if (i >= size_) throw InvalidArgumentError("basis index out of range");
  int q = n_res() - 1;
  while (offsets_[static_cast<std::size_t>(q)] > static_cast<int>(i)) --q;
  const int local = static_cast<int>(i) - offsets_[static_cast<std::size_t>(q)];
  const int nt = n_temporal();
  const auto& r = res_[static_cast<std::size_t>(q)];
  BasisFunction f;
  f.centre = r.centres[static_cast<std::size_t>(local / nt)];
  f.aperture = r.aperture;
  f.resolution = q + 1;
  if (temporal_) {
    f.t_centre = temporal_->centres[static_cast<std::size_t>(local % nt)];
    f.t_aperture = temporal_->aperture;
  }
  return f;
}

double BasisSet::evaluate(std::size_t i, const SpaceTimePoint& p) const {
  const auto f = function(i);
  double v = eval_bisquare(p.loc, f.centre, f.aperture);
  if (f.t_centre) v *= eval_bisquare(std::abs(p.t - *f.t_centre), f.t_aperture);
  return v;
}

std::vector<std::pair<int, double>> BasisSet::evaluate_sparse(const SpaceTimePoint& p) const {
  std::vector<std::pair<int, double>> temporal_vals;
  if (temporal_) {
    for (std::size_t k = 0; k < temporal_->centres.size(); ++k) {
      const double d = std::abs(p.t - temporal_->centres[k]);
      if (d < temporal_->aperture) temporal_vals.emplace_back(static_cast<int>(k), eval_bisquare(d, temporal_->aperture));
    }
    if (temporal_vals.empty()) return {};
  } else {
    temporal_vals.emplace_back(0, 1.0);
  }
  if (p.loc.frame != frame_) throw FrameMismatchError("evaluating basis at a point in the wrong frame");
  const int nt = n_temporal();
  std::vector<std::pair<int, double>> out;
  for (int q = 0; q < n_res(); ++q) {
    const auto& r = res_[static_cast<std::size_t>(q)];
    for (std::size_t i = 0; i < r.centres.size(); ++i) {
      const double d = distance(p.loc, r.centres[i]);
      if (d >= r.aperture) continue;
      const double s = eval_bisquare(d, r.aperture);
      for (const auto& [k, tv] : temporal_vals) {
        out.emplace_back(offsets_[static_cast<std::size_t>(q)] + static_cast<int>(i) * nt + k, s * tv);
      }
    }
  }
  return out;
}

SparseRowMatrix BasisSet::design_matrix(std::span<const SpaceTimePoint> pts) const {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    for (const auto& [i, v] : evaluate_sparse(pts[j])) trips.emplace_back(static_cast<int>(j), i, v);
  }
  SparseRowMatrix m(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(size_));
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

BasisSet build_basis_planar(const GridSpec& domain, const std::vector<std::pair<int, int>>& counts) {
  if (domain.frame != Frame::Planar) throw InvalidArgumentError("planar basis needs a planar domain");
  if (counts.empty()) throw InvalidArgumentError("n_res must be >= 1");
  std::vector<SpatialResolution> res;
  for (const auto& [n1, n2] : counts) {
    GridSpec g = domain;
    g.n1 = n1;
    g.n2 = n2;
    g.validate();
    res.push_back({make_grid(g), 1.5 * std::max(g.width1(), g.width2())});
  }
  const double diam = std::hypot(domain.hi1 - domain.lo1, domain.hi2 - domain.lo2);
  return BasisSet(Frame::Planar, std::move(res), std::nullopt, diam);
}

namespace {

std::vector<Vec3> icosphere_vertices(int level) {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                         {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto& p : v) {
    const double n = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    p = {p.x / n, p.y / n, p.z / n};
  }
  std::vector<std::array<int, 3>> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const Vec3 p{v[a].x + v[b].x, v[a].y + v[b].y, v[a].z + v[b].z};
      const double n = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
      v.push_back({p.x / n, p.y / n, p.z / n});
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }
  return v;
}

double chord2(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

double mean_nearest_distance(const std::vector<Location>& pts) {
  if (pts.size() < 2) return std::numbers::pi * kEarthRadiusKm;
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i != j) best = std::min(best, distance(pts[i], pts[j]));
    }
    sum += best;
  }
  return sum / static_cast<double>(pts.size());
}

}  // namespace

std::vector<Location> icosahedral_centroids(int count) {
  if (count < 1) throw InvalidArgumentError("centroid count must be >= 1");
  int level = 0;
  while (10 * (1L << (2 * level)) + 2 < count) ++level;
  const auto verts = icosphere_vertices(level);
  std::vector<std::size_t> chosen;
  if (static_cast<int>(verts.size()) == count) {
    for (std::size_t i = 0; i < verts.size(); ++i) chosen.push_back(i);
  } else {
    // Greedy farthest-point thinning from vertex 0; ties go to the lowest index.
    std::vector<double> best(verts.size(), std::numeric_limits<double>::infinity());
    std::size_t cur = 0;
    for (int k = 0; k < count; ++k) {
      chosen.push_back(cur);
      std::size_t next = 0;
      double far = -1.0;
      for (std::size_t i = 0; i < verts.size(); ++i) {
        best[i] = std::min(best[i], chord2(verts[i], verts[cur]));
        if (best[i] > far) {
          far = best[i];
          next = i;
        }
      }
      cur = next;
    }
  }
  std::vector<Location> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(from_unit_vector(verts[i]));
  return out;
}

BasisSet build_basis_sphere_time(const std::vector<int>& spatial_counts, double window, int n_temporal) {
  if (!(window > 0.0)) throw InvalidArgumentError("window must be positive");
  if (n_temporal < 1) throw InvalidArgumentError("need at least one temporal function");
  if (spatial_counts.empty()) throw InvalidArgumentError("n_res must be >= 1");
  std::vector<SpatialResolution> res;
  for (int c : spatial_counts) {
    auto centres = icosahedral_centroids(c);
    const double a = 1.5 * mean_nearest_distance(centres);
    res.push_back({std::move(centres), a});
  }
  TemporalBasis tb;
  const double spacing = window / n_temporal;
  for (int k = 0; k < n_temporal; ++k) tb.centres.push_back((k + 0.5) * spacing);
  tb.aperture = 1.5 * spacing;
  tb.window = window;
  return BasisSet(Frame::Sphere, std::move(res), tb, std::numbers::pi * kEarthRadiusKm);
}

}  // namespace gapfill
