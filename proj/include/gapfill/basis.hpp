#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "gapfill/geometry.hpp"

namespace gapfill {

/// Bisquare {1 - (d/A)^2}^2 for d <= A, 0 beyond.
double eval_bisquare(double d, double aperture);
double eval_bisquare(const Location& s, const Location& centre, double aperture);

struct SpatialResolution {
  std::vector<Location> centres;
  double aperture = 1.0;
};

/// Temporal bisquares shared by every spatial resolution (tensor-product basis).
struct TemporalBasis {
  std::vector<double> centres;
  double aperture = 1.0;
  double window = 1.0;  // length of the time axis the centres span
};

/// One function of a BasisSet, for inspection.
struct BasisFunction {
  Location centre;
  double aperture = 0.0;
  int resolution = 1;  // 1-based
  std::optional<double> t_centre;
  double t_aperture = 0.0;
};

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Multi-resolution bisquare basis, optionally crossed with temporal bisquares.
/// Functions are ordered by resolution; inside resolution q the function for
/// spatial centre i and temporal centre k has index offset(q) + i * n_t + k.
class BasisSet {
 public:
  BasisSet(Frame frame, std::vector<SpatialResolution> resolutions, std::optional<TemporalBasis> temporal,
           double domain_diameter);

  std::size_t size() const { return size_; }
  int n_res() const { return static_cast<int>(res_.size()); }
  /// Number of functions at resolution q (0-based).
  int count(int q) const;
  int offset(int q) const { return offsets_[static_cast<std::size_t>(q)]; }
  int n_temporal() const { return temporal_ ? static_cast<int>(temporal_->centres.size()) : 1; }
  Frame frame() const { return frame_; }
  double domain_diameter() const { return diameter_; }

  const std::vector<SpatialResolution>& resolutions() const { return res_; }
  const std::optional<TemporalBasis>& temporal() const { return temporal_; }

  BasisFunction function(std::size_t i) const;
  double evaluate(std::size_t i, const SpaceTimePoint& p) const;
  /// Non-zero (index, value) pairs at p, ascending by index.
  std::vector<std::pair<int, double>> evaluate_sparse(const SpaceTimePoint& p) const;
  SparseRowMatrix design_matrix(std::span<const SpaceTimePoint> pts) const;

 private:
  Frame frame_;
  std::vector<SpatialResolution> res_;
  std::optional<TemporalBasis> temporal_;
  double diameter_;
  std::vector<int> offsets_;
  std::size_t size_ = 0;
};

/// Regular lattices over a planar rectangle; `counts[q]` is (n1, n2) at
/// resolution q, centres follow the cell-centre convention and the aperture is
/// 1.5 times the larger lattice spacing.
BasisSet build_basis_planar(const GridSpec& domain, const std::vector<std::pair<int, int>>& counts);

/// `count` quasi-uniform centroids on the sphere: vertices of the coarsest
/// subdivided icosahedron with at least `count` vertices, thinned by greedy
/// farthest-point selection when the vertex count exceeds `count`.
std::vector<Location> icosahedral_centroids(int count);

/// Tensor product of spherical bisquares (one resolution per entry of
/// `spatial_counts`, aperture 1.5 x mean nearest-centroid distance) with
/// `n_temporal` bisquares centred at cell centres of [0, window] with aperture
/// 1.5 x spacing.
BasisSet build_basis_sphere_time(const std::vector<int>& spatial_counts, double window, int n_temporal);

}  // namespace gapfill
