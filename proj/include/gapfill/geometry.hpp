#pragma once

#include <cstdint>
#include <vector>

namespace gapfill {

enum class Frame { Planar, Sphere };

constexpr double kEarthRadiusKm = 6371.0;

/// A point in space. Planar coordinates are (s1, s2); spherical coordinates are
/// (lon, lat) in degrees with lon in [-180, 180) and lat in [-90, 90]; lon = 180
/// is accepted and stored as -180.
struct Location {
  Frame frame = Frame::Planar;
  double x = 0.0;
  double y = 0.0;

  static Location planar(double s1, double s2);
  static Location sphere(double lon_deg, double lat_deg);

  double lon() const { return x; }
  double lat() const { return y; }

  friend bool operator==(const Location&, const Location&) = default;
};

struct SpaceTimePoint {
  Location loc;
  double t = 0.0;

  friend bool operator==(const SpaceTimePoint&, const SpaceTimePoint&) = default;
};

/// Regular two-axis grid. Axis 1 is s1 (or lon), axis 2 is s2 (or lat).
struct GridSpec {
  Frame frame = Frame::Planar;
  double lo1 = 0.0, hi1 = 1.0;
  double lo2 = 0.0, hi2 = 1.0;
  int n1 = 1, n2 = 1;

  void validate() const;
  double width1() const { return (hi1 - lo1) / n1; }
  double width2() const { return (hi2 - lo2) / n2; }
  std::size_t size() const { return static_cast<std::size_t>(n1) * static_cast<std::size_t>(n2); }

  static GridSpec unit_square(int n1, int n2);
  /// Global lon-lat grid with cells of `deg` degrees.
  static GridSpec lon_lat(double deg);
};

/// Euclidean distance for Planar, great-circle distance in km for Sphere.
double distance(const Location& a, const Location& b);

/// Cell-centre points in row-major order (axis 1 varies fastest).
std::vector<Location> make_grid(const GridSpec& spec);

/// Half-open temporal bin index: floor((t - origin) / width).
std::int64_t bin_index(double t, double origin, double width);

/// Unit vector on the sphere for (lon, lat) in degrees.
struct Vec3 {
  double x, y, z;
};
Vec3 to_unit_vector(double lon_deg, double lat_deg);
Location from_unit_vector(const Vec3& v);

}  // namespace gapfill
