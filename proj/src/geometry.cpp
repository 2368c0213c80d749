#include "gapfill/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gapfill/errors.hpp"

namespace gapfill {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

Location Location::planar(double s1, double s2) {
  if (!std::isfinite(s1) || !std::isfinite(s2)) {
    throw InvalidArgumentError("planar coordinates must be finite");
  }
  return {Frame::Planar, s1, s2};
}

Location Location::sphere(double lon_deg, double lat_deg) {
  if (lon_deg == 180.0) lon_deg = -180.0;
  if (!(lon_deg >= -180.0 && lon_deg < 180.0) || !(lat_deg >= -90.0 && lat_deg <= 90.0)) {
    throw InvalidArgumentError("spherical coordinates out of range: lon " + std::to_string(lon_deg) +
                               ", lat " + std::to_string(lat_deg));
  }
  return {Frame::Sphere, lon_deg, lat_deg};
}

void GridSpec::validate() const {
  if (n1 < 1 || n2 < 1) throw InvalidArgumentError("grid counts must be >= 1");
  if (!(hi1 > lo1) || !(hi2 > lo2)) throw InvalidArgumentError("grid bounds are degenerate");
  if (frame == Frame::Sphere && (lo1 < -180.0 || hi1 > 180.0 || lo2 < -90.0 || hi2 > 90.0)) {
    throw InvalidArgumentError("spherical grid bounds out of range");
  }
}

GridSpec GridSpec::unit_square(int n1, int n2) { return {Frame::Planar, 0.0, 1.0, 0.0, 1.0, n1, n2}; }

GridSpec GridSpec::lon_lat(double deg) {
  const int n1 = static_cast<int>(std::lround(360.0 / deg));
  const int n2 = static_cast<int>(std::lround(180.0 / deg));
  return {Frame::Sphere, -180.0, 180.0, -90.0, 90.0, n1, n2};
}

double distance(const Location& a, const Location& b) {
  if (a.frame != b.frame) throw FrameMismatchError("distance between points in different frames");
  if (a.frame == Frame::Planar) return std::hypot(b.x - a.x, b.y - a.y);
  // Haversine form; stable for small separations.
  const double phi1 = a.y * kDeg, phi2 = b.y * kDeg;
  const double dphi = phi2 - phi1;
  const double dlam = (b.x - a.x) * kDeg;
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlam / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

std::vector<Location> make_grid(const GridSpec& spec) {
  spec.validate();
  std::vector<Location> out;
  out.reserve(spec.size());
  const double w1 = spec.width1(), w2 = spec.width2();
  for (int j = 0; j < spec.n2; ++j) {
    const double c2 = spec.lo2 + (j + 0.5) * w2;
    for (int i = 0; i < spec.n1; ++i) {
      const double c1 = spec.lo1 + (i + 0.5) * w1;
      out.push_back(spec.frame == Frame::Planar ? Location::planar(c1, c2) : Location::sphere(c1, c2));
    }
  }
  return out;
}

std::int64_t bin_index(double t, double origin, double width) {
  if (!(width > 0.0)) throw InvalidArgumentError("bin width must be positive");
  return static_cast<std::int64_t>(std::floor((t - origin) / width));
}

Vec3 to_unit_vector(double lon_deg, double lat_deg) {
  const double lam = lon_deg * kDeg, phi = lat_deg * kDeg;
  return {std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi)};
}

Location from_unit_vector(const Vec3& v) {
  const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  double lat = std::asin(std::clamp(v.z / n, -1.0, 1.0)) / kDeg;
  double lon = std::atan2(v.y, v.x) / kDeg;
  if (lon >= 180.0) lon -= 360.0;
  if (lon < -180.0) lon += 360.0;
  return Location::sphere(lon, lat);
}

}  // namespace gapfill
