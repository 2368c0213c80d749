#include "gapfill/dataset.hpp"

#include "gapfill/errors.hpp"

namespace gapfill {

void Dataset::validate() const {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (z.size() != n || sigma_eps.size() != n) {
    throw InvalidArgumentError("dataset vectors have inconsistent lengths");
  }
  if (mu_eps.size() != 0 && mu_eps.size() != n) throw InvalidArgumentError("mu_eps has wrong length");
  if ((sigma_eps.array() < 0.0).any()) throw InvalidArgumentError("sigma_eps must be non-negative");
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].loc.frame != points[0].loc.frame) throw FrameMismatchError("dataset mixes frames");
  }
}

Dataset Dataset::make(std::vector<SpaceTimePoint> pts, Eigen::VectorXd z, double sigma_eps) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(pts.size());
  d.points = std::move(pts);
  d.z = std::move(z);
  d.sigma_eps = Eigen::VectorXd::Constant(n, sigma_eps);
  d.validate();
  return d;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(idx.size());
  d.points.reserve(idx.size());
  d.z.resize(n);
  d.sigma_eps.resize(n);
  if (mu_eps.size() != 0) d.mu_eps.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = idx[static_cast<std::size_t>(k)];
    d.points.push_back(points[i]);
    d.z[k] = z[static_cast<Eigen::Index>(i)];
    d.sigma_eps[k] = sigma_eps[static_cast<Eigen::Index>(i)];
    if (mu_eps.size() != 0) d.mu_eps[k] = mu_eps[static_cast<Eigen::Index>(i)];
  }
  return d;
}

}  // namespace gapfill
