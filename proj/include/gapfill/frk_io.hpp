#pragma once

#include <filesystem>
#include <iosfwd>

#include "gapfill/frk.hpp"

namespace gapfill {

/// Fitted-model container, version 1. Little-endian binary:
///
///   "GFRK" | u32 version | u32 record count | records...
///   record: u16 name length | name | u8 type (0 = f64, 1 = i64) |
///           u8 rank | u64 dims[rank] | payload (row-major)
///
/// Records are written in this order; readers look them up by name:
///   frame, domain_diameter, n_res, spatial.<q>.centres (r_q x 2),
///   spatial.<q>.aperture, [temporal.centres, temporal.aperture,
///   temporal.window], K.<q>, sigma2_zeta, [params.theta1, params.theta2,
///   params.theta3], post_mean, post_cov, data.points (m x 3), data.sigma_eps,
///   data.resid, fit.loglik, fit.iterations, fit.converged.
///
/// All reals are stored as raw IEEE-754 doubles, so a round trip is bit-exact.
constexpr std::uint32_t kFrkFormatVersion = 1;

void write_frk(std::ostream& os, const FittedFRK& fitted);
FittedFRK read_frk(std::istream& is);

void save_frk(const std::filesystem::path& path, const FittedFRK& fitted);
FittedFRK load_frk(const std::filesystem::path& path);

}  // namespace gapfill
