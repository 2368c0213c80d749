// End-to-end pipeline criteria on synthetic retrieval streams.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <Eigen/Cholesky>

#include "acceptance.hpp"
#include "gapfill/pipeline.hpp"
#include "gapfill/random.hpp"
#include "gapfill/reference.hpp"

using namespace gapfill;

namespace acceptance {
namespace {

namespace fs = std::filesystem;

constexpr int kLonLo = -25, kLonHi = 25, kLatLo = -15, kLatHi = 15;
constexpr int kDays = 30, kGapFirst = 10, kGapLast = 18;
constexpr double kMean = 405.0, kSigma2 = 2.0, kTauS = 1500.0, kTauT = 6.0;

bool has_data(int d) { return d < kGapFirst || d > kGapLast; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Separable exponential field at the cell centres of the box, one column per day.
struct Truth {
  int n_lon = kLonHi - kLonLo, n_lat = kLatHi - kLatLo;
  Eigen::MatrixXd y;  // (n_lat * n_lon) x kDays

  double at(double lon, double lat, int day) const {
    const int i = static_cast<int>(std::floor(lat)) - kLatLo, j = static_cast<int>(std::floor(lon)) - kLonLo;
    return y(i * n_lon + j, day);
  }
};

Truth simulate_truth(Rng& rng) {
  Truth t;
  std::vector<Location> cells;
  for (int i = 0; i < t.n_lat; ++i) {
    for (int j = 0; j < t.n_lon; ++j) cells.push_back(Location::sphere(kLonLo + j + 0.5, kLatLo + i + 0.5));
  }
  const auto n = static_cast<Eigen::Index>(cells.size());
  Eigen::MatrixXd cs(n, n), ct(kDays, kDays);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) cs(a, b) = std::exp(-distance(cells[a], cells[b]) / kTauS);
  }
  for (int a = 0; a < kDays; ++a) {
    for (int b = 0; b < kDays; ++b) ct(a, b) = std::exp(-std::abs(a - b) / kTauT);
  }
  const Eigen::MatrixXd ls = cs.llt().matrixL(), lt = ct.llt().matrixL();
  Eigen::MatrixXd w(n, kDays);
  for (auto& x : w.reshaped()) x = rng.normal();
  t.y = (kMean + (std::sqrt(kSigma2) * ls * w * lt.transpose()).array()).matrix();
  return t;
}

// Retrievals in a cell share one standardized error, so the cell mean has SD
// equal to the mean retrieval SE.
std::vector<RetrievalRecord> simulate_retrievals(const Truth& truth, DayNumber day0, Rng& rng) {
  std::vector<RetrievalRecord> out;
  for (int d = 0; d < kDays; ++d) {
    if (!has_data(d)) continue;
    std::set<std::pair<int, int>> used;
    while (used.size() < 200) {
      const int i = static_cast<int>(rng.uniform() * truth.n_lat), j = static_cast<int>(rng.uniform() * truth.n_lon);
      if (!used.insert({i, j}).second) continue;
      const double u = rng.normal();
      const int k = 1 + static_cast<int>(rng.uniform() * 4);
      for (int r = 0; r < k; ++r) {
        RetrievalRecord rec;
        rec.time = static_cast<double>(day0 + d) + rng.uniform(0.01, 0.99);
        rec.lon = kLonLo + j + rng.uniform(0.02, 0.98);
        rec.lat = kLatLo + i + rng.uniform(0.02, 0.98);
        rec.xco2_se = rng.uniform(0.6, 1.2);
        rec.xco2 = truth.at(rec.lon, rec.lat, d) + rec.xco2_se * u;
        out.push_back(rec);
      }
    }
    // Rows the filter must drop.
    for (int r = 0; r < 20; ++r) {
      RetrievalRecord rec = out.back();
      rec.xco2 += 50.0;
      if (r % 3 == 0) rec.quality_flag = 1;
      if (r % 3 == 1) rec.mode = ObservationMode::Target;
      if (r % 3 == 2) rec.xco2_se = std::numeric_limits<double>::quiet_NaN();
      out.push_back(rec);
    }
  }
  return out;
}

// Group-by oracle for filter plus aggregation.
std::vector<AggregatedCell> oracle_cells(const std::vector<RetrievalRecord>& records, double se_floor) {
  std::map<std::tuple<DayNumber, int, int>, std::tuple<double, double, int>> groups;
  for (const auto& r : records) {
    if (r.mode == ObservationMode::Target || r.quality_flag != 0) continue;
    if (!std::isfinite(r.xco2) || !std::isfinite(r.xco2_se) || !std::isfinite(r.lon) || !std::isfinite(r.lat)) continue;
    const auto day = static_cast<DayNumber>(std::floor(r.time));
    const int lon_band = static_cast<int>(std::floor(r.lon + 180.0));
    const int lat_band = std::min(static_cast<int>(std::floor(r.lat + 90.0)), 179);
    auto& [sz, se, m] = groups[{day, lat_band, lon_band}];
    sz += r.xco2;
    se += std::max(r.xco2_se, se_floor);
    ++m;
  }
  std::vector<AggregatedCell> out;
  for (const auto& [key, g] : groups) {
    const auto& [sz, se, m] = g;
    out.push_back({std::get<2>(key), std::get<1>(key), std::get<0>(key), sz / m, se / m, m});
  }
  return out;
}

bool same_cells(const std::vector<AggregatedCell>& a, const std::vector<AggregatedCell>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].day != b[k].day || a[k].lat_band != b[k].lat_band || a[k].lon_band != b[k].lon_band ||
        a[k].z != b[k].z || a[k].sigma_eps != b[k].sigma_eps || a[k].m != b[k].m) {
      return false;
    }
  }
  return true;
}

// Brute-force eligibility over every data pattern of a 16-day window.
bool gap_rule_exhaustive() {
  for (unsigned mask = 0; mask < (1u << kWindowDays); ++mask) {
    std::vector<AggregatedCell> window;
    for (int k = 0; k < kWindowDays; ++k) {
      if (mask >> k & 1u) window.push_back({0, 0, static_cast<DayNumber>(k - kWindowBefore), 0.0, 1.0, 1});
    }
    const bool on = mask >> kWindowBefore & 1u;
    const bool before = (mask & ((1u << kWindowBefore) - 1)) != 0;
    const bool after = (mask >> (kWindowBefore + 1)) != 0;
    if (should_predict(window, 0) != (on || (before && after))) return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

bool same_directory_bytes(const fs::path& a, const fs::path& b) {
  std::set<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.insert(e.path().filename().string());
  if (na != nb || na.empty()) return false;
  for (const auto& n : na) {
    if (slurp(a / n) != slurp(b / n)) return false;
  }
  return true;
}

PipelineResult run_into(const std::vector<RetrievalRecord>& records, const PipelineConfig& config, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return run_pipeline(records, config, [&](const Level3Product& p) { write_product(dir, p, config); });
}

}  // namespace

// Errors within one realization are strongly correlated, so coverage is pooled
// over independent truth fields.
Outcome synthetic_pipeline() {
  const DayNumber day0 = parse_date("2016-01-01");
  PipelineConfig config;
  config.se_floor = 0.5;
  config.spatial_counts = {42, 162, 642};
  config.lon_min = kLonLo;
  config.lon_max = kLonHi;
  config.lat_min = kLatLo;
  config.lat_max = kLatHi;
  config.first_day = day0;
  config.last_day = day0 + kDays - 1;

  std::set<int> expected;
  for (int t = 0; t < kDays; ++t) {
    bool before = false, after = false;
    for (int d = t - kWindowBefore; d < t; ++d) before = before || (d >= 0 && has_data(d));
    for (int d = t + 1; d <= t + kWindowAfter; ++d) after = after || (d < kDays && has_data(d));
    if (has_data(t) || (before && after)) expected.insert(t);
  }

  const fs::path root = fs::temp_directory_path() / "gapfill_acceptance";
  bool aggregation_ok = true, days_ok = gap_rule_exhaustive(), rerun_ok = true;
  std::size_t n_products = 0, matches = 0;
  double covered = 0.0, sq = 0.0;
  for (std::uint64_t rep = 0; rep < 4; ++rep) {
    Rng rng(100 + rep);
    const auto truth = simulate_truth(rng);
    const auto records = simulate_retrievals(truth, day0, rng);
    aggregation_ok = aggregation_ok && same_cells(aggregate_to_grid(filter_records(records, config.policy, config.se_floor)),
                                                  oracle_cells(records, config.se_floor));
    const auto result = run_into(records, config, root / "run1");
    if (rep == 0) {
      run_into(records, config, root / "run2");
      rerun_ok = same_directory_bytes(root / "run1", root / "run2");
    }
    std::set<int> emitted;
    for (const auto& p : result.products) emitted.insert(static_cast<int>(p.target_day - day0));
    days_ok = days_ok && expected == emitted;
    n_products += result.products.size();

    // Virtual stations at random positions, each reporting near its overpass time.
    std::map<std::string, StationInfo> stations;
    std::vector<ReferenceRecord> refs;
    for (int s = 0; s < 60; ++s) {
      StationInfo info;
      info.id = fmt("st%02d", s);
      info.lon = rng.uniform(kLonLo + 0.01, kLonHi - 0.01);
      info.lat = rng.uniform(kLatLo + 0.01, kLatHi - 0.01);
      stations[info.id] = info;
      for (int d = 0; d < kDays; ++d) {
        const double crossing = static_cast<double>(day0 + d) + (info.crossing_hour - info.lon / 15.0) / 24.0;
        const double y = truth.at(info.lon, info.lat, d) + 0.3 * rng.normal();
        for (double minutes : {-20.0, 0.0, 20.0}) {
          refs.push_back({info.id, info.lon, info.lat, crossing + minutes / 1440.0, y, 0.3});
        }
        refs.push_back({info.id, info.lon, info.lat, crossing + 45.0 / 1440.0, y + 40.0, 0.3});
      }
    }
    const auto coloc = reference_colocate(refs, stations);
    const auto& total = validate_products(result.products, coloc.rows, 0.95)[stations.size()].report;
    matches += total.N;
    covered += total.coverage * static_cast<double>(total.N);
    sq += total.RMSPE * total.RMSPE * static_cast<double>(total.N);
  }
  fs::remove_all(root);

  const double coverage = covered / static_cast<double>(matches);
  const bool coverage_ok = coverage >= 0.93 && coverage <= 0.97;
  return {aggregation_ok && rerun_ok && days_ok && coverage_ok,
          fmt("4 fields, %zu products, emitted days %s expected; aggregation %s group-by oracle; rerun %s; "
              "pooled coverage %.4f over %zu matches [0.95+-0.02], RMSPE %.3f",
              n_products, days_ok ? "match" : "DIFFER FROM", aggregation_ok ? "matches" : "DIFFERS FROM",
              rerun_ok ? "byte-identical" : "DIFFERS", coverage, matches, std::sqrt(sq / static_cast<double>(matches)))};
}

Outcome throughput() {
  Rng rng(10);
  const DayNumber day0 = parse_date("2016-06-01");
  std::vector<AggregatedCell> cells;
  for (int d = 0; d < kWindowDays; ++d) {
    std::set<std::pair<int, int>> used;
    while (used.size() < 1300) {
      const int lat = 25 + static_cast<int>(rng.uniform() * 130), lon = static_cast<int>(rng.uniform() * 360);
      if (!used.insert({lat, lon}).second) continue;
      const double lat_c = -90.0 + lat + 0.5, lon_c = -180.0 + lon + 0.5;
      const double signal = 2.0 * std::sin(lat_c / 20.0) + std::cos(lon_c / 30.0) + 0.05 * d;
      cells.push_back({lon, lat, day0 + d, 400.0 + signal + rng.normal(), 1.0 + rng.uniform(), 1});
    }
  }
  std::sort(cells.begin(), cells.end(), [](const AggregatedCell& a, const AggregatedCell& b) {
    return std::tie(a.day, a.lat_band, a.lon_band) < std::tie(b.day, b.lat_band, b.lon_band);
  });
  PipelineConfig config;
  const auto t0 = std::chrono::steady_clock::now();
  const auto product = process_day(cells, day0 + kWindowBefore, config);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!product) return {false, "target day was not processed"};
  const bool pass = config.basis_size() == 3168 && product->n_window_cells >= 20000 && secs <= 600.0;
  return {pass, fmt("basis %d (%zu retained), %zu window cells, %zu predicted cells, %d EM iterations, %.1f s [<=600]",
                    config.basis_size(), product->n_basis, product->n_window_cells, product->cells.size(),
                    product->em_iterations, secs)};
}

}  // namespace acceptance
