#include "gapfill/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gapfill/errors.hpp"

namespace gapfill {

const char* const kToolVersion = "gapfill 1.0.0";

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool missing_token(const std::string& s) {
  const auto l = lower(s);
  return l.empty() || l == "na" || l == "nan" || l == "null";
}

double to_double(const std::string& s, const char* what) {
  if (missing_token(s)) return kNaN;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw InvalidArgumentError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

int to_int(const std::string& s, const char* what, bool& missing) {
  missing = missing_token(s);
  if (missing) return 0;
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw InvalidArgumentError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

DayNumber civil_to_days(int y, unsigned m, unsigned d) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw InvalidArgumentError("invalid calendar date");
  return sys_days{ymd}.time_since_epoch().count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

double parse_utc(const std::string& text) {
  const auto s = trim(text);
  int y = 0;
  unsigned mo = 0, d = 0;
  int hh = 0, mm = 0;
  double ss = 0.0;
  int used = 0;
  if (std::sscanf(s.c_str(), "%d-%u-%u%n", &y, &mo, &d, &used) != 3 || used != 10) {
    throw InvalidArgumentError("bad time '" + s + "'");
  }
  double frac = 0.0;
  if (s.size() > 10) {
    if (s[10] != 'T' && s[10] != ' ') throw InvalidArgumentError("bad time '" + s + "'");
    std::string rest = s.substr(11);
    if (!rest.empty() && (rest.back() == 'Z' || rest.back() == 'z')) rest.pop_back();
    int n = 0;
    const int got = std::sscanf(rest.c_str(), "%d:%d%n", &hh, &mm, &n);
    if (got != 2) throw InvalidArgumentError("bad time '" + s + "'");
    if (static_cast<std::size_t>(n) < rest.size()) {
      if (rest[static_cast<std::size_t>(n)] != ':') throw InvalidArgumentError("bad time '" + s + "'");
      ss = to_double(rest.substr(static_cast<std::size_t>(n) + 1), "seconds");
    }
    if (hh < 0 || hh > 23 || mm < 0 || mm > 59 || !(ss >= 0.0 && ss < 61.0)) {
      throw InvalidArgumentError("bad time '" + s + "'");
    }
    frac = (hh * 3600.0 + mm * 60.0 + ss) / 86400.0;
  }
  return static_cast<double>(civil_to_days(y, mo, d)) + frac;
}

DayNumber parse_date(const std::string& text) {
  return static_cast<DayNumber>(std::floor(parse_utc(text)));
}

std::string format_date(DayNumber day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

ObservationMode parse_mode(const std::string& token) {
  auto t = lower(trim(token));
  std::replace(t.begin(), t.end(), '_', '-');
  if (t == "land-nadir" || t == "ln") return ObservationMode::LandNadir;
  if (t == "land-glint" || t == "lg") return ObservationMode::LandGlint;
  if (t == "ocean-glint" || t == "og") return ObservationMode::OceanGlint;
  if (t == "target" || t == "tg") return ObservationMode::Target;
  throw InvalidArgumentError("unknown observation mode '" + token + "'");
}

const char* mode_name(ObservationMode mode) {
  switch (mode) {
    case ObservationMode::LandNadir: return "land-nadir";
    case ObservationMode::LandGlint: return "land-glint";
    case ObservationMode::OceanGlint: return "ocean-glint";
    case ObservationMode::Target: return "target";
  }
  return "?";
}

FilterPolicy parse_policy(const std::string& token) {
  const auto t = lower(trim(token));
  if (t == "v7") return FilterPolicy::V7;
  if (t == "v8") return FilterPolicy::V8;
  throw InvalidArgumentError("policy must be v7 or v8, got '" + token + "'");
}

DayNumber RetrievalRecord::day() const { return static_cast<DayNumber>(std::floor(time)); }

bool RetrievalRecord::complete() const {
  return std::isfinite(time) && std::isfinite(lon) && std::isfinite(lat) && std::isfinite(xco2) &&
         std::isfinite(xco2_se) && quality_flag >= 0 && warn_level >= 0;
}

ReadReport read_retrievals(std::istream& is, bool strict, char delim) {
  static const char* const kColumns[] = {"time_utc", "lon", "lat", "xco2", "xco2_se", "quality_flag", "warn_level",
                                         "mode"};
  ReadReport out;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw IoError("retrieval file is empty", 1);
  ++lineno;
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split(line, delim);
  int col[8];
  for (int k = 0; k < 8; ++k) {
    const auto it = std::find_if(header.begin(), header.end(), [&](const std::string& h) { return lower(h) == kColumns[k]; });
    if (it == header.end()) throw IoError(std::string("header lacks column '") + kColumns[k] + "'", 1);
    col[k] = static_cast<int>(it - header.begin());
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto f = split(line, delim);
      if (f.size() != header.size()) {
        throw InvalidArgumentError("expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(f.size()));
      }
      RetrievalRecord r;
      r.line = lineno;
      r.time = missing_token(f[static_cast<std::size_t>(col[0])]) ? kNaN : parse_utc(f[static_cast<std::size_t>(col[0])]);
      r.lon = to_double(f[static_cast<std::size_t>(col[1])], "lon");
      r.lat = to_double(f[static_cast<std::size_t>(col[2])], "lat");
      r.xco2 = to_double(f[static_cast<std::size_t>(col[3])], "xco2");
      r.xco2_se = to_double(f[static_cast<std::size_t>(col[4])], "xco2_se");
      bool miss = false;
      r.quality_flag = to_int(f[static_cast<std::size_t>(col[5])], "quality_flag", miss);
      if (miss) r.quality_flag = -1;
      r.warn_level = to_int(f[static_cast<std::size_t>(col[6])], "warn_level", miss);
      if (miss) r.warn_level = -1;
      r.mode = parse_mode(f[static_cast<std::size_t>(col[7])]);
      if (std::isfinite(r.lon) && (r.lon < -180.0 || r.lon > 180.0)) throw InvalidArgumentError("lon out of range");
      if (std::isfinite(r.lat) && (r.lat < -90.0 || r.lat > 90.0)) throw InvalidArgumentError("lat out of range");
      if (std::isfinite(r.xco2_se) && r.xco2_se < 0.0) throw InvalidArgumentError("negative xco2_se");
      out.records.push_back(r);
    } catch (const InvalidArgumentError& e) {
      if (strict) throw IoError(e.what(), lineno);
      out.skipped.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

ReadReport read_retrievals(const std::filesystem::path& path, bool strict) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_retrievals(is, strict);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.message(), e.line());
  }
}

void write_retrievals(std::ostream& os, const std::vector<RetrievalRecord>& records) {
  os << "time_utc,lon,lat,xco2,xco2_se,quality_flag,warn_level,mode\n";
  for (const auto& r : records) {
    const auto day = r.day();
    const double secs = std::round((r.time - static_cast<double>(day)) * 86400.0);
    const int s = std::min(static_cast<int>(secs), 86399);
    char t[32];
    std::snprintf(t, sizeof t, "T%02d:%02d:%02dZ", s / 3600, (s / 60) % 60, s % 60);
    os << format_date(day) << t << ',' << fmt("%.6f", r.lon) << ',' << fmt("%.6f", r.lat) << ','
       << fmt("%.4f", r.xco2) << ',' << fmt("%.4f", r.xco2_se) << ',' << r.quality_flag << ',' << r.warn_level << ','
       << mode_name(r.mode) << '\n';
  }
}

std::vector<RetrievalRecord> filter_records(const std::vector<RetrievalRecord>& records, FilterPolicy policy,
                                            double se_floor) {
  if (!(se_floor >= 0.0)) throw InvalidArgumentError("se_floor must be >= 0");
  std::vector<RetrievalRecord> out;
  for (const auto& r : records) {
    if (!r.complete() || r.mode == ObservationMode::Target) continue;
    if (policy == FilterPolicy::V7) {
      if ((r.warn_level >= 15 && r.quality_flag == 1) || r.xco2_se > 3.0) continue;
    } else if (r.quality_flag != 0) {
      continue;
    }
    auto kept = r;
    kept.xco2_se = std::max(kept.xco2_se, se_floor);
    out.push_back(kept);
  }
  return out;
}

int lon_band_of(double lon) {
  const int b = static_cast<int>(std::floor(lon + 180.0));
  return ((b % 360) + 360) % 360;
}

int lat_band_of(double lat) { return std::clamp(static_cast<int>(std::floor(lat + 90.0)), 0, 179); }

std::vector<AggregatedCell> aggregate_to_grid(const std::vector<RetrievalRecord>& records) {
  struct Acc {
    double sz = 0.0;
    double se = 0.0;
    int m = 0;
  };
  std::map<std::tuple<DayNumber, int, int>, Acc> acc;
  for (const auto& r : records) {
    auto& a = acc[{r.day(), lat_band_of(r.lat), lon_band_of(r.lon)}];
    a.sz += r.xco2;
    a.se += r.xco2_se;
    ++a.m;
  }
  std::vector<AggregatedCell> out;
  out.reserve(acc.size());
  for (const auto& [key, a] : acc) {
    AggregatedCell c;
    c.day = std::get<0>(key);
    c.lat_band = std::get<1>(key);
    c.lon_band = std::get<2>(key);
    c.z = a.sz / a.m;
    c.sigma_eps = a.se / a.m;
    c.m = a.m;
    out.push_back(c);
  }
  return out;
}

std::vector<AggregatedCell> window_select(const std::vector<AggregatedCell>& cells, DayNumber target) {
  std::vector<AggregatedCell> out;
  for (const auto& c : cells) {
    if (c.day >= target - kWindowBefore && c.day <= target + kWindowAfter) out.push_back(c);
  }
  return out;
}

bool should_predict(const std::vector<AggregatedCell>& window, DayNumber target) {
  bool before = false, after = false;
  for (const auto& c : window) {
    if (c.day < target - kWindowBefore || c.day > target + kWindowAfter) continue;
    if (c.day == target) return true;
    before = before || c.day < target;
    after = after || c.day > target;
  }
  return before && after;
}

LatitudeBounds latitude_bounds(const std::vector<AggregatedCell>& window, DayNumber target) {
  LatitudeBounds b;
  b.lo = std::numeric_limits<double>::infinity();
  b.hi = -b.lo;
  for (const auto& c : window) {
    if (c.day != target) continue;
    b.lo = std::min(b.lo, c.lat_center());
    b.hi = std::max(b.hi, c.lat_center());
  }
  if (b.lo > b.hi) {
    b.from_window = true;
    for (const auto& c : window) {
      b.lo = std::min(b.lo, c.lat_center());
      b.hi = std::max(b.hi, c.lat_center());
    }
  }
  if (b.lo > b.hi) throw InvalidArgumentError("latitude bounds need at least one cell");
  return b;
}

void PipelineConfig::validate() const {
  if (!(se_floor >= 0.0)) throw InvalidArgumentError("se_floor must be >= 0");
  if (spatial_counts.empty()) throw InvalidArgumentError("spatial_counts must list at least one resolution");
  for (int c : spatial_counts) {
    if (c < 1 || c > 10242) throw InvalidArgumentError("spatial counts must lie in [1, 10242]");
  }
  if (n_temporal < 1) throw InvalidArgumentError("n_temporal must be >= 1");
  if (!(em_tol > 0.0)) throw InvalidArgumentError("em_tol must be positive");
  if (em_max_iter < 1) throw InvalidArgumentError("em_max_iter must be >= 1");
  if (threads < 1) throw InvalidArgumentError("threads must be >= 1");
  if (!(lon_min < lon_max) || lon_min < -180.0 || lon_max > 180.0) throw InvalidArgumentError("bad lon range");
  if (!(lat_min < lat_max) || lat_min < -90.0 || lat_max > 90.0) throw InvalidArgumentError("bad lat range");
  if (first_day && last_day && *first_day > *last_day) throw InvalidArgumentError("first_day after last_day");
}

int PipelineConfig::basis_size() const {
  return std::accumulate(spatial_counts.begin(), spatial_counts.end(), 0) * n_temporal;
}

PipelineConfig read_config(std::istream& is, PipelineConfig c) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("expected key = value", lineno);
    const auto key = lower(trim(line.substr(0, eq)));
    const auto val = trim(line.substr(eq + 1));
    try {
      auto boolean = [&] {
        const auto v = lower(val);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw InvalidArgumentError("expected a boolean");
      };
      auto integer = [&] {
        bool miss = false;
        const int v = to_int(val, key.c_str(), miss);
        if (miss) throw InvalidArgumentError("missing value");
        return v;
      };
      auto real = [&] {
        const double v = to_double(val, key.c_str());
        if (!std::isfinite(v)) throw InvalidArgumentError("missing value");
        return v;
      };
      if (key == "policy") c.policy = parse_policy(val);
      else if (key == "se_floor") c.se_floor = real();
      else if (key == "spatial_counts") {
        c.spatial_counts.clear();
        for (const auto& tok : split(val, ',')) {
          bool miss = false;
          c.spatial_counts.push_back(to_int(tok, "spatial_counts", miss));
          if (miss) throw InvalidArgumentError("empty entry");
        }
      } else if (key == "n_temporal") c.n_temporal = integer();
      else if (key == "em_tol") c.em_tol = real();
      else if (key == "em_max_iter") c.em_max_iter = integer();
      else if (key == "warm_start") c.warm_start = boolean();
      else if (key == "strict") c.strict = boolean();
      else if (key == "threads") c.threads = integer();
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "first_day") c.first_day = parse_date(val);
      else if (key == "last_day") c.last_day = parse_date(val);
      else if (key == "lon_min") c.lon_min = real();
      else if (key == "lon_max") c.lon_max = real();
      else if (key == "lat_min") c.lat_min = real();
      else if (key == "lat_max") c.lat_max = real();
      else throw InvalidArgumentError("unknown key");
    } catch (const std::logic_error& e) {
      throw IoError("config key '" + key + "': " + e.what(), lineno);
    } catch (const InvalidArgumentError& e) {
      throw IoError("config key '" + key + "': " + e.what(), lineno);
    }
  }
  c.validate();
  return c;
}

PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return read_config(is, std::move(base));
}

const ProductCell* Level3Product::find(double lon, double lat) const {
  const int lo = lon_band_of(lon);
  const int la = lat_band_of(lat);
  const auto it = std::lower_bound(cells.begin(), cells.end(), std::pair{la, lo}, [](const ProductCell& c, auto key) {
    return std::pair{c.lat_band, c.lon_band} < key;
  });
  if (it == cells.end() || it->lat_band != la || it->lon_band != lo) return nullptr;
  return &*it;
}

const char* skip_reason_code(SkipReason reason) {
  switch (reason) {
    case SkipReason::NoData: return "NO_DATA";
    case SkipReason::GapRule: return "GAP_RULE";
    case SkipReason::EmDivergence: return "EM_DIVERGENCE";
    case SkipReason::NoCellsInDomain: return "NO_CELLS_IN_DOMAIN";
  }
  return "?";
}

namespace {

// Drops spatial centres whose support misses every point; those functions are
// identically zero on the data and prediction sets.
BasisSet restrict_basis(const BasisSet& full, const std::vector<Location>& pts) {
  std::vector<SpatialResolution> res;
  for (const auto& r : full.resolutions()) {
    SpatialResolution kept{{}, r.aperture};
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r.centres.size(); ++i) {
      bool hit = false;
      for (const auto& p : pts) {
        const double d = distance(p, r.centres[i]);
        if (d < best) {
          best = d;
          nearest = i;
        }
        if (d < r.aperture) {
          hit = true;
          break;
        }
      }
      if (hit) kept.centres.push_back(r.centres[i]);
    }
    if (kept.centres.empty()) kept.centres.push_back(r.centres[nearest]);
    res.push_back(std::move(kept));
  }
  return BasisSet(full.frame(), std::move(res), full.temporal(), full.domain_diameter());
}

}  // namespace

std::optional<Level3Product> process_day(const std::vector<AggregatedCell>& cells, DayNumber target,
                                         const PipelineConfig& config, const std::optional<FRKParams>& warm,
                                         SkipReason* reason) {
  auto fail = [&](SkipReason r) {
    if (reason) *reason = r;
    return std::optional<Level3Product>{};
  };
  const auto window = window_select(cells, target);
  if (window.empty()) return fail(SkipReason::NoData);
  if (!should_predict(window, target)) return fail(SkipReason::GapRule);

  Level3Product p;
  p.target_day = target;
  p.window_first = target - kWindowBefore;
  p.window_last = target + kWindowAfter;
  p.bounds = latitude_bounds(window, target);
  p.n_window_cells = window.size();
  p.seed = config.seed;

  std::map<std::pair<int, int>, int> observed;
  for (const auto& c : window) {
    if (c.day == target) {
      observed[{c.lat_band, c.lon_band}] = c.m;
      ++p.n_target_cells;
    }
  }

  std::vector<SpaceTimePoint> pred_pts;
  const double t_target = static_cast<double>(target - p.window_first) + 0.5;
  for (int la = 0; la < 180; ++la) {
    const double lat = -90.0 + la + 0.5;
    if (lat < config.lat_min || lat > config.lat_max || !p.bounds.contains(lat)) continue;
    for (int lo = 0; lo < 360; ++lo) {
      const double lon = -180.0 + lo + 0.5;
      if (lon < config.lon_min || lon > config.lon_max) continue;
      p.cells.push_back({lo, la, 0.0, 0.0, 0});
      pred_pts.push_back({Location::sphere(lon, lat), t_target});
    }
  }
  if (p.cells.empty()) return fail(SkipReason::NoCellsInDomain);

  Dataset data;
  data.points.reserve(window.size());
  data.z.resize(static_cast<Eigen::Index>(window.size()));
  data.sigma_eps.resize(static_cast<Eigen::Index>(window.size()));
  double sum = 0.0;
  for (const auto& c : window) sum += c.z;
  p.offset = sum / static_cast<double>(window.size());
  std::vector<Location> support;
  for (std::size_t i = 0; i < window.size(); ++i) {
    const auto& c = window[i];
    const auto k = static_cast<Eigen::Index>(i);
    data.points.push_back({Location::sphere(c.lon_center(), c.lat_center()),
                           static_cast<double>(c.day - p.window_first) + 0.5});
    data.z(k) = c.z - p.offset;
    data.sigma_eps(k) = c.sigma_eps;
    support.push_back(data.points.back().loc);
  }
  for (const auto& q : pred_pts) support.push_back(q.loc);
  std::sort(support.begin(), support.end(), [](const Location& a, const Location& b) {
    return std::pair{a.x, a.y} < std::pair{b.x, b.y};
  });
  support.erase(std::unique(support.begin(), support.end()), support.end());

  const auto full = build_basis_sphere_time(config.spatial_counts, static_cast<double>(kWindowDays), config.n_temporal);
  const auto basis = restrict_basis(full, support);
  p.n_basis = basis.size();

  EmOptions opts;
  opts.mode = KMode::Structured;
  opts.tol = config.em_tol;
  opts.max_iter = config.em_max_iter;
  opts.init = warm;
  try {
    const auto fitted = fit_em(data, basis, opts);
    const auto res = frk_predict(fitted, pred_pts);
    for (std::size_t j = 0; j < p.cells.size(); ++j) {
      auto& cell = p.cells[j];
      cell.pred = res.pred(static_cast<Eigen::Index>(j)) + p.offset;
      cell.se = res.se_process(static_cast<Eigen::Index>(j));
      const auto it = observed.find({cell.lat_band, cell.lon_band});
      cell.n_obs = it == observed.end() ? 0 : it->second;
    }
    p.params = *fitted.params;
    p.em_iterations = fitted.iterations;
    p.em_converged = fitted.converged;
    p.loglik = fitted.loglik.back();
  } catch (const DivergenceError&) {
    return fail(SkipReason::EmDivergence);
  } catch (const ConditioningError&) {
    return fail(SkipReason::EmDivergence);
  }
  return p;
}

PipelineResult run_pipeline(const std::vector<RetrievalRecord>& records, const PipelineConfig& config,
                            const ProductSink& sink) {
  config.validate();
  PipelineResult out;
  out.n_records_in = records.size();
  const auto kept = filter_records(records, config.policy, config.se_floor);
  out.n_records_kept = kept.size();
  const auto cells = aggregate_to_grid(kept);
  out.n_cells = cells.size();
  if (cells.empty() && !(config.first_day && config.last_day)) return out;

  const DayNumber first = config.first_day.value_or(cells.empty() ? 0 : cells.front().day);
  const DayNumber last = config.last_day.value_or(cells.empty() ? -1 : cells.back().day);
  const auto n_days = static_cast<std::size_t>(std::max<DayNumber>(last - first + 1, 0));

  std::vector<std::optional<Level3Product>> products(n_days);
  std::vector<SkipReason> reasons(n_days, SkipReason::NoData);
  std::mutex sink_mutex;
  auto run_one = [&](std::size_t k, const std::optional<FRKParams>& warm) {
    const DayNumber day = first + static_cast<DayNumber>(k);
    products[k] = process_day(cells, day, config, warm, &reasons[k]);
    if (products[k] && sink) {
      const std::lock_guard lock(sink_mutex);
      sink(*products[k]);
    }
  };

  if (config.warm_start || config.threads == 1) {
    std::optional<FRKParams> warm;
    for (std::size_t k = 0; k < n_days; ++k) {
      run_one(k, config.warm_start ? warm : std::nullopt);
      if (products[k]) warm = products[k]->params;
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.threads));
    std::vector<std::thread> pool;
    for (int w = 0; w < config.threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = next++; k < n_days; k = next++) run_one(k, std::nullopt);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
          next = n_days;
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (std::size_t k = 0; k < n_days; ++k) {
    if (products[k]) {
      out.products.push_back(std::move(*products[k]));
    } else {
      out.skipped.push_back({first + static_cast<DayNumber>(k), reasons[k], {}});
    }
  }
  return out;
}

PipelineResult run_pipeline(const std::vector<std::filesystem::path>& inputs, const PipelineConfig& config,
                            const ProductSink& sink) {
  std::vector<RetrievalRecord> all;
  for (const auto& path : inputs) {
    auto rep = read_retrievals(path, config.strict);
    all.insert(all.end(), rep.records.begin(), rep.records.end());
  }
  return run_pipeline(all, config, sink);
}

void write_product_csv(std::ostream& os, const Level3Product& p) {
  os << "lon_center,lat_center,pred_ppm,se_ppm,n_obs_cell\n";
  for (const auto& c : p.cells) {
    os << fmt("%.1f", c.lon_center()) << ',' << fmt("%.1f", c.lat_center()) << ',' << fmt("%.6f", c.pred) << ','
       << fmt("%.6f", c.se) << ',' << c.n_obs << '\n';
  }
}

void write_product_metadata(std::ostream& os, const Level3Product& p, const PipelineConfig& config) {
  nlohmann::ordered_json j;
  j["target_day"] = format_date(p.target_day);
  j["window"] = {format_date(p.window_first), format_date(p.window_last)};
  j["lat_bounds"] = {{"lo", p.bounds.lo}, {"hi", p.bounds.hi}, {"from_window", p.bounds.from_window}};
  j["theta1"] = p.params.theta1;
  j["theta2_km"] = p.params.theta2;
  j["theta3_days"] = p.params.theta3;
  j["sigma2_zeta"] = p.params.sigma2_zeta;
  j["offset_ppm"] = p.offset;
  j["em_iterations"] = p.em_iterations;
  j["em_converged"] = p.em_converged;
  j["loglik"] = p.loglik;
  j["counts"] = {{"window_cells", p.n_window_cells},
                 {"target_day_cells", p.n_target_cells},
                 {"predicted_cells", p.cells.size()},
                 {"basis_functions", p.n_basis}};
  j["se_space"] = "process";
  j["policy"] = config.policy == FilterPolicy::V7 ? "v7" : "v8";
  j["se_floor_ppm"] = config.se_floor;
  j["spatial_counts"] = config.spatial_counts;
  j["n_temporal"] = config.n_temporal;
  j["seed"] = p.seed;
  j["tool_version"] = kToolVersion;
  os << j.dump(2) << '\n';
}

std::string product_stem(DayNumber day) {
  auto d = format_date(day);
  d.erase(std::remove(d.begin(), d.end(), '-'), d.end());
  return "L3_" + d;
}

namespace {

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    body(os);
    os.flush();
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_product(const std::filesystem::path& dir, const Level3Product& product, const PipelineConfig& config) {
  std::filesystem::create_directories(dir);
  const auto stem = product_stem(product.target_day);
  atomic_write(dir / (stem + ".csv"), [&](std::ostream& os) { write_product_csv(os, product); });
  atomic_write(dir / (stem + ".json"), [&](std::ostream& os) { write_product_metadata(os, product, config); });
}

Level3Product read_product(const std::filesystem::path& csv_path) {
  Level3Product p;
  auto meta_path = csv_path;
  meta_path.replace_extension(".json");
  std::ifstream mj(meta_path);
  if (!mj) throw IoError("cannot open " + meta_path.string());
  try {
    const auto j = nlohmann::json::parse(mj);
    p.target_day = parse_date(j.at("target_day").get<std::string>());
    p.window_first = parse_date(j.at("window").at(0).get<std::string>());
    p.window_last = parse_date(j.at("window").at(1).get<std::string>());
    p.bounds.lo = j.at("lat_bounds").at("lo").get<double>();
    p.bounds.hi = j.at("lat_bounds").at("hi").get<double>();
    p.bounds.from_window = j.at("lat_bounds").at("from_window").get<bool>();
    p.params.theta1 = j.at("theta1").get<std::vector<double>>();
    p.params.theta2 = j.at("theta2_km").get<std::vector<double>>();
    p.params.theta3 = j.at("theta3_days").get<std::vector<double>>();
    p.params.sigma2_zeta = j.at("sigma2_zeta").get<double>();
    p.offset = j.at("offset_ppm").get<double>();
    p.em_iterations = j.at("em_iterations").get<int>();
    p.em_converged = j.at("em_converged").get<bool>();
    p.loglik = j.at("loglik").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": " + e.what());
  }
  std::ifstream is(csv_path);
  if (!is) throw IoError("cannot open " + csv_path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || trim(line) != "lon_center,lat_center,pred_ppm,se_ppm,n_obs_cell") {
    throw IoError(csv_path.string() + ": unexpected product header", 1);
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto f = split(line, ',');
      if (f.size() != 5) throw InvalidArgumentError("expected 5 fields");
      ProductCell c;
      c.lon_band = lon_band_of(to_double(f[0], "lon_center"));
      c.lat_band = lat_band_of(to_double(f[1], "lat_center"));
      c.pred = to_double(f[2], "pred_ppm");
      c.se = to_double(f[3], "se_ppm");
      bool miss = false;
      c.n_obs = to_int(f[4], "n_obs_cell", miss);
      p.cells.push_back(c);
    } catch (const InvalidArgumentError& e) {
      throw IoError(csv_path.string() + ": " + e.what(), lineno);
    }
  }
  std::sort(p.cells.begin(), p.cells.end(), [](const ProductCell& a, const ProductCell& b) {
    return std::pair{a.lat_band, a.lon_band} < std::pair{b.lat_band, b.lon_band};
  });
  return p;
}

void write_skip_log(std::ostream& os, const std::vector<SkippedDay>& skipped) {
  os << "day,reason\n";
  for (const auto& s : skipped) os << format_date(s.day) << ',' << skip_reason_code(s.reason) << '\n';
}

}  // namespace gapfill
