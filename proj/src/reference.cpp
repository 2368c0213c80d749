#include "gapfill/reference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gapfill/errors.hpp"

namespace gapfill {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(trim(f));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double number(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw IoError("bad number '" + s + "'", line);
  }
}

/// Reads a header-validated table; returns rows reordered to `columns`.
std::vector<std::vector<std::string>> read_table(std::istream& is, const std::vector<std::string>& columns,
                                                 std::vector<std::size_t>& lines) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty table", 1);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split(line);
  std::vector<std::size_t> idx;
  for (const auto& c : columns) {
    const auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw IoError("header lacks column '" + c + "'", 1);
    idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw IoError("wrong field count", lineno);
    std::vector<std::string> row;
    for (auto k : idx) row.push_back(f[k]);
    rows.push_back(std::move(row));
    lines.push_back(lineno);
  }
  return rows;
}

double circular_hour_diff(double a, double b) {
  double d = std::fmod(a - b, 24.0);
  if (d > 12.0) d -= 24.0;
  if (d < -12.0) d += 24.0;
  return d;
}

}  // namespace

double local_solar_hour(double time_utc_days, double lon) {
  const double utc_hour = (time_utc_days - std::floor(time_utc_days)) * 24.0;
  double h = std::fmod(utc_hour + lon / 15.0, 24.0);
  if (h < 0.0) h += 24.0;
  return h;
}

ColocationResult reference_colocate(const std::vector<ReferenceRecord>& records,
                                    const std::map<std::string, StationInfo>& stations, double half_window_min) {
  if (!(half_window_min >= 0.0)) throw InvalidArgumentError("half window must be >= 0");
  struct Acc {
    double sz = 0.0, se = 0.0;
    int m = 0;
  };
  std::map<std::pair<std::string, DayNumber>, Acc> acc;
  ColocationResult out;
  const double half_h = half_window_min / 60.0;
  for (const auto& r : records) {
    const auto st = stations.find(r.station);
    if (st == stations.end()) {
      if (std::find(out.missing_stations.begin(), out.missing_stations.end(), r.station) == out.missing_stations.end()) {
        out.missing_stations.push_back(r.station);
      }
      continue;
    }
    const double diff = circular_hour_diff(local_solar_hour(r.time, st->second.lon), st->second.crossing_hour);
    // Tolerance absorbs the rounding of minutes expressed as fractional days.
    if (std::abs(diff) > half_h + 1e-9) continue;
    auto& a = acc[{r.station, static_cast<DayNumber>(std::floor(r.time))}];
    a.sz += r.xco2;
    a.se += r.xco2_se;
    ++a.m;
  }
  for (const auto& [key, a] : acc) {
    const auto& st = stations.at(key.first);
    out.rows.push_back({key.first, st.lon, st.lat, key.second, a.sz / a.m, a.se / a.m, a.m});
  }
  return out;
}

std::vector<ReportRow> validate_products(const std::vector<Level3Product>& products,
                                         const std::vector<ColocatedReference>& reference, double level,
                                         const std::vector<std::string>& exclude) {
  std::map<DayNumber, const Level3Product*> by_day;
  for (const auto& p : products) by_day[p.target_day] = &p;

  struct Match {
    std::string station;
    double pred, sigma, truth;
  };
  std::vector<Match> matches;
  for (const auto& r : reference) {
    const auto it = by_day.find(r.day);
    if (it == by_day.end()) continue;
    const auto* cell = it->second->find(r.lon, r.lat);
    if (!cell) continue;
    matches.push_back({r.station, cell->pred, std::sqrt(cell->se * cell->se + r.xco2_se * r.xco2_se), r.xco2});
  }
  if (matches.empty()) throw InvalidArgumentError("no product cell overlaps the reference data");

  auto report = [&](const std::string& label, auto keep) {
    std::vector<double> p, s, t;
    for (const auto& m : matches) {
      if (!keep(m)) continue;
      p.push_back(m.pred);
      s.push_back(m.sigma);
      t.push_back(m.truth);
    }
    auto vec = [](const std::vector<double>& v) {
      return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
    };
    return ReportRow{label, score(vec(p), vec(s), vec(t), level)};
  };

  std::vector<std::string> ids;
  for (const auto& m : matches) ids.push_back(m.station);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<ReportRow> rows;
  for (const auto& id : ids) rows.push_back(report(id, [&](const Match& m) { return m.station == id; }));
  rows.push_back(report("Total", [](const Match&) { return true; }));
  for (const auto& ex : exclude) {
    if (std::none_of(matches.begin(), matches.end(), [&](const Match& m) { return m.station != ex; })) continue;
    rows.push_back(report("Total (w/o " + ex + ")", [&](const Match& m) { return m.station != ex; }));
  }
  return rows;
}

std::vector<ReferenceRecord> read_reference(std::istream& is) {
  std::vector<std::size_t> lines;
  const auto rows = read_table(is, {"station_id", "time_utc", "lon", "lat", "xco2", "xco2_se"}, lines);
  std::vector<ReferenceRecord> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    ReferenceRecord r;
    r.station = f[0];
    try {
      r.time = parse_utc(f[1]);
    } catch (const InvalidArgumentError& e) {
      throw IoError(e.what(), lines[i]);
    }
    r.lon = number(f[2], lines[i]);
    r.lat = number(f[3], lines[i]);
    r.xco2 = number(f[4], lines[i]);
    r.xco2_se = number(f[5], lines[i]);
    if (r.xco2_se < 0.0) throw IoError("negative xco2_se", lines[i]);
    out.push_back(r);
  }
  return out;
}

std::map<std::string, StationInfo> read_stations(std::istream& is) {
  std::vector<std::size_t> lines;
  const auto rows = read_table(is, {"station_id", "lon", "lat", "crossing_local_time"}, lines);
  std::map<std::string, StationInfo> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    StationInfo s{f[0], number(f[1], lines[i]), number(f[2], lines[i]), 0.0};
    if (const auto c = f[3].find(':'); c != std::string::npos) {
      s.crossing_hour = number(f[3].substr(0, c), lines[i]) + number(f[3].substr(c + 1), lines[i]) / 60.0;
    } else {
      s.crossing_hour = number(f[3], lines[i]);
    }
    if (s.crossing_hour < 0.0 || s.crossing_hour >= 24.0) throw IoError("crossing time out of range", lines[i]);
    out[s.id] = s;
  }
  return out;
}

std::vector<ReferenceRecord> read_reference(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return read_reference(is);
}

std::map<std::string, StationInfo> read_stations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return read_stations(is);
}

}  // namespace gapfill
