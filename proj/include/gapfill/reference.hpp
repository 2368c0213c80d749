#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "gapfill/diagnostics.hpp"
#include "gapfill/pipeline.hpp"

namespace gapfill {

/// One ground-based reference measurement.
struct ReferenceRecord {
  std::string station;
  double lon = 0.0;
  double lat = 0.0;
  double time = 0.0;  // fractional days since epoch (UTC)
  double xco2 = 0.0;
  double xco2_se = 0.0;
};

/// Station metadata. `crossing_hour` is the average local solar time of the
/// satellite overpass, in hours.
struct StationInfo {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  double crossing_hour = 13.5;
};

/// Station-day aggregate, using the same mean/mean rule as the grid cells.
struct ColocatedReference {
  std::string station;
  double lon = 0.0;
  double lat = 0.0;
  DayNumber day = 0;
  double xco2 = 0.0;
  double xco2_se = 0.0;
  int m = 0;
};

/// Local solar time in hours, UTC + lon / 15, wrapped to [0, 24).
double local_solar_hour(double time_utc_days, double lon);

struct ColocationResult {
  std::vector<ColocatedReference> rows;  // ordered by (station, day)
  std::vector<std::string> missing_stations;
};

/// Keeps records within +/- `half_window_min` minutes (inclusive) of the
/// station's crossing time and aggregates them per station and UTC day.
/// Records from stations without metadata are dropped and listed.
ColocationResult reference_colocate(const std::vector<ReferenceRecord>& records,
                                    const std::map<std::string, StationInfo>& stations,
                                    double half_window_min = 30.0);

/// Matches each colocated value to the product cell containing its station on
/// that day and scores prediction against reference with
/// sigma = sqrt(se_product^2 + se_reference^2). Rows: one per station (sorted),
/// then "Total", then "Total (w/o <id>)" for each entry of `exclude`.
/// Throws InvalidArgumentError when nothing overlaps.
std::vector<ReportRow> validate_products(const std::vector<Level3Product>& products,
                                         const std::vector<ColocatedReference>& reference, double level = 0.95,
                                         const std::vector<std::string>& exclude = {});

/// Delimited readers. Reference columns: station_id, time_utc, lon, lat, xco2,
/// xco2_se. Station columns: station_id, lon, lat, crossing_local_time
/// (decimal hours or HH:MM).
std::vector<ReferenceRecord> read_reference(std::istream& is);
std::vector<ReferenceRecord> read_reference(const std::filesystem::path& path);
std::map<std::string, StationInfo> read_stations(std::istream& is);
std::map<std::string, StationInfo> read_stations(const std::filesystem::path& path);

}  // namespace gapfill
