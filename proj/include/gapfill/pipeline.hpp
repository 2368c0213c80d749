#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gapfill/frk.hpp"

namespace gapfill {

/// Days since 1970-01-01 (UTC); the fractional part is the time of day.
using DayNumber = std::int64_t;

/// Parses "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM[:SS[.fff]][Z]" into fractional days.
double parse_utc(const std::string& text);
DayNumber parse_date(const std::string& text);
std::string format_date(DayNumber day);

enum class ObservationMode { LandNadir, LandGlint, OceanGlint, Target };
ObservationMode parse_mode(const std::string& token);
const char* mode_name(ObservationMode mode);

enum class FilterPolicy { V7, V8 };
FilterPolicy parse_policy(const std::string& token);

/// One Level-2 retrieval. Numeric fields missing in the input are NaN.
struct RetrievalRecord {
  double time = 0.0;  // fractional days since epoch
  double lon = 0.0;
  double lat = 0.0;
  double xco2 = 0.0;
  double xco2_se = 0.0;
  int quality_flag = 0;
  int warn_level = 0;
  ObservationMode mode = ObservationMode::LandNadir;
  std::size_t line = 0;  // 1-based source line, 0 when synthetic

  DayNumber day() const;
  bool complete() const;
};

struct ReadReport {
  std::vector<RetrievalRecord> records;
  std::vector<std::string> skipped;  // "line N: reason" for malformed rows
};

/// Reads the delimited retrieval format. The header must contain the columns
/// time_utc, lon, lat, xco2, xco2_se, quality_flag, warn_level, mode (any
/// order). Empty or NA numeric fields become NaN. Malformed rows throw IoError
/// when `strict`, otherwise they are skipped and listed.
ReadReport read_retrievals(std::istream& is, bool strict = true, char delim = ',');
ReadReport read_retrievals(const std::filesystem::path& path, bool strict = true);
void write_retrievals(std::ostream& os, const std::vector<RetrievalRecord>& records);

/// Drops target-mode and incomplete rows and applies the quality policy.
/// V7 removes rows with (warn_level >= 15 and quality_flag == 1) or
/// xco2_se > 3 ppm; V8 keeps exactly the rows with quality_flag == 0.
/// Surviving SEs are raised to `se_floor`.
std::vector<RetrievalRecord> filter_records(const std::vector<RetrievalRecord>& records, FilterPolicy policy,
                                            double se_floor);

/// One 1 x 1 degree x 1 day cell. Bands follow lon in [-180, 180) and
/// lat in [-90, 90]; lat = 90 falls in the top band.
struct AggregatedCell {
  int lon_band = 0;  // 0..359
  int lat_band = 0;  // 0..179
  DayNumber day = 0;
  double z = 0.0;
  double sigma_eps = 0.0;
  int m = 0;

  double lon_center() const { return -180.0 + lon_band + 0.5; }
  double lat_center() const { return -90.0 + lat_band + 0.5; }
};

int lon_band_of(double lon);
int lat_band_of(double lat);

/// Cell means of xco2 and xco2_se, ordered by (day, lat_band, lon_band).
std::vector<AggregatedCell> aggregate_to_grid(const std::vector<RetrievalRecord>& records);

constexpr int kWindowBefore = 7;
constexpr int kWindowAfter = 8;
constexpr int kWindowDays = kWindowBefore + kWindowAfter + 1;

/// Cells with day in [target - 7, target + 8].
std::vector<AggregatedCell> window_select(const std::vector<AggregatedCell>& cells, DayNumber target);

/// True when the target day has data, or the window has data both strictly
/// before and strictly after it.
bool should_predict(const std::vector<AggregatedCell>& window, DayNumber target);

struct LatitudeBounds {
  double lo = 0.0;
  double hi = 0.0;
  bool from_window = false;  // target day was empty

  bool contains(double lat) const { return lat >= lo && lat <= hi; }
};

/// Extremes of the cell-centre latitudes on the target day, falling back to
/// the whole window when the target day has no cells.
LatitudeBounds latitude_bounds(const std::vector<AggregatedCell>& window, DayNumber target);

struct PipelineConfig {
  FilterPolicy policy = FilterPolicy::V8;
  double se_floor = 2.0;
  std::vector<int> spatial_counts{42, 114, 240};
  int n_temporal = 8;
  double em_tol = 1e-6;
  int em_max_iter = 200;
  bool warm_start = true;
  bool strict = true;
  int threads = 1;
  std::uint64_t seed = 0;
  std::optional<DayNumber> first_day;  // defaults to the first day with data
  std::optional<DayNumber> last_day;   // defaults to the last day with data
  // Prediction domain, in degrees; cells are predicted when their centre lies
  // inside it and inside the day's latitude bounds.
  double lon_min = -180.0, lon_max = 180.0;
  double lat_min = -90.0, lat_max = 90.0;

  void validate() const;
  int basis_size() const;
};

/// Reads "key = value" lines ('#' starts a comment). Unknown keys are errors.
PipelineConfig read_config(std::istream& is, PipelineConfig base = {});
PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig base = {});

struct ProductCell {
  int lon_band = 0;
  int lat_band = 0;
  double pred = 0.0;  // ppm
  double se = 0.0;    // ppm, process space
  int n_obs = 0;      // retrievals in the cell on the target day

  double lon_center() const { return -180.0 + lon_band + 0.5; }
  double lat_center() const { return -90.0 + lat_band + 0.5; }
};

struct Level3Product {
  DayNumber target_day = 0;
  DayNumber window_first = 0;
  DayNumber window_last = 0;
  LatitudeBounds bounds;
  std::vector<ProductCell> cells;  // ordered by (lat_band, lon_band)

  double offset = 0.0;  // window mean removed before fitting
  FRKParams params;
  int em_iterations = 0;
  bool em_converged = false;
  double loglik = 0.0;
  std::size_t n_window_cells = 0;
  std::size_t n_target_cells = 0;
  std::size_t n_basis = 0;
  std::uint64_t seed = 0;

  /// Cell containing (lon, lat), if predicted.
  const ProductCell* find(double lon, double lat) const;
};

enum class SkipReason { NoData, GapRule, EmDivergence, NoCellsInDomain };
const char* skip_reason_code(SkipReason reason);

struct SkippedDay {
  DayNumber day = 0;
  SkipReason reason = SkipReason::NoData;
  std::string detail;
};

struct PipelineResult {
  std::vector<Level3Product> products;  // ascending by target day
  std::vector<SkippedDay> skipped;
  std::size_t n_records_in = 0;
  std::size_t n_records_kept = 0;
  std::size_t n_cells = 0;
};

/// Fits the moving-window model for one target day. Cell times inside the
/// window are (day - window_first) + 0.5, so the target sits at t = 7.5.
/// Returns nullopt if the gap rule fails or no domain cell is in bounds.
std::optional<Level3Product> process_day(const std::vector<AggregatedCell>& cells, DayNumber target,
                                         const PipelineConfig& config, const std::optional<FRKParams>& warm = {},
                                         SkipReason* reason = nullptr);

using ProductSink = std::function<void(const Level3Product&)>;

/// Runs filter, aggregate and the per-day fits over [first_day, last_day].
/// Days run in parallel across `config.threads` when warm starts are off.
PipelineResult run_pipeline(const std::vector<RetrievalRecord>& records, const PipelineConfig& config,
                            const ProductSink& sink = {});
PipelineResult run_pipeline(const std::vector<std::filesystem::path>& inputs, const PipelineConfig& config,
                            const ProductSink& sink = {});

void write_product_csv(std::ostream& os, const Level3Product& product);
void write_product_metadata(std::ostream& os, const Level3Product& product, const PipelineConfig& config);

/// Writes L3_<date>.csv and L3_<date>.json into `dir`, each through a
/// temporary file and a rename.
void write_product(const std::filesystem::path& dir, const Level3Product& product, const PipelineConfig& config);
std::string product_stem(DayNumber day);

/// Reads a product written by write_product (CSV plus sidecar).
Level3Product read_product(const std::filesystem::path& csv_path);

void write_skip_log(std::ostream& os, const std::vector<SkippedDay>& skipped);

extern const char* const kToolVersion;

}  // namespace gapfill
