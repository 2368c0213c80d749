#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "gapfill/errors.hpp"
#include "gapfill/pipeline.hpp"

using namespace gapfill;

namespace {

RetrievalRecord rec(double time, double lon, double lat, double x, double se, int qf = 0, int warn = 0,
                    ObservationMode mode = ObservationMode::LandNadir) {
  RetrievalRecord r;
  r.time = time;
  r.lon = lon;
  r.lat = lat;
  r.xco2 = x;
  r.xco2_se = se;
  r.quality_flag = qf;
  r.warn_level = warn;
  r.mode = mode;
  return r;
}

AggregatedCell cell(DayNumber day, double lat, double lon = 0.5) {
  AggregatedCell c;
  c.day = day;
  c.lat_band = lat_band_of(lat);
  c.lon_band = lon_band_of(lon);
  c.z = 400.0;
  c.sigma_eps = 2.0;
  c.m = 1;
  return c;
}

bool same(const RetrievalRecord& a, const RetrievalRecord& b) {
  return a.time == b.time && a.lon == b.lon && a.lat == b.lat && a.xco2 == b.xco2 && a.xco2_se == b.xco2_se &&
         a.quality_flag == b.quality_flag && a.warn_level == b.warn_level && a.mode == b.mode;
}

std::vector<RetrievalRecord> random_records(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> t(19000.0, 19004.0), lon(-3.0, 3.0), lat(-2.0, 2.0), x(395.0, 410.0),
      se(0.5, 4.0);
  std::uniform_int_distribution<int> qf(0, 1), warn(0, 20), mode(0, 3);
  std::vector<RetrievalRecord> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(rec(t(rng), lon(rng), lat(rng), x(rng), se(rng), qf(rng), warn(rng),
                      static_cast<ObservationMode>(mode(rng))));
  }
  return out;
}

PipelineConfig small_config() {
  PipelineConfig c;
  c.spatial_counts = {12, 42};
  c.n_temporal = 2;
  c.lon_min = 0.0;
  c.lon_max = 6.0;
  c.lat_min = -4.0;
  c.lat_max = 4.0;
  c.em_max_iter = 30;
  return c;
}

// A handful of retrievals per day over a small box, days [d0, d0 + n).
std::vector<RetrievalRecord> box_records(DayNumber d0, int n_days, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lon(0.0, 6.0), lat(-3.0, 3.0), frac(0.0, 0.99);
  std::normal_distribution<double> nd;
  std::vector<RetrievalRecord> out;
  for (int d = 0; d < n_days; ++d) {
    for (int i = 0; i < 12; ++i) {
      const double la = lat(rng), lo = lon(rng);
      out.push_back(rec(static_cast<double>(d0 + d) + frac(rng), lo, la, 405.0 + 0.3 * la + nd(rng), 1.0));
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("dates and times") {
    CHECK(parse_date("1970-01-01") == 0);
    CHECK(parse_date("2015-06-01") == 16587);
    CHECK(format_date(16587) == "2015-06-01");
    CHECK(format_date(-1) == "1969-12-31");
    CHECK(parse_utc("2015-06-01T12:00:00Z") == 16587.5);
    CHECK(parse_utc("2015-06-01T06:00") == 16587.25);
    CHECK(parse_utc("2015-06-01") == 16587.0);
    CHECK_THROWS_AS(parse_date("2015-02-30"), InvalidArgumentError);
    CHECK_THROWS_AS(parse_utc("2015-06-01X12:00"), InvalidArgumentError);
    RetrievalRecord r;
    r.time = 16587.999;
    CHECK(r.day() == 16587);
  }

  TEST_CASE("mode and policy tokens") {
    CHECK(parse_mode("ocean-glint") == ObservationMode::OceanGlint);
    CHECK(std::string(mode_name(ObservationMode::Target)) == "target");
    CHECK(parse_policy("v7") == FilterPolicy::V7);
    CHECK(parse_policy("V8") == FilterPolicy::V8);
    CHECK_THROWS_AS(parse_mode("nadir"), InvalidArgumentError);
    CHECK_THROWS_AS(parse_policy("v9"), InvalidArgumentError);
  }

  TEST_CASE("filter policies") {
    const std::vector<RetrievalRecord> in{
        rec(1, 0, 0, 400, 1, 1, 15),                              // V7 drop
        rec(1, 0, 0, 400, 1, 1, 14),                              // V7 keep, V8 drop
        rec(1, 0, 0, 400, 3.5, 0, 0),                             // V7 drop (se), V8 keep
        rec(1, 0, 0, 400, 1.2, 0, 99),                            // V8 keep
        rec(1, 0, 0, 400, 1, 0, 0, ObservationMode::Target),      // always drop
        rec(1, 0, 0, std::numeric_limits<double>::quiet_NaN(), 1),  // incomplete
    };
    const auto v7 = filter_records(in, FilterPolicy::V7, 2.0);
    REQUIRE(v7.size() == 2);
    CHECK(v7[0].warn_level == 14);
    CHECK(v7[1].warn_level == 99);
    const auto v8 = filter_records(in, FilterPolicy::V8, 2.0);
    REQUIRE(v8.size() == 2);
    CHECK(v8[0].xco2_se == 3.5);
    CHECK(v8[1].xco2_se == 2.0);
    CHECK(v8[1].warn_level == 99);
    CHECK(filter_records(in, FilterPolicy::V8, 0.0)[1].xco2_se == 1.2);
    CHECK_THROWS_AS(filter_records(in, FilterPolicy::V8, -1.0), InvalidArgumentError);
  }

  TEST_CASE("filtering is idempotent and keeps a subset") {
    const auto in = random_records(2000, 7);
    for (auto policy : {FilterPolicy::V7, FilterPolicy::V8}) {
      const auto once = filter_records(in, policy, 2.0);
      const auto twice = filter_records(once, policy, 2.0);
      REQUIRE(once.size() == twice.size());
      for (std::size_t i = 0; i < once.size(); ++i) CHECK(same(once[i], twice[i]));
      std::size_t j = 0;
      for (const auto& r : once) {
        while (j < in.size() && !(in[j].time == r.time && in[j].xco2 == r.xco2)) ++j;
        REQUIRE(j < in.size());
        CHECK(r.xco2_se == std::max(in[j].xco2_se, 2.0));
        CHECK(r.mode != ObservationMode::Target);
        if (policy == FilterPolicy::V8) CHECK(r.quality_flag == 0);
      }
    }
  }

  TEST_CASE("band indices") {
    CHECK(lon_band_of(-180.0) == 0);
    CHECK(lon_band_of(179.999) == 359);
    CHECK(lon_band_of(180.0) == 0);
    CHECK(lon_band_of(0.5) == 180);
    CHECK(lat_band_of(-90.0) == 0);
    CHECK(lat_band_of(90.0) == 179);
    CHECK(lat_band_of(-0.2) == 89);
  }

  TEST_CASE("aggregation of a two-member cell") {
    const auto cells = aggregate_to_grid({rec(100.2, 10.3, 20.7, 400, 1), rec(100.9, 10.6, 20.1, 402, 3)});
    REQUIRE(cells.size() == 1);
    CHECK(cells[0].z == 401.0);
    CHECK(cells[0].sigma_eps == 2.0);
    CHECK(cells[0].m == 2);
    CHECK(cells[0].day == 100);
    CHECK(cells[0].lon_center() == 10.5);
    CHECK(cells[0].lat_center() == 20.5);

    const auto single = aggregate_to_grid({rec(5.5, -3.2, 4.4, 399.25, 0.75)});
    REQUIRE(single.size() == 1);
    CHECK(single[0].z == 399.25);
    CHECK(single[0].sigma_eps == 0.75);
  }

  TEST_CASE("aggregation matches a group-by oracle") {
    const auto in = random_records(1000, 8);
    std::map<std::tuple<DayNumber, int, int>, std::vector<const RetrievalRecord*>> groups;
    for (const auto& r : in) {
      const auto lo = static_cast<int>(std::floor(r.lon + 180.0));
      const auto la = static_cast<int>(std::floor(r.lat + 90.0));
      groups[{static_cast<DayNumber>(std::floor(r.time)), la, lo}].push_back(&r);
    }
    const auto cells = aggregate_to_grid(in);
    REQUIRE(cells.size() == groups.size());
    int total = 0;
    auto it = groups.begin();
    for (const auto& c : cells) {
      const auto& [key, members] = *it++;
      CHECK(c.day == std::get<0>(key));
      CHECK(c.lat_band == std::get<1>(key));
      CHECK(c.lon_band == std::get<2>(key));
      double sz = 0.0, ss = 0.0, lo = 1e9, hi = -1e9;
      for (const auto* r : members) {
        sz += r->xco2;
        ss += r->xco2_se;
        lo = std::min(lo, r->xco2);
        hi = std::max(hi, r->xco2);
      }
      const auto m = static_cast<double>(members.size());
      CHECK(c.m == static_cast<int>(members.size()));
      CHECK(c.z == sz / m);
      CHECK(c.sigma_eps == ss / m);
      CHECK(c.z >= lo);
      CHECK(c.z <= hi);
      total += c.m;
    }
    CHECK(total == 1000);
  }

  TEST_CASE("window selection") {
    const DayNumber d = 100;
    std::vector<AggregatedCell> cells;
    for (DayNumber k = d - 10; k <= d + 10; ++k) cells.push_back(cell(k, 0.5));
    const auto w = window_select(cells, d);
    REQUIRE(w.size() == 16);
    CHECK(w.front().day == d - 7);
    CHECK(w.back().day == d + 8);
  }

  TEST_CASE("gap rule") {
    const DayNumber d = 50;
    CHECK(should_predict({cell(d, 1)}, d));
    CHECK(should_predict({cell(d - 3, 1), cell(d + 2, 1)}, d));
    CHECK_FALSE(should_predict({cell(d - 3, 1), cell(d - 2, 1)}, d));
    CHECK_FALSE(should_predict({cell(d + 1, 1)}, d));
    CHECK_FALSE(should_predict({}, d));
  }

  TEST_CASE("gap rule agrees with an enumeration over day patterns") {
    // Every subset of the 16 window days: predict iff the target (offset 7)
    // has data or there are days on both sides.
    for (unsigned mask = 0; mask < (1u << 16); mask += 7) {
      std::vector<AggregatedCell> w;
      for (int k = 0; k < 16; ++k) {
        if (mask & (1u << k)) w.push_back(cell(93 + k, 1));
      }
      const bool target = mask & (1u << 7);
      const bool before = mask & 0x7Fu;
      const bool after = mask & 0xFF00u;
      CHECK(should_predict(w, 100) == (target || (before && after)));
    }
  }

  TEST_CASE("latitude bounds") {
    const DayNumber d = 20;
    auto b = latitude_bounds({cell(d, -45.2), cell(d, 10.0), cell(d, 62.3), cell(d - 1, 80.0)}, d);
    CHECK(b.lo == -45.5);
    CHECK(b.hi == 62.5);
    CHECK_FALSE(b.from_window);
    b = latitude_bounds({cell(d - 2, -30.0), cell(d + 3, 40.0)}, d);
    CHECK(b.lo == -29.5);
    CHECK(b.hi == 40.5);
    CHECK(b.from_window);
    b = latitude_bounds({cell(d, 12.3)}, d);
    CHECK(b.lo == b.hi);
    CHECK(b.contains(12.5));
    CHECK_FALSE(b.contains(11.5));
  }

  TEST_CASE("config parsing") {
    std::istringstream is(
        "# comment\n"
        "policy = v7\n"
        "se_floor = 1.5  # ppm\n"
        "spatial_counts = 12, 42\n"
        "n_temporal = 4\n"
        "warm_start = false\n"
        "threads = 3\n"
        "seed = 99\n"
        "first_day = 2015-06-01\n"
        "\n");
    const auto c = read_config(is);
    CHECK(c.policy == FilterPolicy::V7);
    CHECK(c.se_floor == 1.5);
    CHECK(c.spatial_counts == std::vector<int>{12, 42});
    CHECK(c.n_temporal == 4);
    CHECK_FALSE(c.warm_start);
    CHECK(c.threads == 3);
    CHECK(c.seed == 99);
    CHECK(c.first_day == parse_date("2015-06-01"));
    CHECK(c.basis_size() == (12 + 42) * 4);
    CHECK(PipelineConfig{}.basis_size() == 3168);

    std::istringstream unknown("policy = v8\ncolour = red\n");
    try {
      (void)read_config(unknown);
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(e.line() == 2);
    }
    std::istringstream bad("n_temporal = 0\n");
    CHECK_THROWS_AS(read_config(bad).validate(), InvalidArgumentError);
  }

  TEST_CASE("retrieval file round trip") {
    const auto in = random_records(50, 9);
    std::stringstream ss;
    write_retrievals(ss, in);
    const auto rep = read_retrievals(ss);
    REQUIRE(rep.records.size() == in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      // Whole seconds and four decimals in the file.
      CHECK(std::abs(rep.records[i].time - in[i].time) <= 0.5 / 86400.0 + 1e-9);
      CHECK(std::abs(rep.records[i].xco2 - in[i].xco2) <= 5e-5);
      CHECK(rep.records[i].day() == in[i].day());
      CHECK(rep.records[i].mode == in[i].mode);
      CHECK(rep.records[i].line == i + 2);
    }
  }

  TEST_CASE("retrieval file errors carry line numbers") {
    const std::string head = "mode,time_utc,lon,lat,xco2,xco2_se,quality_flag,warn_level\n";
    {
      std::istringstream is(head + "land-nadir,2015-06-01T10:00:00Z,10,20,400,1,0,0\n" +
                            "land-nadir,2015-06-01T10:00:00Z,10,abc,400,1,0,0\n");
      try {
        (void)read_retrievals(is);
        FAIL("expected an error");
      } catch (const IoError& e) {
        CHECK(e.line() == 3);
      }
    }
    {
      std::istringstream is(head + "land-nadir,2015-06-01T10:00:00Z,10,20,400,1,0\n" +
                            "ocean-glint,2015-06-01T11:00:00Z,-10,NA,401,,0,0\n");
      const auto rep = read_retrievals(is, false);
      REQUIRE(rep.records.size() == 1);
      CHECK(rep.skipped.size() == 1);
      CHECK(std::isnan(rep.records[0].lat));
      CHECK(std::isnan(rep.records[0].xco2_se));
      CHECK_FALSE(rep.records[0].complete());
    }
    {
      std::istringstream is("time_utc,lon,lat,xco2\n");
      CHECK_THROWS_AS(read_retrievals(is), IoError);
    }
    {
      const auto path = std::filesystem::temp_directory_path() / "gapfill_bad_mode.csv";
      std::ofstream(path) << head << "LandNadir,2015-06-01T10:00:00Z,10,20,400,1,0,0\n";
      try {
        (void)read_retrievals(path);
        FAIL("expected an error");
      } catch (const IoError& e) {
        CHECK(e.line() == 2);
        const std::string what = e.what();
        CHECK(what.find(path.string()) == 0);
        CHECK(what.find("(line 2)") == what.rfind("(line 2)"));
      }
      std::filesystem::remove(path);
    }
  }

  TEST_CASE("one day end to end") {
    const DayNumber d0 = parse_date("2016-01-01");
    const auto cfg = small_config();
    const auto cells = aggregate_to_grid(filter_records(box_records(d0, 16, 1), cfg.policy, cfg.se_floor));
    SkipReason why{};
    const auto p = process_day(cells, d0 + 7, cfg, std::nullopt, &why);
    REQUIRE(p.has_value());
    CHECK(p->window_first == d0);
    CHECK(p->window_last == d0 + 15);
    CHECK_FALSE(p->cells.empty());
    for (const auto& c : p->cells) {
      CHECK(p->bounds.contains(c.lat_center()));
      CHECK(c.lon_center() >= cfg.lon_min);
      CHECK(c.lon_center() <= cfg.lon_max);
      CHECK(c.se > 0.0);
      CHECK(std::isfinite(c.pred));
    }
    CHECK(p->n_basis <= static_cast<std::size_t>(cfg.basis_size()));

    // A target with data only well after it fails the gap rule.
    CHECK_FALSE(process_day(cells, d0 - 3, cfg, std::nullopt, &why).has_value());
    CHECK(why == SkipReason::GapRule);
    CHECK_FALSE(process_day(cells, d0 - 30, cfg, std::nullopt, &why).has_value());
    CHECK(why == SkipReason::NoData);
    auto outside = cfg;
    outside.lat_min = 50.0;
    outside.lat_max = 60.0;
    CHECK_FALSE(process_day(cells, d0 + 7, outside, std::nullopt, &why).has_value());
    CHECK(why == SkipReason::NoCellsInDomain);
  }

  TEST_CASE("runs are deterministic and products round trip") {
    const DayNumber d0 = parse_date("2016-03-01");
    auto records = box_records(d0, 6, 2);
    auto cfg = small_config();
    cfg.seed = 17;
    const auto render = [&](const PipelineResult& r) {
      std::ostringstream os;
      for (const auto& p : r.products) {
        write_product_csv(os, p);
        write_product_metadata(os, p, cfg);
      }
      write_skip_log(os, r.skipped);
      return os.str();
    };
    const auto a = run_pipeline(records, cfg);
    const auto b = run_pipeline(records, cfg);
    CHECK(a.products.size() == 6);
    CHECK(render(a) == render(b));

    auto cold = cfg;
    cold.warm_start = false;
    cold.threads = 2;
    const auto c = run_pipeline(records, cold);
    auto cold1 = cold;
    cold1.threads = 1;
    CHECK(render(c) == render(run_pipeline(records, cold1)));

    const auto dir = std::filesystem::temp_directory_path() / "gapfill_pipeline_test";
    std::filesystem::remove_all(dir);
    write_product(dir, a.products[2], cfg);
    const auto csv = dir / (product_stem(a.products[2].target_day) + ".csv");
    CHECK(product_stem(d0) == "L3_20160301");
    const auto back = read_product(csv);
    CHECK(back.target_day == a.products[2].target_day);
    CHECK(back.window_first == a.products[2].window_first);
    CHECK(back.params.theta2 == a.products[2].params.theta2);
    REQUIRE(back.cells.size() == a.products[2].cells.size());
    for (std::size_t i = 0; i < back.cells.size(); ++i) {
      CHECK(back.cells[i].lon_band == a.products[2].cells[i].lon_band);
      CHECK(back.cells[i].lat_band == a.products[2].cells[i].lat_band);
      CHECK(std::abs(back.cells[i].pred - a.products[2].cells[i].pred) <= 5e-7);
      CHECK(back.cells[i].n_obs == a.products[2].cells[i].n_obs);
    }
    const auto& first = back.cells.front();
    CHECK(back.find(first.lon_center(), first.lat_center()) != nullptr);
    CHECK(back.find(-170.0, -80.0) == nullptr);
    for (const auto& e : std::filesystem::directory_iterator(dir)) CHECK(e.path().extension() != ".tmp");
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("skip log") {
    std::ostringstream os;
    write_skip_log(os, {{parse_date("2016-01-05"), SkipReason::GapRule, {}}});
    CHECK(os.str().find("2016-01-05") != std::string::npos);
    CHECK(os.str().find("GAP_RULE") != std::string::npos);
  }
}
