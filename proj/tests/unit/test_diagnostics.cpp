#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "gapfill/diagnostics.hpp"
#include "gapfill/errors.hpp"
#include "gapfill/kriging.hpp"
#include "gapfill/random.hpp"

using namespace gapfill;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

SpaceTimePoint pt(double x, double y) { return {Location::planar(x, y), 0.0}; }

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("normal quantiles") {
    CHECK(normal_quantile_two_sided(0.95) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile_two_sided(0.90) == doctest::Approx(1.6448536269514722).epsilon(1e-12));
    CHECK_THROWS_AS(normal_quantile_two_sided(1.0), InvalidArgumentError);
    CHECK_THROWS_AS(normal_quantile_two_sided(0.0), InvalidArgumentError);
  }

  TEST_CASE("score on small inputs") {
    const auto r = score(vec({1.5, 1.5}), vec({1, 1}), vec({1, 2}), 0.95);
    CHECK(r.N == 2);
    CHECK(r.MPE == 0.0);
    CHECK(r.MAPE == 0.5);
    CHECK(r.RMSPE == 0.5);
    CHECK(r.nominal_level == 0.95);

    const auto id = score(vec({1, 2, 4}), vec({0.1, 0.1, 0.1}), vec({1, 2, 4}), 0.9);
    CHECK(id.MPE == 0.0);
    CHECK(id.MAPE == 0.0);
    CHECK(id.RMSPE == 0.0);
    CHECK(id.coverage == 1.0);
    CHECK(id.slope == 1.0);
    CHECK(id.R2 == doctest::Approx(1.0));

    // Sign convention is truth minus prediction.
    CHECK(score(vec({1.0}), vec({1.0}), vec({3.0}), 0.95).MPE == 2.0);
    CHECK(std::isnan(score(vec({1.0}), vec({1.0}), vec({3.0}), 0.95).R2));
    CHECK_THROWS_AS(score(vec({1, 2}), vec({1}), vec({1, 2}), 0.95), InvalidArgumentError);
    CHECK_THROWS_AS(score(Eigen::VectorXd(), Eigen::VectorXd(), Eigen::VectorXd(), 0.95), InvalidArgumentError);
  }

  TEST_CASE("score matches a direct computation") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    const int n = 57;
    Eigen::VectorXd p(n), s(n), t(n);
    for (int i = 0; i < n; ++i) {
      t(i) = 3.0 + nd(rng);
      p(i) = 0.8 * t(i) + 0.5 * nd(rng);
      s(i) = 0.2 + std::abs(nd(rng));
    }
    const auto r = score(p, s, t, 0.9);
    double mpe = 0, mape = 0, mse = 0, pt_ = 0, tt = 0, cov = 0;
    for (int i = 0; i < n; ++i) {
      const double d = t(i) - p(i);
      mpe += d;
      mape += std::abs(d);
      mse += d * d;
      pt_ += p(i) * t(i);
      tt += t(i) * t(i);
      cov += std::abs(d) <= 1.6448536269514722 * s(i);
    }
    const double mp = p.mean(), mt = t.mean();
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
      sxy += (p(i) - mp) * (t(i) - mt);
      sxx += (p(i) - mp) * (p(i) - mp);
      syy += (t(i) - mt) * (t(i) - mt);
    }
    CHECK(r.MPE == doctest::Approx(mpe / n).epsilon(1e-12));
    CHECK(r.MAPE == doctest::Approx(mape / n).epsilon(1e-12));
    CHECK(r.RMSPE == doctest::Approx(std::sqrt(mse / n)).epsilon(1e-12));
    CHECK(r.slope == doctest::Approx(pt_ / tt).epsilon(1e-12));
    CHECK(r.R2 == doctest::Approx(sxy * sxy / (sxx * syy)).epsilon(1e-12));
    CHECK(r.coverage == doctest::Approx(cov / n).epsilon(1e-12));
  }

  TEST_CASE("report invariants on random inputs") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> len(1, 40);
    for (int k = 0; k < 500; ++k) {
      const int n = len(rng);
      Eigen::VectorXd p(n), s(n), t(n);
      for (int i = 0; i < n; ++i) {
        p(i) = nd(rng);
        t(i) = nd(rng) * 3.0;
        s(i) = std::abs(nd(rng));
      }
      const auto r = score(p, s, t, 0.95);
      CHECK(r.MAPE <= r.RMSPE + 1e-12);
      CHECK(std::abs(r.MPE) <= r.MAPE + 1e-12);
      CHECK(r.coverage >= 0.0);
      CHECK(r.coverage <= 1.0);
    }
  }

  TEST_CASE("closed intervals count boundary hits") {
    const double z = normal_quantile_two_sided(0.95);
    CHECK(score(vec({0.0}), vec({1.0}), vec({z}), 0.95).coverage == 1.0);
    CHECK(score(vec({0.0}), vec({1.0}), vec({std::nextafter(z, 10.0)}), 0.95).coverage == 0.0);
  }

  TEST_CASE("coverage is calibrated for correct Gaussian predictions") {
    for (double level : {0.90, 0.95}) {
      Rng rng(static_cast<std::uint64_t>(level * 100));
      const int n = 20000;
      Eigen::VectorXd p(n), s(n), t(n);
      for (int i = 0; i < n; ++i) {
        p(i) = rng.normal();
        s(i) = 0.5 + rng.uniform();
        t(i) = p(i) + s(i) * rng.normal();
      }
      const double mc = std::sqrt(level * (1 - level) / n);
      CHECK(std::abs(score(p, s, t, level).coverage - level) <= 4 * mc);
    }
  }

  TEST_CASE("bias-adjusted interval") {
    const auto i = bias_adjusted_interval(400.0, 0.5, 1.0, 0.95);
    CHECK(i.lower == doctest::Approx(397.54).epsilon(1e-4));
    CHECK(i.upper == doctest::Approx(401.46).epsilon(1e-4));
    const auto d = bias_adjusted_interval(400.0, 0.5, 0.0, 0.95);
    CHECK(d.lower == 399.5);
    CHECK(d.upper == 399.5);
    CHECK(d.contains(399.5));
    CHECK_THROWS_AS(bias_adjusted_interval(1.0, 0.0, -1.0, 0.95), InvalidArgumentError);
    CHECK_THROWS_AS(bias_adjusted_interval(1.0, 0.0, 1.0, 1.5), InvalidArgumentError);
  }

  TEST_CASE("shift property is exact") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int k = 0; k < 1000; ++k) {
      const double v = 400 + u(rng), mu = u(rng) / 4, s = std::abs(u(rng));
      const auto a = bias_adjusted_interval(v, mu, s, 0.95);
      const auto b = bias_adjusted_interval(v - mu, 0.0, s, 0.95);
      CHECK(a.lower == b.lower);
      CHECK(a.upper == b.upper);
    }
  }

  TEST_CASE("comparison interval") {
    CHECK(compare_predictors(1, 1, 0, 0, 1, 1, 0.0, 0.95).sigma_delta == doctest::Approx(std::sqrt(2.0)));
    CHECK(compare_predictors(1, 1, 0, 0, 1, 1, 1.0, 0.95).sigma_delta == 0.0);
    const auto c = compare_predictors(401.0, 400.0, 0.3, 0.1, 0.6, 0.8, 0.0, 0.95);
    CHECK(c.delta == 1.0);
    CHECK(c.mu_delta == doctest::Approx(0.2));
    CHECK(c.sigma_delta == doctest::Approx(1.0));
    CHECK(c.lower == doctest::Approx(0.8 - 1.959963984540054));
    CHECK(c.upper == doctest::Approx(0.8 + 1.959963984540054));
    CHECK(c.contains_zero);
    CHECK_FALSE(compare_predictors(405.0, 400.0, 0, 0, 0.6, 0.8, 0.0, 0.95).contains_zero);
    CHECK_THROWS_AS(compare_predictors(1, 1, 0, 0, 1, 1, 1.5, 0.95), InvalidArgumentError);
    CHECK_THROWS_AS(compare_predictors(1, 1, 0, 0, -1, 1, 0.0, 0.95), InvalidArgumentError);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 3), r(-1, 1);
    for (int k = 0; k < 1000; ++k) {
      const double a = u(rng), b = u(rng);
      const double s = compare_predictors(0, 0, 0, 0, a, b, r(rng), 0.95).sigma_delta;
      CHECK(s * s >= (a - b) * (a - b) - 1e-12);
      CHECK(s * s <= (a + b) * (a + b) + 1e-12);
    }
  }

  TEST_CASE("Monte Carlo coverage of both interval forms") {
    Rng rng(5);
    const int n = 10000;
    int hit1 = 0, hit4 = 0;
    for (int i = 0; i < n; ++i) {
      const double y = 400 + rng.normal();
      const double mu = 0.7, s = 1.3;
      hit1 += bias_adjusted_interval(y + mu + s * rng.normal(), mu, s, 0.95).contains(y);
      const double y1 = y + 0.5 * rng.normal(), y2 = y + 1.1 * rng.normal();
      hit4 += compare_predictors(y1, y2, 0, 0, 0.5, 1.1, 0.0, 0.95).contains_zero;
    }
    CHECK(std::abs(hit1 / double(n) - 0.95) <= 0.01);
    CHECK(std::abs(hit4 / double(n) - 0.95) <= 0.01);
  }

  TEST_CASE("second-order quotient") {
    CHECK(second_order_quotient(1.0, 3.0, 5.0, 0.5) == 0.0);
    const double h = 0.25;
    CHECK(second_order_quotient(1.0, (1 + h) * (1 + h), (1 + 2 * h) * (1 + 2 * h), h) == 2.0);
    CHECK(second_order_quotient(0.3, -1.2, 2.2, 0.1) == doctest::Approx((0.3 + 2.4 + 2.2) / 0.01));
    CHECK_THROWS_AS(second_order_quotient(1, 2, 3, 0.0), InvalidArgumentError);
  }

  TEST_CASE("theoretical quotient variance") {
    const double h = 0.01;
    const auto flat = CovarianceFunction::exponential(2.0, 1e12);
    CHECK(quotient_variance_theoretical(flat, pt(0, 0), pt(h, 0), pt(2 * h, 0), h) <= 1e-12 * 12.0 / std::pow(h, 4));
    const auto rough = CovarianceFunction::exponential(2.0, 1e-9);
    CHECK(quotient_variance_theoretical(rough, pt(0, 0), pt(h, 0), pt(2 * h, 0), h) ==
          doctest::Approx(12.0 / std::pow(h, 4)));
    const auto cov = CovarianceFunction::exponential(1.0, 0.15);
    const double r1 = std::exp(-h / 0.15), r2 = std::exp(-2 * h / 0.15);
    CHECK(quotient_variance_theoretical(cov, pt(0.2, 0.3), pt(0.2 + h, 0.3), pt(0.2 + 2 * h, 0.3), h) ==
          doctest::Approx((6 - 8 * r1 + 2 * r2) / std::pow(h, 4)).epsilon(1e-12));
    CHECK_THROWS_AS(quotient_variance_theoretical(cov, pt(0, 0), pt(0.5, 0), pt(2 * h, 0), h), InvalidArgumentError);
  }

  TEST_CASE("quotient variance matches simulation") {
    const double h = 0.01;
    const auto cov = CovarianceFunction::exponential(1.0, 0.15);
    const std::vector<SpaceTimePoint> tri{pt(0.4, 0.5), pt(0.4 + h, 0.5), pt(0.4 + 2 * h, 0.5)};
    const int n = 100000;
    const auto sims = simulate_unconditional_many(cov, tri, n, 6);
    std::vector<double> d;
    d.reserve(n);
    double m = 0.0;
    for (const auto& s : sims) {
      d.push_back(second_order_quotient(s.values(0), s.values(1), s.values(2), h));
      m += d.back();
    }
    m /= n;
    double v = 0.0, m4 = 0.0;
    for (double x : d) {
      v += (x - m) * (x - m);
      m4 += std::pow(x - m, 4);
    }
    v /= (n - 1);
    m4 /= n;
    const double mc_se = std::sqrt((m4 - v * v) / n);
    const double theory = quotient_variance_theoretical(cov, tri[0], tri[1], tri[2], h);
    CHECK(std::abs(v - theory) <= 3 * mc_se);
  }

  TEST_CASE("half-normal mean") {
    CHECK(expected_abs_halfnormal(std::numbers::pi / 2) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(expected_abs_halfnormal(0.0) == 0.0);
    CHECK(expected_abs_halfnormal(1.0) == doctest::Approx(0.7978845608028654).epsilon(1e-14));
    CHECK_THROWS_AS(expected_abs_halfnormal(-1.0), InvalidArgumentError);
  }

  TEST_CASE("smoothness statistic") {
    const int n1 = 6, n2 = 4;
    Eigen::VectorXd c = Eigen::VectorXd::Constant(n1 * n2, 3.0), lin(n1 * n2), quad(n1 * n2);
    for (int j = 0; j < n2; ++j) {
      for (int i = 0; i < n1; ++i) {
        lin(j * n1 + i) = 1.0 + 2.0 * i - 0.5 * j;
        quad(j * n1 + i) = double(i * i);
      }
    }
    for (int axis : {0, 1}) {
      CHECK(smoothness_stat(c, n1, n2, 0.1, axis) == 0.0);
      CHECK(smoothness_stat(lin, n1, n2, 1.0, axis) == doctest::Approx(0.0));
    }
    CHECK(smoothness_stat(quad, n1, n2, 1.0, 0) == 2.0);
    CHECK(smoothness_stat(quad, n1, n2, 1.0, 1) == 0.0);
    CHECK_THROWS_AS(smoothness_stat(c, n1, n2, 1.0, 2), InvalidArgumentError);
    CHECK_THROWS_AS(smoothness_stat(Eigen::VectorXd::Zero(2 * 5), 2, 5, 1.0, 0), InvalidArgumentError);
    CHECK_THROWS_AS(smoothness_stat(c, 5, 5, 1.0, 0), InvalidArgumentError);
  }

  TEST_CASE("predictor smoothness falls as the measurement error grows") {
    const auto cov = CovarianceFunction::exponential(1.0, 0.15);
    const int g = 20;
    const double h = 1.0 / g;
    std::vector<SpaceTimePoint> grid;
    for (int j = 0; j < g; ++j) {
      for (int i = 0; i < g; ++i) grid.push_back(pt((i + 0.5) * h, (j + 0.5) * h));
    }
    int monotone = 0;
    const int seeds = 10;
    for (int seed = 0; seed < seeds; ++seed) {
      Rng rng(100 + static_cast<std::uint64_t>(seed));
      std::vector<SpaceTimePoint> locs;
      for (int i = 0; i < 150; ++i) {
        const double x = rng.uniform();
        locs.push_back(pt(x, rng.uniform()));
      }
      const auto y = simulate_unconditional(cov, locs, rng.split()).values;
      const Eigen::VectorXd noise = rng.normal_vector(150);
      std::vector<double> stat;
      for (double s2 : {0.1, 1.0, 10.0}) {
        const auto r = simple_krige(Dataset::make(locs, y + std::sqrt(s2) * noise, std::sqrt(s2)), cov, grid);
        stat.push_back(smoothness_stat(r.pred, g, g, h, 0));
      }
      monotone += stat[0] >= stat[1] && stat[1] >= stat[2];
    }
    CHECK(monotone * 2 > seeds);
  }

  TEST_CASE("report table layout") {
    DiagnosticsReport r;
    r.N = 12;
    r.MPE = -0.1234;
    r.MAPE = 0.5;
    r.RMSPE = 0.75;
    r.R2 = 0.81;
    r.slope = 1.0016;
    r.coverage = 0.9167;
    std::ostringstream os;
    write_report_table(os, {{"Lauder", r}, {"Total", r}});
    CHECK(os.str() ==
          "Station,N,MPE,MAPE,RMSPE,R2,Slope,95% Cov.\n"
          "Lauder,12,-0.12,0.50,0.75,0.81,1.002,0.92\n"
          "Total,12,-0.12,0.50,0.75,0.81,1.002,0.92\n");
  }
}
