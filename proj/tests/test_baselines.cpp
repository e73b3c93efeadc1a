#include <doctest.h>

#include <cmath>

#include "rainrecon/baselines.hpp"
#include "rainrecon/errors.hpp"
#include "support.hpp"

using namespace rainrecon;

namespace {

using Samples = std::vector<GaugeSample>;

// Dense Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a[i][k]) > std::abs(a[piv][k])) piv = i;
    }
    std::swap(a[k], a[piv]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i][k] / a[k][k];
      for (std::size_t j = k; j < n; ++j) a[i][j] -= f * a[k][j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k][j] * x[j];
    x[k] = s / a[k][k];
  }
  return x;
}

double phi(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

// Thin-plate spline value at (x, y) through an independently assembled
// augmented system [K P; P^T 0].
double tps_oracle(const Samples& s, double x, double y) {
  const std::size_t n = s.size();
  std::vector<std::vector<double>> a(n + 3, std::vector<double>(n + 3, 0.0));
  std::vector<double> b(n + 3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i][j] = phi(std::hypot(s[i].x - s[j].x, s[i].y - s[j].y));
    const double row[3] = {1.0, s[i].x, s[i].y};
    for (std::size_t k = 0; k < 3; ++k) a[i][n + k] = a[n + k][i] = row[k];
    b[i] = s[i].value;
  }
  const auto w = solve(a, b);
  double v = w[n] + w[n + 1] * x + w[n + 2] * y;
  for (std::size_t i = 0; i < n; ++i) v += w[i] * phi(std::hypot(x - s[i].x, y - s[i].y));
  return v;
}

Samples random_samples(std::size_t n, Rng& rng, double extent = 8.0) {
  std::uniform_real_distribution<double> u(0.0, extent);
  Samples s;
  for (std::size_t i = 0; i < n; ++i) s.push_back({u(rng), u(rng), 5.0 * u(rng) / extent});
  return s;
}

const GridGeoref kGrid(0.0, 0.0, 8.0, 8.0, 8, 8);

}  // namespace

TEST_CASE("z-r conversion") {
  const double dbz_one = 10.0 * std::log10(200.0);
  CHECK(std::abs(zr_rain_from_dbz(23.0103) - 1.0) <= 1e-4);
  CHECK(zr_rain_from_dbz(dbz_one) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(zr_dbz_from_rain(1.0) == doctest::Approx(dbz_one).epsilon(1e-12));
  CHECK(zr_rain_from_dbz(-100.0) < 1e-7);
  CHECK(zr_dbz_from_rain(0.0) == -32.0);
  CHECK_THROWS_AS(zr_dbz_from_rain(-0.1), DomainError);
  double prev_rain = -1.0, prev_dbz = -1e9;
  for (int i = 0; i <= 1000; ++i) {
    const double z = 60.0 * i / 1000.0;
    CHECK(std::abs(zr_dbz_from_rain(zr_rain_from_dbz(z)) - z) <= 1e-9);
    const double r = zr_rain_from_dbz(z);
    CHECK(r > prev_rain);
    prev_rain = r;
    const double d = zr_dbz_from_rain(0.01 * (i + 1));
    CHECK(d > prev_dbz);
    prev_dbz = d;
  }
}

TEST_CASE("z-r baseline field") {
  RadarSequence radar;
  radar.georef = GridGeoref(0.0, 0.0, 4.0, 4.0, 4, 4);
  radar.timestamps = {0.0, 10.0, 20.0};
  radar.values.assign(16, static_cast<float>(10.0 * std::log10(200.0)));
  radar.values.insert(radar.values.end(), 16, -32.0f);
  for (int i = 0; i < 16; ++i) radar.values.push_back(static_cast<float>(2.0 * i));
  for (double v : zr_baseline_field(radar, 0).values) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  const double floor_rain = std::pow(std::pow(10.0, -3.2) / 200.0, 1.0 / 1.6);
  for (double v : zr_baseline_field(radar, 1).values) {
    CHECK(v == doctest::Approx(floor_rain).epsilon(1e-6));
    CHECK(v < 1e-3);
  }
  const auto ramp = zr_baseline_field(radar, 2);
  for (std::size_t i = 1; i < 16; ++i) CHECK(ramp.values[i] > ramp.values[i - 1]);
  CHECK_THROWS_AS(zr_baseline_field(radar, 3), DomainError);
}

TEST_CASE("tin examples") {
  const Samples tri{{0.0, 0.0, 0.0}, {3.0, 0.0, 0.0}, {0.0, 3.0, 3.0}};
  Triangulation t(tri);
  CHECK(std::abs(t.evaluate(1.0, 1.0) - 1.0) <= 1e-9);
  const Samples flat{{0.5, 0.5, 2.5}, {7.5, 0.5, 2.5}, {4.0, 7.5, 2.5}};
  Triangulation f(flat);
  CHECK(f.evaluate(4.0, 3.0) == doctest::Approx(2.5).epsilon(1e-12));

  InterpolationDiagnostics diag;
  const Samples line{{1.0, 1.0, 1.0}, {2.0, 2.0, 2.0}, {3.0, 3.0, 3.0}};
  const auto field = tin_interpolate(line, kGrid, &diag);
  CHECK(diag.nearest_fallback);
  CHECK(!diag.warnings.empty());
  CHECK(field.at(0, 0) == 1.0);
  CHECK(field.at(7, 7) == 3.0);
  CHECK_THROWS_AS(tin_interpolate(Samples{}, kGrid), DomainError);
}

TEST_CASE("tin is exact at stations, bounded and Delaunay") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_samples(15, rng);
    Triangulation t(s);
    REQUIRE_FALSE(t.degenerate());
    double lo = 1e300, hi = -1e300;
    for (const auto& p : s) {
      CHECK(std::abs(t.evaluate(p.x, p.y) - p.value) <= 1e-6);
      lo = std::min(lo, p.value);
      hi = std::max(hi, p.value);
    }
    for (double v : tin_interpolate(s, kGrid).values) {
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
    }
    for (const auto& tr : t.triangles()) {
      const auto &a = s[tr[0]], &b = s[tr[1]], &c = s[tr[2]];
      const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
      const double ux = ((a.x * a.x + a.y * a.y) * (b.y - c.y) + (b.x * b.x + b.y * b.y) * (c.y - a.y) +
                         (c.x * c.x + c.y * c.y) * (a.y - b.y)) / d;
      const double uy = ((a.x * a.x + a.y * a.y) * (c.x - b.x) + (b.x * b.x + b.y * b.y) * (a.x - c.x) +
                         (c.x * c.x + c.y * c.y) * (b.x - a.x)) / d;
      const double r = std::hypot(a.x - ux, a.y - uy);
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (static_cast<int>(k) == tr[0] || static_cast<int>(k) == tr[1] || static_cast<int>(k) == tr[2]) continue;
        CHECK(std::hypot(s[k].x - ux, s[k].y - uy) >= r * (1.0 - 1e-9));
      }
    }
  }
}

TEST_CASE("tps interpolation") {
  Rng rng(12);
  SUBCASE("exact at stations") {
    const auto s = random_samples(12, rng);
    ThinPlateSpline tps(s);
    for (const auto& p : s) CHECK(std::abs(tps.evaluate(p.x, p.y) - p.value) <= 1e-6);
  }
  SUBCASE("reproduces affine fields") {
    auto s = random_samples(10, rng);
    for (auto& p : s) p.value = 2.0 * p.x + 3.0 * p.y + 1.0;
    const auto field = tps_interpolate(s, kGrid);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        CHECK(std::abs(field.at(r, c) - (2.0 * (c + 0.5) + 3.0 * (r + 0.5) + 1.0)) <= 1e-6);
      }
    }
  }
  SUBCASE("unit square corners against an independent solve") {
    const Samples s{{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {1.0, 1.0, 1.0}};
    const double oracle = tps_oracle(s, 0.5, 0.5);
    CHECK(oracle == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(std::abs(ThinPlateSpline(s).evaluate(0.5, 0.5) - oracle) <= 1e-9);
    const auto r = random_samples(9, rng);
    ThinPlateSpline tps(r);
    for (double x : {0.3, 2.7, 6.1}) CHECK(std::abs(tps.evaluate(x, 8.0 - x) - tps_oracle(r, x, 8.0 - x)) <= 1e-8);
  }
  SUBCASE("overshoots the station range on a peaked instance") {
    Samples s;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) s.push_back({1.0 + 3.0 * i, 1.0 + 3.0 * j, (i == 1 && j == 1) ? 1.0 : 0.0});
    }
    ThinPlateSpline tps(s);
    double lo = 1e300;
    for (int i = 0; i <= 80; ++i) {
      for (int j = 0; j <= 80; ++j) lo = std::min(lo, tps.evaluate(0.1 * i, 0.1 * j));
    }
    CHECK(lo < -1e-3);
  }
  SUBCASE("errors") {
    const Samples dup{{1.0, 1.0, 0.0}, {2.0, 1.0, 0.0}, {1.0, 1.0, 1.0}, {0.0, 3.0, 1.0}};
    try {
      ThinPlateSpline tps(dup);
      FAIL("expected DomainError");
    } catch (const DomainError& e) {
      CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
      CHECK(std::string(e.what()).find("#0 and #2") != std::string::npos);
    }
    CHECK_THROWS_AS(ThinPlateSpline(Samples{{1.0, 1.0, 0.0}, {2.0, 2.0, 0.0}, {3.0, 3.0, 1.0}}), DomainError);
    CHECK_THROWS_AS(ThinPlateSpline(Samples{{1.0, 1.0, 0.0}, {2.0, 1.0, 0.0}}), DomainError);
    CHECK_THROWS_AS(ThinPlateSpline(random_samples(4, rng), -1.0), ConfigError);
  }
}

TEST_CASE("idw interpolation") {
  const Samples one{{3.0, 4.0, 7.5}};
  for (double v : idw_interpolate(one, kGrid).values) CHECK(v == doctest::Approx(7.5).epsilon(1e-14));
  const Samples two{{1.0, 4.0, 2.0}, {5.0, 4.0, 4.0}};
  CHECK(idw_value(two, 3.0, 6.0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(idw_value(two, 5.0, 4.0) == 4.0);
  Rng rng(13);
  const auto s = random_samples(10, rng);
  double lo = 1e300, hi = -1e300;
  for (const auto& p : s) {
    lo = std::min(lo, p.value);
    hi = std::max(hi, p.value);
  }
  for (double v : idw_interpolate(s, kGrid, 3.0).values) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
  CHECK_THROWS_AS(idw_value(Samples{}, 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(idw_value(one, 0.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("gauge samples skip unobserved entries") {
  auto ds = rainrecon::testing::toy_dataset(3, 4);
  ds.gauges.mask[1 * 3 + 2] = 0;
  CHECK(gauge_samples(ds.gauges, 2).size() == 3);
  CHECK(gauge_samples(ds.gauges, 1).size() == 4);
}
