#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "rainrecon/baselines.hpp"
#include "rainrecon/datagen.hpp"
#include "rainrecon/errors.hpp"
#include "support.hpp"

using namespace rainrecon;
namespace fs = std::filesystem;

namespace {

StormConfig undistorted(int steps = 12) {
  StormConfig cfg;
  cfg.georef = GridGeoref(0.0, 0.0, 16.0, 16.0, 16, 16);
  cfg.steps = steps;
  cfg.gauge_count = 12;
  cfg.seed = 21;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rainrecon_test_" + name);
  fs::remove_all(dir);
  return dir;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

bool same_bits(const Dataset& a, const Dataset& b) {
  if (a.radar.values.size() != b.radar.values.size() || a.gauges.rain.size() != b.gauges.rain.size()) return false;
  if (std::memcmp(a.radar.values.data(), b.radar.values.data(), a.radar.values.size() * sizeof(float)) != 0) {
    return false;
  }
  if (std::memcmp(a.gauges.rain.data(), b.gauges.rain.data(), a.gauges.rain.size() * sizeof(double)) != 0) {
    return false;
  }
  if (a.gauges.mask != b.gauges.mask || a.radar.timestamps != b.radar.timestamps) return false;
  for (std::size_t i = 0; i < a.gauges.size(); ++i) {
    const auto &s = a.gauges.stations[i], &t = b.gauges.stations[i];
    if (s.id != t.id || s.x != t.x || s.y != t.y) return false;
  }
  return a.truth.has_value() == b.truth.has_value() && (!a.truth || *a.truth == *b.truth) &&
         a.radar.georef == b.radar.georef;
}

}  // namespace

TEST_CASE("undistorted generator matches the Z-R conversion at gauges") {
  const auto ds = simulate_storm(undistorted());
  for (std::size_t i = 0; i < ds.gauges.size(); ++i) {
    const auto cell = grid_cell_of(ds.radar.georef, ds.gauges.stations[i].x, ds.gauges.stations[i].y);
    for (int t = 0; t < ds.steps(); ++t) {
      CHECK(ds.gauges.rain_at(i, t) == zr_rain_from_dbz(ds.radar.at(t, cell.row, cell.col)));
    }
  }
}

TEST_CASE("full evaporation gives virga") {
  auto cfg = undistorted();
  cfg.evaporation = 1.0;
  const auto ds = simulate_storm(cfg);
  double max_dbz = -1e9;
  for (float v : ds.radar.values) max_dbz = std::max(max_dbz, static_cast<double>(v));
  CHECK(max_dbz > 20.0);
  for (float v : *ds.truth) CHECK(v == 0.0f);
}

TEST_CASE("lag-correlation between radar rain and truth peaks at the configured lag") {
  auto cfg = undistorted(24);
  cfg.lag_steps = 2;
  const auto ds = simulate_storm(cfg);
  const std::size_t cells = ds.radar.georef.cell_count();
  int best = -1;
  double best_r = -2.0;
  for (int lag = 0; lag <= 5; ++lag) {
    std::vector<double> a, b;
    for (int t = lag; t < ds.steps(); ++t) {
      for (std::size_t c = 0; c < cells; ++c) {
        a.push_back(zr_rain_from_dbz(ds.radar.values[(t - lag) * cells + c]));
        b.push_back((*ds.truth)[t * cells + c]);
      }
    }
    const double r = pearson(a, b);
    if (r > best_r) {
      best_r = r;
      best = lag;
    }
  }
  CHECK(best == 2);
  CHECK(best_r > 0.999);
}

TEST_CASE("generator determinism and invariants") {
  auto cfg = undistorted();
  cfg.gauge_noise = 0.2;
  cfg.radar_noise_dbz = 1.0;
  const auto a = simulate_storm(cfg);
  const auto b = simulate_storm(cfg);
  CHECK(same_bits(a, b));
  for (float v : *a.truth) CHECK(v >= 0.0f);
  for (float v : a.radar.values) CHECK(std::isfinite(v));
  cfg.seed += 1;
  CHECK_FALSE(same_bits(a, simulate_storm(cfg)));
}

TEST_CASE("storm config validation") {
  auto cfg = undistorted(5);
  cfg.lag_steps = 5;
  CHECK_THROWS_AS(simulate_storm(cfg), ConfigError);
  cfg = undistorted();
  cfg.evaporation = 1.5;
  CHECK_THROWS_AS(simulate_storm(cfg), ConfigError);
}

TEST_CASE("dataset round trip is bit-exact") {
  StormConfig cfg;
  cfg.georef = GridGeoref(0.0, 0.0, 4.0, 4.0, 4, 4);
  cfg.steps = 3;
  cfg.cell_count = 1;
  cfg.min_sigma_cells = 1.0;
  cfg.max_sigma_cells = 2.0;
  cfg.gauge_count = 5;
  cfg.gauge_noise = 0.3;
  auto ds = simulate_storm(cfg);
  ds.gauges.mask[1] = 0;
  const auto dir = scratch_dir("roundtrip");
  write_dataset(ds, dir);
  const auto back = load_dataset(dir);
  CHECK(same_bits(ds, back));
  fs::remove_all(dir);
}

TEST_CASE("loader rejects malformed datasets") {
  const auto ds = testing::toy_dataset(4, 4);
  const auto dir = scratch_dir("malformed");

  SUBCASE("truncated radar payload") {
    write_dataset(ds, dir);
    fs::resize_file(dir / "radar.f32", fs::file_size(dir / "radar.f32") - 4 * 10);
    try {
      load_dataset(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("radar.f32") != std::string::npos);
      CHECK(msg.find("expected 256") != std::string::npos);
      CHECK(msg.find("found 246") != std::string::npos);
    }
  }
  SUBCASE("gauge outside the bounding box") {
    auto moved = ds;
    for (auto& s : moved.gauges.stations) s.x = 1.0;
    write_dataset(moved, dir);
    std::ifstream in(dir / "gauges.csv");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find(",1,");
    text.replace(pos, 3, ",9,");
    std::ofstream(dir / "gauges.csv") << text;
    try {
      load_dataset(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("gauges.csv") != std::string::npos);
      CHECK(msg.find("field x") != std::string::npos);
    }
  }
  SUBCASE("missing header field") {
    write_dataset(ds, dir);
    std::ofstream(dir / "meta.txt") << "H=8\nW=8\n";
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("chronological split") {
  const auto ten = testing::toy_dataset(10, 4);
  auto [train, test] = chronological_split(ten, 0.8);
  CHECK(train.steps() == 8);
  CHECK(test.steps() == 2);
  CHECK(test.radar.timestamps.front() == ten.radar.timestamps[8]);
  CHECK(chronological_split_index(2, 0.5) == 1);
  CHECK(chronological_split_index(7, 0.8) == 5);
  CHECK_THROWS_AS(chronological_split_index(10, 0.05), DomainError);
  CHECK_THROWS_AS(chronological_split_index(10, 1.0), DomainError);
}

TEST_CASE("station masking") {
  const auto ds = testing::toy_dataset(3, 10);
  const auto p = mask_stations(ds.gauges, 0.2, 4);
  CHECK(p.visible.size() == 8);
  CHECK(p.held_out.size() == 2);
  std::set<std::string> ids;
  for (const auto& s : p.visible.stations) ids.insert(s.id);
  for (const auto& s : p.held_out.stations) CHECK(ids.insert(s.id).second);
  CHECK(ids.size() == 10);
  const auto q = mask_stations(ds.gauges, 0.2, 4);
  CHECK(q.held_out_index == p.held_out_index);
  CHECK_THROWS_AS(mask_stations(ds.gauges, 0.95, 4), DomainError);
}

TEST_CASE("temporal aggregation") {
  const auto ds = testing::toy_dataset(6, 3);
  const auto mean = aggregate_steps(ds, 2, AggregationRule::mean);
  const auto sum = aggregate_steps(ds, 2, AggregationRule::sum);
  REQUIRE(mean.steps() == 3);
  for (std::size_t i = 0; i < ds.gauges.size(); ++i) {
    const double a = ds.gauges.rain_at(i, 2), b = ds.gauges.rain_at(i, 3);
    CHECK(sum.gauges.rain_at(i, 1) == doctest::Approx(a + b).epsilon(1e-12));
    CHECK(mean.gauges.rain_at(i, 1) == doctest::Approx((a + b) / 2).epsilon(1e-12));
  }
  auto gap = ds;
  gap.gauges.mask[0] = 0;
  CHECK_FALSE(aggregate_steps(gap, 2, AggregationRule::mean).gauges.observed(0, 0));
  CHECK_THROWS_AS(parse_aggregation_rule("median"), ConfigError);
}
