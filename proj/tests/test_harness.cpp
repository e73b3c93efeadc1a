#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rainrecon/cli.hpp"
#include "rainrecon/config.hpp"
#include "rainrecon/errors.hpp"
#include "rainrecon/harness.hpp"
#include "rainrecon/heatmap.hpp"
#include "support.hpp"

using namespace rainrecon;
namespace fs = std::filesystem;
using rainrecon::testing::small_model_config;
using rainrecon::testing::toy_dataset;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rainrecon_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelLayout layout_for(const Dataset& ds, std::size_t virtual_count = 2) {
  ModelLayout l;
  l.georef = ds.radar.georef;
  l.gauge_rows = ds.gauges.size();
  l.virtual_count = virtual_count;
  l.virtual_seed = 5;
  return l;
}

TrainConfig small_train_config(std::size_t steps = 6) {
  TrainConfig cfg;
  cfg.model = small_model_config();
  cfg.steps = steps;
  cfg.seed = 3;
  return cfg;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

std::vector<std::string> toy_storm_settings() {
  return {"--set", "height=8", "--set", "width=8", "--set", "x_max=8", "--set", "y_max=8", "--set", "steps=10",
          "--set", "gauges=10", "--set", "cells=2", "--set", "min_sigma=1.5", "--set", "max_sigma=3"};
}

std::vector<std::string> toy_train_settings() {
  return {"--set", "channels=2", "--set", "boundary_channels=2", "--set", "dim=8", "--set", "heads=2",
          "--set", "aws_layers=1", "--set", "window=4", "--set", "query_bands=2", "--set", "knn=3"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("overfits a single window") {
  const auto ds = toy_dataset(8, 10);
  ReconstructionModel model(small_model_config(), {}, layout_for(ds), 1);
  std::vector<std::size_t> stations(ds.gauges.size());
  std::iota(stations.begin(), stations.end(), 0);
  const int end = 5;
  const auto input = make_window(ds, stations, end, model.config().window);
  std::vector<QueryPoint> queries;
  std::vector<double> targets;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& s = ds.gauges.stations[i];
    queries.push_back({s.x, s.y, static_cast<int>(model.config().window) - 1});
    targets.push_back(model.normalizer().normalize(ds.gauges.rain_at(i, end)));
  }
  AdamW opt(0.0);
  double mse = 0.0;
  for (int step = 0; step < 200; ++step) {
    const auto pred = model.decode(model.encode(input), queries);
    auto loss = mse_loss(pred.rain, ag::constant({queries.size(), 1}, targets));
    mse = loss.item();
    model.params().zero_grad();
    ag::backward(loss);
    opt.step(model.params(), 1e-2);
  }
  CHECK(mse < 1e-3);
}

TEST_CASE("training is seed-deterministic") {
  const auto ds = toy_dataset(10, 10);
  auto cfg = small_train_config();
  const auto a = train(cfg, ds);
  const auto b = train(cfg, ds);
  REQUIRE(a.loss_curve.size() == cfg.steps);
  CHECK(same_bits(a.loss_curve, b.loss_curve));
  cfg.seed = 4;
  CHECK_FALSE(same_bits(a.loss_curve, train(cfg, ds).loss_curve));
}

TEST_CASE("no_radar disconnects the radar encoders") {
  const auto ds = toy_dataset(8, 10);
  Ablation ablation;
  ablation.no_radar = true;
  ReconstructionModel model(small_model_config(), ablation, layout_for(ds, 0), 1);
  std::vector<std::size_t> stations{0, 1, 2, 3, 4, 5};
  const auto pred = model.decode(model.encode(make_window(ds, stations, 5, 4)), {{2.5, 2.5, 3}, {6.5, 1.5, 3}});
  model.params().zero_grad();
  ag::backward(ag::sum(pred.rain));
  const auto names = model.radar_parameter_names();
  CHECK_FALSE(names.empty());
  for (const auto& name : names) {
    for (double g : model.params().get(name).grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("split and masking protocol") {
  const auto ds = toy_dataset(10, 10);
  const auto exp = prepare_experiment(ds, 0.8, 0.2, 9);
  CHECK(exp.train_end == 8);
  CHECK(exp.partition.held_out_index.size() == 2);
  CHECK(ds.steps() - exp.train_end == 2);
}

TEST_CASE("held-out stations never reach the model") {
  const auto clean = toy_dataset(12, 12);
  auto cfg = small_train_config(8);
  const auto exp = prepare_experiment(clean, cfg.train_frac, cfg.mask_ratio, cfg.seed);
  const auto base = train(cfg, clean);
  const auto field = [&](const ReconstructionModel& m, const Dataset& ds) {
    return reconstruct_field(m, make_window(ds, exp.partition.visible_index, ds.steps() - 1, cfg.model.window));
  };
  const auto base_field = field(*base.model, clean);

  for (bool observed : {false, true}) {
    auto poisoned = clean;
    for (std::size_t i : exp.partition.held_out_index) {
      for (int t = 0; t < poisoned.steps(); ++t) {
        const std::size_t k = i * poisoned.gauges.steps + t;
        poisoned.gauges.rain[k] = observed ? 1e300 : std::nan("");
        poisoned.gauges.mask[k] = observed ? 1 : 0;
      }
    }
    const auto run = train(cfg, poisoned);
    CHECK(same_bits(run.loss_curve, base.loss_curve));
    CHECK(same_bits(field(*run.model, poisoned).values, base_field.values));
  }
}

TEST_CASE("evaluation with stub predictors") {
  const auto ds = toy_dataset(10, 12);
  const auto exp = prepare_experiment(ds, 0.6, 0.25, 2);
  const auto truth_field = [&](int t) {
    RainField f(ds.radar.georef);
    for (std::size_t i = 0; i < ds.gauges.size(); ++i) {
      const auto cell = grid_cell_of(ds.radar.georef, ds.gauges.stations[i].x, ds.gauges.stations[i].y);
      f.at(cell.row, cell.col) = ds.gauges.rain_at(i, t);
    }
    return f;
  };
  const auto perfect = evaluate_fields("truth", ds, exp, truth_field);
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.nse == 1.0);
  CHECK(perfect.cc == doctest::Approx(1.0).epsilon(1e-12));

  double mean = 0.0;
  std::size_t n = 0;
  for (int t = exp.train_end; t < ds.steps(); ++t) {
    for (std::size_t i : exp.partition.held_out_index) {
      mean += ds.gauges.rain_at(i, t);
      ++n;
    }
  }
  mean /= static_cast<double>(n);
  const auto flat = evaluate_fields("mean", ds, exp, [&](int) {
    RainField f(ds.radar.georef);
    std::fill(f.values.begin(), f.values.end(), mean);
    return f;
  });
  CHECK(std::abs(flat.nse) <= 1e-9);
  CHECK(flat.count == n);
  CHECK_THROWS_AS(evaluate_fields("late", ds, exp, truth_field, 100), DomainError);
}

TEST_CASE("baselines through the harness") {
  const auto ds = toy_dataset(10, 20);
  const auto exp = prepare_experiment(ds, 0.8, 0.2, 1);
  CHECK(run_baseline("zr", ds, exp).rmse < 1e-6);
  CHECK_THROWS_AS(run_baseline("kriging", ds, exp), UsageError);
  try {
    run_baseline("kriging", ds, exp);
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("tin, tps, idw, zr") != std::string::npos);
  }

  SUBCASE("tin on an affine field") {
    // A gauge in every cell keeps the held-out stations inside the visible hull.
    auto affine = toy_dataset(10, 64);
    for (std::size_t i = 0; i < affine.gauges.size(); ++i) {
      const auto& s = affine.gauges.stations[i];
      for (int t = 0; t < affine.steps(); ++t) {
        affine.gauges.rain[i * affine.steps() + t] = 1.0 + 0.3 * s.x + 0.2 * s.y + 0.1 * t;
      }
    }
    Experiment inner;
    inner.train_end = exp.train_end;
    for (std::size_t i = 0; i < affine.gauges.size(); ++i) {
      const auto& s = affine.gauges.stations[i];
      const bool interior = s.x > 2.0 && s.x < 6.0 && s.y > 2.0 && s.y < 6.0;
      (interior && inner.partition.held_out_index.size() < 3 ? inner.partition.held_out_index
                                                               : inner.partition.visible_index)
          .push_back(i);
    }
    REQUIRE(inner.partition.held_out_index.size() >= 2);
    inner.partition.visible = affine.gauges.subset(inner.partition.visible_index);
    inner.partition.held_out = affine.gauges.subset(inner.partition.held_out_index);
    CHECK(run_baseline("tin", affine, inner).nse > 0.99);
  }
  SUBCASE("idw and tin agree at held-out stations that coincide with visible ones") {
    auto dup = ds;
    const std::size_t n = dup.gauges.size();
    std::vector<std::size_t> first(n), second(n);
    std::iota(first.begin(), first.end(), 0);
    std::iota(second.begin(), second.end(), n);
    auto extra = dup.gauges.subset(first);
    for (auto& s : extra.stations) s.id += "b";
    dup.gauges.stations.insert(dup.gauges.stations.end(), extra.stations.begin(), extra.stations.end());
    dup.gauges.rain.insert(dup.gauges.rain.end(), extra.rain.begin(), extra.rain.end());
    dup.gauges.mask.insert(dup.gauges.mask.end(), extra.mask.begin(), extra.mask.end());
    Experiment e;
    e.train_end = exp.train_end;
    e.partition.visible_index = first;
    e.partition.held_out_index = second;
    e.partition.visible = dup.gauges.subset(first);
    e.partition.held_out = dup.gauges.subset(second);
    const auto idw = run_baseline("idw", dup, e);
    const auto tin = run_baseline("tin", dup, e);
    CHECK(idw.rmse == 0.0);
    CHECK(tin.rmse == 0.0);
  }
}

TEST_CASE("one-cycle schedule") {
  const double peak = 5e-4;
  CHECK(one_cycle_lr(0, 100, peak, 0.3) == doctest::Approx(peak / 25.0).epsilon(1e-12));
  CHECK(one_cycle_lr(30, 100, peak, 0.3) == doctest::Approx(peak).epsilon(1e-12));
  CHECK(one_cycle_lr(100, 100, peak, 0.3) == doctest::Approx(peak / 1e4).epsilon(1e-9));
  for (std::size_t s = 1; s < 30; ++s) CHECK(one_cycle_lr(s, 100, peak, 0.3) > one_cycle_lr(s - 1, 100, peak, 0.3));
  for (std::size_t s = 31; s <= 100; ++s) {
    CHECK(one_cycle_lr(s, 100, peak, 0.3) < one_cycle_lr(s - 1, 100, peak, 0.3));
  }
}

TEST_CASE("adamw update") {
  ParamStore store;
  auto w = store.add("w", {2}, {1.0, -2.0});
  auto idle = store.add("idle", {1}, {3.0});
  AdamW opt(0.1);
  store.zero_grad();
  ag::backward(ag::sum(ag::mul(w, ag::constant({2}, {0.5, -4.0}))));
  opt.step(store, 0.01);
  // First step: bias-corrected moments give g / |g|; decay is decoupled.
  CHECK(w.value()[0] == doctest::Approx(1.0 - 0.01 * (0.5 / (0.5 + 1e-8) + 0.1 * 1.0)).epsilon(1e-12));
  CHECK(w.value()[1] == doctest::Approx(-2.0 - 0.01 * (-4.0 / (4.0 + 1e-8) + 0.1 * -2.0)).epsilon(1e-12));
  CHECK(idle.value()[0] == 3.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto ds = toy_dataset(10, 10);
  const auto cfg = small_train_config(4);
  const auto result = train(cfg, ds);
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(result.checkpoint, dir / "model.ckpt");
  const auto back = load_checkpoint(dir / "model.ckpt");
  CHECK(back.step == 4);
  CHECK(train_config_snapshot(back.config) == train_config_snapshot(cfg));
  const auto model = restore_model(back);
  const auto exp = prepare_experiment(ds, cfg.train_frac, cfg.mask_ratio, cfg.seed);
  const auto input = make_window(ds, exp.partition.visible_index, 9, cfg.model.window);
  CHECK(same_bits(reconstruct_field(*model, input).values, reconstruct_field(*result.model, input).values));
  save_checkpoint(make_checkpoint(*model, back.config, back.step), dir / "again.ckpt");
  CHECK(slurp(dir / "model.ckpt") == slurp(dir / "again.ckpt"));
  std::ofstream(dir / "broken.ckpt") << "not a checkpoint\n";
  CHECK_THROWS_AS(load_checkpoint(dir / "broken.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("reconstructed fields") {
  const auto ds = toy_dataset(8, 10);
  ReconstructionModel model(small_model_config(), {}, layout_for(ds), 2);
  const auto input = make_window(ds, {0, 1, 2, 3, 4, 5, 6}, 6, 4);
  const auto a = reconstruct_field(model, input);
  CHECK(a.values.size() == 64);
  for (double v : a.values) CHECK(v >= 0.0);
  CHECK(same_bits(a.values, reconstruct_field(model, input).values));
  CHECK(reconstruct_field(model, input, 1).values.size() == 64);
}

TEST_CASE("configuration files and snapshots") {
  std::istringstream in("# comment\n\nsteps = 12\npeak_lr=1e-3  # inline\nablate=no_rfe,no_csta\n");
  const auto kv = parse_key_values(in, "test.cfg");
  REQUIRE(kv.size() == 3);
  CHECK(kv[1] == std::pair<std::string, std::string>{"peak_lr", "1e-3"});
  TrainConfig cfg;
  for (const auto& [k, v] : kv) apply_train_setting(cfg, k, v);
  CHECK(cfg.steps == 12);
  CHECK(cfg.peak_lr == 1e-3);
  CHECK(cfg.ablation.no_rfe);
  CHECK(cfg.ablation.no_csta_geo);
  CHECK(cfg.effective_lambda() == 0.0);
  const auto snap = train_config_snapshot(cfg);
  CHECK(train_config_snapshot(train_config_from_snapshot(snap)) == snap);

  std::istringstream bad("steps 12\n");
  try {
    parse_key_values(bad, "bad.cfg");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad.cfg: line 1") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_train_setting(cfg, "learning_rate", "1"), UsageError);
  CHECK_THROWS_AS(apply_train_setting(cfg, "steps", "many"), ConfigError);
  CHECK_THROWS_AS(apply_train_setting(cfg, "ablate", "no_decoder"), UsageError);
  StormConfig storm;
  apply_storm_setting(storm, "lag", "2");
  apply_storm_setting(storm, "tilt", "1");
  CHECK(storm.lag_steps == 2);
  CHECK(storm.tilt_x == 1);
  CHECK(storm.tilt_y == 1);
}

TEST_CASE("heatmap export") {
  RainField f(GridGeoref(0.0, 0.0, 4.0, 2.0, 2, 4));
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = static_cast<double>(i);
  const StationSet st{{"A", 1.5, 0.5}};
  HeatmapOptions opt;
  opt.pixel_scale = 3;
  const auto a = heatmap_bytes(f, st, opt);
  CHECK(a == heatmap_bytes(f, st, opt));
  const std::string header = "P6\n12 6\n255\n";
  REQUIRE(a.size() == header.size() + 12 * 6 * 3);
  CHECK(std::equal(header.begin(), header.end(), a.begin()));
  // The top-right pixel shows the largest value of the top grid row.
  const auto top_right = rain_colour(1.0);
  CHECK(std::equal(top_right.begin(), top_right.end(), a.begin() + header.size() + 11 * 3));

  RainField zero(f.georef);
  opt.mark_stations = false;
  const auto blank = heatmap_bytes(zero, st, opt);
  for (std::size_t i = header.size(); i < blank.size(); ++i) CHECK(blank[i] == 255);
  f.values[0] = std::nan("");
  CHECK_THROWS_AS(heatmap_bytes(f, st, opt), DomainError);

  const auto dir = scratch_dir("heat");
  f.values[0] = 0.25;
  write_field_csv(f, dir / "f.csv");
  CHECK(same_bits(read_field_csv(dir / "f.csv", f.georef).values, f.values));
  fs::remove_all(dir);
}

TEST_CASE("command line") {
  const auto dir = scratch_dir("cli");
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  std::string text;

  REQUIRE(cli(concat({"simulate", "--out", a, "--seed", "4"}, toy_storm_settings())) == 0);
  REQUIRE(cli(concat({"simulate", "--out", b, "--seed", "4"}, toy_storm_settings())) == 0);
  for (const char* f : {"radar.f32", "gauges.csv", "meta.txt"}) CHECK(slurp(fs::path(a) / f) == slurp(fs::path(b) / f));

  const auto report = (dir / "tin.csv").string();
  CHECK(cli({"baseline", "--data", a, "--method", "tin", "--report", report}) == 0);
  std::ifstream in(report);
  std::string header;
  std::getline(in, header);
  CHECK(header == MetricsReport::csv_header());

  CHECK(cli({"baseline", "--data", a, "--method", "kriging"}, &text) == 2);
  CHECK(text.find("kriging") != std::string::npos);
  CHECK(cli({"baseline", "--data", (dir / "missing").string(), "--method", "tin"}) == 1);
  CHECK(cli({"frobnicate"}) == 2);
  CHECK(cli({"simulate", "--out", a, "--set", "lag=many"}) == 2);

  const auto ckpt = (dir / "m.ckpt").string();
  REQUIRE(cli(concat({"train", "--data", a, "--out", ckpt, "--steps", "2", "--ablate", "no_csta"},
                     toy_train_settings()),
              &text) == 0);
  const auto loaded = load_checkpoint(ckpt);
  CHECK(loaded.config.ablation.no_csta_geo);
  bool recorded = false;
  for (const auto& [k, v] : train_config_snapshot(loaded.config)) recorded |= k == "ablate" && v == "no_csta_geo";
  CHECK(recorded);

  const auto field = (dir / "field.csv").string();
  CHECK(cli({"reconstruct", "--data", a, "--checkpoint", ckpt, "--out", field}) == 0);
  CHECK(cli({"render", "--field", field, "--data", a, "--out", (dir / "f.ppm").string()}) == 0);
  CHECK(slurp(dir / "f.ppm").rfind("P6\n64 64\n255\n", 0) == 0);
  const auto eval = (dir / "eval.csv").string();
  CHECK(cli({"evaluate", "--data", a, "--checkpoint", ckpt, "--report", eval}) == 0);
  CHECK(slurp(eval).rfind(MetricsReport::csv_header() + "\nrainrecon,", 0) == 0);
  fs::remove_all(dir);
}
