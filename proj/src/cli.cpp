#include "rainrecon/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>

#include "rainrecon/config.hpp"
#include "rainrecon/datagen.hpp"
#include "rainrecon/errors.hpp"
#include "rainrecon/harness.hpp"
#include "rainrecon/heatmap.hpp"

namespace rainrecon {

namespace {

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

struct DataOptions {
  std::string dir;
  int aggregate = 1;
  std::string aggregate_rule = "mean";

  Dataset load() const {
    LoadOptions opts;
    opts.aggregate_factor = aggregate;
    opts.rule = parse_aggregation_rule(aggregate_rule);
    return load_dataset(dir, opts);
  }
};

void add_common(CLI::App* cmd, CommonOptions& c) {
  cmd->add_option("--config", c.config_file, "key=value configuration file");
  cmd->add_option("--set", c.sets, "override a setting (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "random seed");
}

void add_data(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.dir, "dataset directory")->required();
  cmd->add_option("--aggregate", d.aggregate, "merge this many consecutive steps on load")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--aggregate-rule", d.aggregate_rule, "rainfall aggregation rule: mean or sum");
}

// Config file entries followed by --set overrides, in order.
KeyValues gather_settings(const CommonOptions& c) {
  KeyValues kv;
  if (!c.config_file.empty()) kv = read_config_file(c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw FormatError("write failed for " + path);
}

std::string report_csv(const MetricsReport& r) {
  return MetricsReport::csv_header() + "\n" + r.to_csv_row() + "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"rainrecon: rainfall field reconstruction from radar and gauges", "rainrecon"};
  app.require_subcommand(1);

  CommonOptions sim_common;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic storm dataset");
  add_common(sim, sim_common);
  sim->add_option("--out", sim_out, "output directory")->required();

  CommonOptions train_common;
  DataOptions train_data;
  std::string train_out, loss_curve;
  std::vector<std::string> ablations;
  std::optional<std::size_t> train_steps;
  auto* tr = app.add_subcommand("train", "train a reconstruction model");
  add_common(tr, train_common);
  add_data(tr, train_data);
  tr->add_option("--out", train_out, "checkpoint file")->required();
  tr->add_option("--ablate", ablations, "disable a component (no_radar, no_aws, no_rfe, no_bpa_bidir, no_csta_geo)");
  tr->add_option("--steps", train_steps, "optimizer steps");
  tr->add_option("--loss-curve", loss_curve, "write the per-step loss as CSV");

  DataOptions eval_data;
  std::string eval_ckpt, eval_report, eval_text;
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint at held-out stations");
  add_data(ev, eval_data);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--report", eval_report, "CSV report path");
  ev->add_option("--text", eval_text, "text report path");

  DataOptions base_data;
  std::string method, base_report, base_text;
  double train_frac = 0.8, mask_ratio = 0.2;
  std::uint64_t base_seed = 0;
  BaselineOptions base_opts;
  auto* bl = app.add_subcommand("baseline", "score a classical baseline at held-out stations");
  add_data(bl, base_data);
  bl->add_option("--method", method, "tin, tps, idw or zr")->required();
  bl->add_option("--report", base_report, "CSV report path");
  bl->add_option("--text", base_text, "text report path");
  bl->add_option("--train-frac", train_frac, "chronological training fraction");
  bl->add_option("--mask-ratio", mask_ratio, "held-out station fraction");
  bl->add_option("--seed", base_seed, "station masking seed");
  bl->add_option("--tps-smoothing", base_opts.tps_smoothing, "thin-plate spline smoothing");
  bl->add_option("--idw-power", base_opts.idw_power, "inverse distance power");
  bl->add_option("--zr-a", base_opts.zr.a, "Z-R multiplier");
  bl->add_option("--zr-b", base_opts.zr.b, "Z-R exponent");

  DataOptions rec_data;
  std::string rec_ckpt, rec_out, rec_image;
  std::optional<int> rec_step;
  auto* rc = app.add_subcommand("reconstruct", "reconstruct a dense rainfall field");
  add_data(rc, rec_data);
  rc->add_option("--checkpoint", rec_ckpt, "checkpoint file")->required();
  rc->add_option("--step", rec_step, "dataset step to reconstruct (default: last)");
  rc->add_option("--out", rec_out, "field CSV path")->required();
  rc->add_option("--image", rec_image, "optional PPM heatmap path");

  std::string render_field, render_out, render_data;
  HeatmapOptions heat;
  auto* rd = app.add_subcommand("render", "render a field CSV as a PPM heatmap");
  rd->add_option("--field", render_field, "field CSV from reconstruct")->required();
  rd->add_option("--data", render_data, "dataset directory supplying the grid and stations")->required();
  rd->add_option("--out", render_out, "PPM output path")->required();
  rd->add_option("--scale", heat.pixel_scale, "pixels per cell")->check(CLI::PositiveNumber);
  rd->add_option("--vmax", heat.vmax, "colour scale maximum in mm/h (0: field maximum)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*sim) {
      StormConfig cfg;
      for (const auto& [k, v] : gather_settings(sim_common)) apply_storm_setting(cfg, k, v);
      if (sim_common.seed) cfg.seed = *sim_common.seed;
      write_dataset(simulate_storm(cfg), sim_out);
      out << "wrote dataset to " << sim_out << "\n";
    } else if (*tr) {
      TrainConfig cfg;
      for (const auto& [k, v] : gather_settings(train_common)) apply_train_setting(cfg, k, v);
      for (const auto& a : ablations) enable_ablation(cfg.ablation, a);
      if (train_common.seed) cfg.seed = *train_common.seed;
      if (train_steps) cfg.steps = *train_steps;
      const auto ds = train_data.load();
      const auto result = train(cfg, ds);
      save_checkpoint(result.checkpoint, train_out);
      if (!loss_curve.empty()) {
        std::string text = "step,loss\n";
        char buf[64];
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
          std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, result.loss_curve[i]);
          text += buf;
        }
        write_text(loss_curve, text);
      }
      out << "trained " << cfg.steps << " steps, final loss "
          << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
    } else if (*ev) {
      const auto ckpt = load_checkpoint(eval_ckpt);
      const auto model = restore_model(ckpt);
      const auto ds = eval_data.load();
      const auto& c = ckpt.config;
      const auto exp = prepare_experiment(ds, c.train_frac, c.mask_ratio, c.partition_seed());
      const auto report = evaluate(*model, ds, exp);
      if (!eval_report.empty()) write_text(eval_report, report_csv(report));
      if (!eval_text.empty()) write_text(eval_text, report.to_text());
      out << report.to_text();
    } else if (*bl) {
      const auto ds = base_data.load();
      const auto exp = prepare_experiment(ds, train_frac, mask_ratio, base_seed);
      const auto report = run_baseline(method, ds, exp, base_opts);
      if (!base_report.empty()) write_text(base_report, report_csv(report));
      if (!base_text.empty()) write_text(base_text, report.to_text());
      out << report.to_text();
    } else if (*rc) {
      const auto ckpt = load_checkpoint(rec_ckpt);
      const auto model = restore_model(ckpt);
      const auto ds = rec_data.load();
      const auto& c = ckpt.config;
      const auto exp = prepare_experiment(ds, c.train_frac, c.mask_ratio, c.partition_seed());
      const int step = rec_step ? *rec_step : ds.steps() - 1;
      const auto field =
          reconstruct_field(*model, make_window(ds, exp.partition.visible_index, step, ckpt.config.model.window));
      write_field_csv(field, rec_out);
      if (!rec_image.empty()) render_heatmap(field, exp.partition.visible.stations, rec_image);
      out << "wrote field for step " << step << " to " << rec_out << "\n";
    } else if (*rd) {
      const auto ds = load_dataset(render_data);
      const auto field = read_field_csv(render_field, ds.radar.georef);
      render_heatmap(field, ds.gauges.stations, render_out, heat);
      out << "wrote " << render_out << "\n";
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace rainrecon
