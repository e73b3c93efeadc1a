#include "rainrecon/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rainrecon/errors.hpp"

namespace rainrecon {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError("setting '" + key + "': expected a number, found '" + v + "'");
  }
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  long long n = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("setting '" + key + "': expected an integer, found '" + v + "'");
  }
  return n;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long n = to_int(key, v);
  if (n < 0) throw ConfigError("setting '" + key + "': must be non-negative");
  return static_cast<std::size_t>(n);
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  std::uint64_t n = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("setting '" + key + "': expected an unsigned integer, found '" + v + "'");
  }
  return n;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("setting '" + key + "': expected a boolean, found '" + v + "'");
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (std::size_t i = 1; i < line.size(); ++i) {
      if (line[i] == '#' && (line[i - 1] == ' ' || line[i - 1] == '\t')) {
        line.resize(i);
        break;
      }
    }
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || trim(t.substr(0, eq)).empty()) {
      throw FormatError(source + ": line " + std::to_string(line_no) + " is not key=value");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  return parse_key_values(in, path.string());
}

void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto& m = cfg.model;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"steps", [&](const std::string& v) { cfg.steps = to_count(key, v); }},
      {"batch_size", [&](const std::string& v) { cfg.batch_size = to_count(key, v); }},
      {"peak_lr", [&](const std::string& v) { cfg.peak_lr = to_double(key, v); }},
      {"weight_decay", [&](const std::string& v) { cfg.weight_decay = to_double(key, v); }},
      {"warmup_fraction", [&](const std::string& v) { cfg.warmup_fraction = to_double(key, v); }},
      {"grad_clip", [&](const std::string& v) { cfg.grad_clip = to_double(key, v); }},
      {"lambda", [&](const std::string& v) { cfg.loss.lambda = to_double(key, v); }},
      {"geo_pairs", [&](const std::string& v) { cfg.loss.pairs = to_count(key, v); }},
      {"train_frac", [&](const std::string& v) { cfg.train_frac = to_double(key, v); }},
      {"mask_ratio", [&](const std::string& v) { cfg.mask_ratio = to_double(key, v); }},
      {"input_drop", [&](const std::string& v) { cfg.input_drop = to_double(key, v); }},
      {"seed", [&](const std::string& v) { cfg.seed = to_seed(key, v); }},
      {"mask_seed", [&](const std::string& v) { cfg.mask_seed = to_seed(key, v); }},
      {"ablate",
       [&](const std::string& v) {
         cfg.ablation = {};
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           if (!trim(item).empty()) enable_ablation(cfg.ablation, trim(item));
         }
       }},
      {"channels", [&](const std::string& v) { m.channels = to_count(key, v); }},
      {"boundary_channels", [&](const std::string& v) { m.boundary_channels = to_count(key, v); }},
      {"dim", [&](const std::string& v) { m.dim = to_count(key, v); }},
      {"patch", [&](const std::string& v) { m.patch = to_count(key, v); }},
      {"heads", [&](const std::string& v) { m.heads = to_count(key, v); }},
      {"aws_layers", [&](const std::string& v) { m.aws_layers = to_count(key, v); }},
      {"kernel", [&](const std::string& v) { m.kernel = to_count(key, v); }},
      {"temporal_kernel", [&](const std::string& v) { m.temporal_kernel = to_count(key, v); }},
      {"window", [&](const std::string& v) { m.window = to_count(key, v); }},
      {"query_bands", [&](const std::string& v) { m.query_bands = to_count(key, v); }},
      {"boundary_radius", [&](const std::string& v) { m.boundary_radius = to_double(key, v); }},
      {"virtual_ratio", [&](const std::string& v) { m.virtual_ratio = to_double(key, v); }},
      {"knn", [&](const std::string& v) { m.knn = static_cast<int>(to_int(key, v)); }},
      {"distance_bias", [&](const std::string& v) { m.distance_bias = to_bool(key, v); }},
      {"distance_scale", [&](const std::string& v) { m.distance_scale = to_double(key, v); }},
      {"causal_distance_bias", [&](const std::string& v) { m.causal_distance_bias = to_bool(key, v); }},
      {"causal_distance_scale", [&](const std::string& v) { m.causal_distance_scale = to_double(key, v); }},
      {"rain_scaling",
       [&](const std::string& v) {
         try {
           m.scaling = parse_rain_scaling(v);
         } catch (const std::exception& e) {
           throw ConfigError("setting '" + key + "': " + e.what());
         }
       }},
      {"rain_scale", [&](const std::string& v) { m.rain_scale = to_double(key, v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw UsageError("unknown training setting '" + key + "'");
  it->second(value);
}

void apply_storm_setting(StormConfig& cfg, const std::string& key, const std::string& value) {
  const auto& g = cfg.georef;
  double x_min = g.x_min(), y_min = g.y_min(), x_max = g.x_max(), y_max = g.y_max();
  int height = g.height(), width = g.width();
  bool grid = true;
  if (key == "height") {
    height = static_cast<int>(to_int(key, value));
  } else if (key == "width") {
    width = static_cast<int>(to_int(key, value));
  } else if (key == "x_min") {
    x_min = to_double(key, value);
  } else if (key == "x_max") {
    x_max = to_double(key, value);
  } else if (key == "y_min") {
    y_min = to_double(key, value);
  } else if (key == "y_max") {
    y_max = to_double(key, value);
  } else {
    grid = false;
  }
  if (grid) {
    cfg.georef = GridGeoref(x_min, y_min, x_max, y_max, height, width);
    return;
  }
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"steps", [&](const std::string& v) { cfg.steps = static_cast<int>(to_int(key, v)); }},
      {"timestep_minutes", [&](const std::string& v) { cfg.timestep_minutes = to_double(key, v); }},
      {"cells", [&](const std::string& v) { cfg.cell_count = static_cast<int>(to_int(key, v)); }},
      {"min_peak_dbz", [&](const std::string& v) { cfg.min_peak_dbz = to_double(key, v); }},
      {"max_peak_dbz", [&](const std::string& v) { cfg.max_peak_dbz = to_double(key, v); }},
      {"min_sigma", [&](const std::string& v) { cfg.min_sigma_cells = to_double(key, v); }},
      {"max_sigma", [&](const std::string& v) { cfg.max_sigma_cells = to_double(key, v); }},
      {"min_lifetime", [&](const std::string& v) { cfg.min_lifetime_steps = to_double(key, v); }},
      {"max_lifetime", [&](const std::string& v) { cfg.max_lifetime_steps = to_double(key, v); }},
      {"advection_u", [&](const std::string& v) { cfg.advection_u = to_double(key, v); }},
      {"advection_v", [&](const std::string& v) { cfg.advection_v = to_double(key, v); }},
      {"lag", [&](const std::string& v) { cfg.lag_steps = static_cast<int>(to_int(key, v)); }},
      {"tilt_x", [&](const std::string& v) { cfg.tilt_x = static_cast<int>(to_int(key, v)); }},
      {"tilt_y", [&](const std::string& v) { cfg.tilt_y = static_cast<int>(to_int(key, v)); }},
      {"tilt",
       [&](const std::string& v) {
         cfg.tilt_x = static_cast<int>(to_int(key, v));
         cfg.tilt_y = cfg.tilt_x;
       }},
      {"evaporation", [&](const std::string& v) { cfg.evaporation = to_double(key, v); }},
      {"gauges", [&](const std::string& v) { cfg.gauge_count = static_cast<int>(to_int(key, v)); }},
      {"gauge_noise", [&](const std::string& v) { cfg.gauge_noise = to_double(key, v); }},
      {"radar_noise", [&](const std::string& v) { cfg.radar_noise_dbz = to_double(key, v); }},
      {"zr_a", [&](const std::string& v) { cfg.zr.a = to_double(key, v); }},
      {"zr_b", [&](const std::string& v) { cfg.zr.b = to_double(key, v); }},
      {"units", [&](const std::string& v) { cfg.units = v; }},
      {"seed", [&](const std::string& v) { cfg.seed = to_seed(key, v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw UsageError("unknown storm setting '" + key + "'");
  it->second(value);
}

KeyValues train_config_snapshot(const TrainConfig& cfg) {
  const auto& m = cfg.model;
  std::string ablate;
  for (const auto& n : cfg.ablation.names()) ablate += (ablate.empty() ? "" : ",") + n;
  return {
      {"steps", std::to_string(cfg.steps)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"peak_lr", full(cfg.peak_lr)},
      {"weight_decay", full(cfg.weight_decay)},
      {"warmup_fraction", full(cfg.warmup_fraction)},
      {"grad_clip", full(cfg.grad_clip)},
      {"lambda", full(cfg.loss.lambda)},
      {"geo_pairs", std::to_string(cfg.loss.pairs)},
      {"train_frac", full(cfg.train_frac)},
      {"mask_ratio", full(cfg.mask_ratio)},
      {"input_drop", full(cfg.input_drop)},
      {"seed", std::to_string(cfg.seed)},
      {"mask_seed", std::to_string(cfg.partition_seed())},
      {"ablate", ablate},
      {"channels", std::to_string(m.channels)},
      {"boundary_channels", std::to_string(m.boundary_channels)},
      {"dim", std::to_string(m.dim)},
      {"patch", std::to_string(m.patch)},
      {"heads", std::to_string(m.heads)},
      {"aws_layers", std::to_string(m.aws_layers)},
      {"kernel", std::to_string(m.kernel)},
      {"temporal_kernel", std::to_string(m.temporal_kernel)},
      {"window", std::to_string(m.window)},
      {"query_bands", std::to_string(m.query_bands)},
      {"boundary_radius", full(m.boundary_radius)},
      {"virtual_ratio", full(m.virtual_ratio)},
      {"knn", std::to_string(m.knn)},
      {"distance_bias", m.distance_bias ? "1" : "0"},
      {"distance_scale", full(m.distance_scale)},
      {"causal_distance_bias", m.causal_distance_bias ? "1" : "0"},
      {"causal_distance_scale", full(m.causal_distance_scale)},
      {"rain_scaling", to_string(m.scaling)},
      {"rain_scale", full(m.rain_scale)},
  };
}

TrainConfig train_config_from_snapshot(const KeyValues& kv) {
  TrainConfig cfg;
  for (const auto& [k, v] : kv) apply_train_setting(cfg, k, v);
  return cfg;
}

}  // namespace rainrecon
