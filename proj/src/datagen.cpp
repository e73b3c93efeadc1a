#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "rainrecon/datagen.hpp"
#include "rainrecon/errors.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon {

void StormConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("storm config: " + msg); };
  if (steps < 1) fail("steps must be positive");
  if (!(timestep_minutes > 0.0)) fail("timestep_minutes must be positive");
  if (lag_steps < 0) fail("lag_steps must be non-negative");
  if (lag_steps >= steps) fail("lag_steps must be smaller than steps");
  if (!(evaporation >= 0.0 && evaporation <= 1.0)) fail("evaporation must lie in [0, 1]");
  if (cell_count < 1) fail("cell_count must be positive");
  if (gauge_count < 1) fail("gauge_count must be positive");
  if (static_cast<std::size_t>(gauge_count) > georef.cell_count()) fail("more gauges than grid cells");
  if (!(min_peak_dbz <= max_peak_dbz)) fail("peak dBZ range inverted");
  if (!(min_sigma_cells > 0.0 && min_sigma_cells <= max_sigma_cells)) fail("bad sigma range");
  if (!(min_lifetime_steps > 0.0 && min_lifetime_steps <= max_lifetime_steps)) fail("bad lifetime range");
  if (gauge_noise < 0.0 || radar_noise_dbz < 0.0) fail("noise levels must be non-negative");
  if (!(zr.a > 0.0 && zr.b > 0.0)) fail("Z-R parameters must be positive");
}

void Dataset::validate() const {
  radar.validate();
  gauges.validate();
  if (gauges.steps != radar.steps()) throw DomainError("dataset: gauge and radar step counts differ");
  validate_stations(gauges.stations, radar.georef);
  if (truth && truth->size() != radar.values.size()) throw DomainError("dataset: truth shape mismatch");
}

namespace {

struct StormCell {
  double peak_z;
  double x0, y0;  // grid units at t = 0
  double sigma_major, sigma_minor;
  double cos_theta, sin_theta;
  double t_peak, t_sigma;
};

class StormField {
 public:
  StormField(const StormConfig& cfg, Rng& rng) : cfg_(cfg) {
    const double w = cfg.georef.width(), h = cfg.georef.height();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < cfg.cell_count; ++k) {
      StormCell c{};
      const double peak_dbz = cfg.min_peak_dbz + (cfg.max_peak_dbz - cfg.min_peak_dbz) * unit(rng);
      c.peak_z = std::pow(10.0, peak_dbz / 10.0);
      c.t_peak = cfg.steps * unit(rng);
      c.t_sigma = 0.5 * (cfg.min_lifetime_steps +
                         (cfg.max_lifetime_steps - cfg.min_lifetime_steps) * unit(rng));
      const double px = w * unit(rng), py = h * unit(rng);
      c.x0 = px - cfg.advection_u * c.t_peak;
      c.y0 = py - cfg.advection_v * c.t_peak;
      const double s1 = cfg.min_sigma_cells + (cfg.max_sigma_cells - cfg.min_sigma_cells) * unit(rng);
      const double s2 = cfg.min_sigma_cells + (cfg.max_sigma_cells - cfg.min_sigma_cells) * unit(rng);
      c.sigma_major = std::max(s1, s2);
      c.sigma_minor = std::min(s1, s2);
      const double theta = std::numbers::pi * unit(rng);
      c.cos_theta = std::cos(theta);
      c.sin_theta = std::sin(theta);
      cells_.push_back(c);
    }
  }

  // Clean reflectivity (dBZ) at fractional step t and grid coordinates (gx, gy).
  double dbz(double t, double gx, double gy) const {
    double z = 0.0;
    for (const auto& c : cells_) {
      const double dt = (t - c.t_peak) / c.t_sigma;
      const double dx = gx - (c.x0 + cfg_.advection_u * t);
      const double dy = gy - (c.y0 + cfg_.advection_v * t);
      const double u = (c.cos_theta * dx + c.sin_theta * dy) / c.sigma_major;
      const double v = (-c.sin_theta * dx + c.cos_theta * dy) / c.sigma_minor;
      z += c.peak_z * std::exp(-0.5 * (dt * dt + u * u + v * v));
    }
    return 10.0 * std::log10(z + kFloorZ);
  }

 private:
  static inline const double kFloorZ = std::pow(10.0, kReflectivityFloorDbz / 10.0);
  const StormConfig& cfg_;
  std::vector<StormCell> cells_;
};

}  // namespace

Dataset simulate_storm(const StormConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  StormField field(cfg, rng);

  const int h = cfg.georef.height(), w = cfg.georef.width(), steps = cfg.steps;
  const std::size_t cells = cfg.georef.cell_count();

  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(cfg.gauge_count);

  Dataset ds;
  ds.units = cfg.units;
  ds.radar.georef = cfg.georef;
  for (int t = 0; t < steps; ++t) ds.radar.timestamps.push_back(t * cfg.timestep_minutes);
  ds.radar.values.resize(cells * steps);
  std::vector<double> rain(cells * steps);
  std::vector<float> truth(cells * steps);

  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < steps; ++t) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double clean = field.dbz(t, c + 0.5, r + 0.5);
        const double noise = cfg.radar_noise_dbz > 0.0 ? cfg.radar_noise_dbz * normal(rng) : 0.0;
        ds.radar.values[(static_cast<std::size_t>(t) * h + r) * w + c] = static_cast<float>(clean + noise);
      }
    }
  }
  const double keep = 1.0 - cfg.evaporation;
  for (int t = 0; t < steps; ++t) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double src_t = t - cfg.lag_steps;
        const double src_x = c - cfg.tilt_x + 0.5, src_y = r - cfg.tilt_y + 0.5;
        // Round through float so the undistorted case matches the stored radar exactly.
        const double src_dbz = static_cast<float>(field.dbz(src_t, src_x, src_y));
        double value = zr_rain_from_dbz(src_dbz, cfg.zr) * keep;
        if (cfg.gauge_noise > 0.0) value *= std::exp(cfg.gauge_noise * normal(rng));
        const std::size_t idx = (static_cast<std::size_t>(t) * h + r) * w + c;
        rain[idx] = value;
        truth[idx] = static_cast<float>(value);
      }
    }
  }
  ds.truth = std::move(truth);

  ds.gauges.steps = steps;
  for (std::size_t g = 0; g < order.size(); ++g) {
    const int r = static_cast<int>(order[g] / w), c = static_cast<int>(order[g] % w);
    std::ostringstream id;
    id << "G" << std::setw(3) << std::setfill('0') << g;
    ds.gauges.stations.push_back(
        {id.str(), cfg.georef.cell_center_x(c), cfg.georef.cell_center_y(r), false});
    for (int t = 0; t < steps; ++t) {
      ds.gauges.rain.push_back(rain[(static_cast<std::size_t>(t) * h + r) * w + c]);
      ds.gauges.mask.push_back(1);
    }
  }
  return ds;
}

int chronological_split_index(int steps, double train_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw DomainError("split fraction must lie in (0, 1)");
  if (steps < 2) throw DomainError("split needs at least 2 steps");
  const int n = static_cast<int>(std::floor(train_frac * steps + 1e-9));
  if (n < 1 || n >= steps) {
    std::ostringstream msg;
    msg << "split of " << steps << " steps at " << train_frac << " leaves an empty side";
    throw DomainError(msg.str());
  }
  return n;
}

Dataset slice_steps(const Dataset& ds, int begin, int end) {
  if (begin < 0 || end > ds.steps() || begin >= end) throw DomainError("dataset: bad step range");
  Dataset out;
  out.units = ds.units;
  out.radar.georef = ds.radar.georef;
  out.radar.timestamps.assign(ds.radar.timestamps.begin() + begin, ds.radar.timestamps.begin() + end);
  const std::size_t frame = ds.radar.georef.cell_count();
  out.radar.values.assign(ds.radar.values.begin() + begin * frame, ds.radar.values.begin() + end * frame);
  out.gauges = ds.gauges.slice_steps(begin, end);
  if (ds.truth) {
    out.truth = std::vector<float>(ds.truth->begin() + begin * frame, ds.truth->begin() + end * frame);
  }
  return out;
}

std::pair<Dataset, Dataset> chronological_split(const Dataset& ds, double train_frac) {
  const int n = chronological_split_index(ds.steps(), train_frac);
  return {slice_steps(ds, 0, n), slice_steps(ds, n, ds.steps())};
}

StationPartition mask_stations(const StationSeries& series, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("mask ratio must lie in (0, 1)");
  const std::size_t n = series.size();
  const auto held = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  if (held >= n) {
    std::ostringstream msg;
    msg << "masking " << held << " of " << n << " stations leaves none visible";
    throw DomainError(msg.str());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  StationPartition part;
  part.held_out_index.assign(order.begin(), order.begin() + held);
  part.visible_index.assign(order.begin() + held, order.end());
  std::sort(part.held_out_index.begin(), part.held_out_index.end());
  std::sort(part.visible_index.begin(), part.visible_index.end());
  part.visible = series.subset(part.visible_index);
  part.held_out = series.subset(part.held_out_index);
  return part;
}

}  // namespace rainrecon
