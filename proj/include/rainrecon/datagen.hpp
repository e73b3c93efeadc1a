#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rainrecon/baselines.hpp"
#include "rainrecon/core.hpp"

namespace rainrecon {

// Parameters of the synthetic storm generator. Storm cells are anisotropic
// Gaussians in linear reflectivity Z that advect at a common velocity and
// wax and wane over a Gaussian lifecycle. The surface field is the Z-R rain
// of the reflectivity `lag_steps` earlier, shifted by the tilt vector,
// scaled by (1 - evaporation) and perturbed by log-normal noise.
struct StormConfig {
  GridGeoref georef{0.0, 0.0, 32.0, 32.0, 32, 32};
  int steps = 24;
  double timestep_minutes = 10.0;

  int cell_count = 5;
  double min_peak_dbz = 35.0;
  double max_peak_dbz = 55.0;
  double min_sigma_cells = 2.0;
  double max_sigma_cells = 5.0;
  double min_lifetime_steps = 4.0;
  double max_lifetime_steps = 10.0;
  double advection_u = 0.8;  // cells per step along x
  double advection_v = 0.4;  // cells per step along y

  int lag_steps = 0;
  int tilt_x = 0;  // cells
  int tilt_y = 0;
  double evaporation = 0.0;

  int gauge_count = 40;
  double gauge_noise = 0.0;      // sigma of log-normal multiplicative noise
  double radar_noise_dbz = 0.0;  // additive Gaussian noise on observed reflectivity
  ZRParams zr;
  std::string units = "km";
  std::uint64_t seed = 0;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;
};

struct Dataset {
  RadarSequence radar;
  StationSeries gauges;
  std::optional<std::vector<float>> truth;  // T x H x W, mm/h
  std::string units = "km";

  int steps() const { return radar.steps(); }
  void validate() const;
};

Dataset simulate_storm(const StormConfig& config);

// Directory layout: meta.txt, radar.f32, gauges.csv and optional truth.f32.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

enum class AggregationRule { mean, sum };

struct LoadOptions {
  // Consecutive steps merged into one; 1 keeps native resolution.
  int aggregate_factor = 1;
  AggregationRule rule = AggregationRule::mean;
};

Dataset load_dataset(const std::filesystem::path& dir, const LoadOptions& options = {});

// Merges blocks of `factor` steps. Reflectivity is averaged in dBZ; gauge
// and truth rainfall follow `rule`. A merged gauge value is observed only if
// every constituent was. Trailing partial blocks are dropped.
Dataset aggregate_steps(const Dataset& ds, int factor, AggregationRule rule);

AggregationRule parse_aggregation_rule(const std::string& name);

// Number of leading steps in the training side: floor(train_frac * T).
int chronological_split_index(int steps, double train_frac);
std::pair<Dataset, Dataset> chronological_split(const Dataset& ds, double train_frac);
Dataset slice_steps(const Dataset& ds, int begin, int end);

struct StationPartition {
  StationSeries visible;
  StationSeries held_out;
  std::vector<std::size_t> visible_index;   // positions in the input series
  std::vector<std::size_t> held_out_index;
};

// Moves ceil(ratio * N) randomly chosen stations to held_out. Both sides keep
// the input order.
StationPartition mask_stations(const StationSeries& series, double ratio, std::uint64_t seed);

}  // namespace rainrecon
