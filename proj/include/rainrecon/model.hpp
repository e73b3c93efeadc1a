#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rainrecon/aligner.hpp"
#include "rainrecon/core.hpp"
#include "rainrecon/datagen.hpp"
#include "rainrecon/decoder.hpp"
#include "rainrecon/encoders.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon {

// Components removed by an ablation run.
struct Ablation {
  bool no_radar = false;      // radar encoder, boundary encoder, virtual nodes, radar tokens
  bool no_aws = false;        // station encoder and station tokens
  bool no_rfe = false;        // boundary fusion in the decoder
  bool no_bpa_bidir = false;  // keeps station-to-radar attention only (E_RS = 0)
  bool no_csta_geo = false;   // GeoLoss weight forced to 0

  bool any() const { return no_radar || no_aws || no_rfe || no_bpa_bidir || no_csta_geo; }
  // Canonical names of the enabled flags.
  std::vector<std::string> names() const;
};

// Sets the flag called `name` ("no_csta" is accepted for no_csta_geo).
// Throws UsageError for unknown names.
void enable_ablation(Ablation& ablation, const std::string& name);
const std::vector<std::string>& ablation_names();

struct ModelConfig {
  std::size_t channels = 4;           // radar feature channels C
  std::size_t boundary_channels = 4;  // ConvLSTM hidden channels
  std::size_t dim = 16;               // token width D; memory width is 2D
  std::size_t patch = 4;
  std::size_t heads = 4;
  std::size_t aws_layers = 2;
  std::size_t kernel = 3;
  std::size_t temporal_kernel = 3;
  std::size_t window = 6;             // steps per input window
  std::size_t query_bands = 4;
  double boundary_radius = 2.0;       // cells
  double virtual_ratio = 0.5;         // virtual nodes per gauge
  int knn = 8;
  bool distance_bias = true;
  double distance_scale = 4.0;        // initial beta of the alignment bias
  bool causal_distance_bias = true;
  double causal_distance_scale = 200.0;  // initial gamma of the decoder attention bias
  RainScaling scaling = RainScaling::log1p;
  double rain_scale = 1.0;

  void validate() const;
};

// Dataset-dependent sizes fixed at construction.
struct ModelLayout {
  GridGeoref georef;
  std::size_t gauge_rows = 0;     // one station embedding per dataset gauge
  std::size_t virtual_count = 0;
  std::uint64_t virtual_seed = 0;
};

// One input window. Station i of `gauges` uses spatial-table row
// gauge_rows[i]; its series covers the same steps as `radar`.
struct WindowInput {
  RadarSequence radar;
  StationSeries gauges;
  std::vector<std::size_t> gauge_rows;
};

// Window ending at `end_step` (inclusive) with the given dataset stations as
// the only gauge input.
WindowInput make_window(const Dataset& ds, const std::vector<std::size_t>& stations, int end_step,
                        std::size_t window);

struct EncodedWindow {
  AlignedMemory memory;
  ag::Var boundary;  // [T, Cb, H, W]; undefined when the boundary branch is off
  std::size_t steps = 0;
};

struct Prediction {
  ag::Var rain;  // [Q, 1], normalized domain
  CausalPrior prior;
};

class ReconstructionModel {
 public:
  ReconstructionModel(const ModelConfig& config, const Ablation& ablation, const ModelLayout& layout,
                      std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Ablation& ablation() const { return ablation_; }
  const ModelLayout& layout() const { return layout_; }
  const RainNormalizer& normalizer() const { return normalizer_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  EncodedWindow encode(const WindowInput& input) const;
  // All queries must share one step.
  Prediction decode(const EncodedWindow& enc, const std::vector<QueryPoint>& queries) const;
  // Names of parameters belonging to the radar and boundary encoders.
  std::vector<std::string> radar_parameter_names() const;

 private:
  ModelConfig config_;
  Ablation ablation_;
  ModelLayout layout_;
  RainNormalizer normalizer_;
  ParamStore store_;

  StscParams stsc_;
  InceptionParams inception_;
  EmbeddingTables radar_tables_;
  ConvLstmParams convlstm_;
  EmbeddingTables aws_tables_;
  AwsInputParams aws_input_;
  std::vector<GatGruParams> aws_layers_;
  Linear radar_proj_;
  Linear aws_proj_;
  CrossAttentionParams radar_to_aws_;
  CrossAttentionParams aws_to_radar_;
  QueryEncoderParams query_;
  BoundaryFusionParams fusion_;
  CausalAttentionParams causal_;
  PredictorParams predictor_;
};

// Dense field at window step `step` (default: last) by querying every cell
// centre; values in mm/h.
RainField reconstruct_field(const ReconstructionModel& model, const WindowInput& input, int step = -1);

}  // namespace rainrecon
