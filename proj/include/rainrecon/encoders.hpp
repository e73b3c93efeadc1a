#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rainrecon/autograd.hpp"
#include "rainrecon/baselines.hpp"
#include "rainrecon/core.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon {

// Tensor layouts used throughout the encoders:
//   radar input / FeatureVolume : [T, C, H, W]
//   BoundarySequence            : [T, H, W] (plain array)
//   BoundaryFeatures            : [T, Cb, H, W]
//   NodeFeatures                : [N' * T, D], station-major, time-minor

// Maps reflectivity in dBZ to the model's input scale: (dbz + 32) / 64.
double normalize_reflectivity(double dbz);

// Normalized radar frames [T, 1, H, W] as a constant tensor.
ag::Var radar_input(const RadarSequence& radar);

struct StscParams {
  ag::Var spatial_kernel;   // [C, 1, k, k]
  ag::Var spatial_bias;     // [C]
  ag::Var temporal_kernel;  // [C, kt]
  ag::Var temporal_bias;    // [C]

  static StscParams create(ParamStore& store, const std::string& prefix, std::size_t channels,
                           std::size_t kernel, std::size_t temporal_kernel, Rng& rng);
};

// Per-frame spatial convolution followed by a per-cell depthwise temporal
// convolution, both zero "same" padded. x: [T, 1, H, W] -> [T, C, H, W].
// Throws ConfigError when the temporal kernel exceeds 2T - 1.
ag::Var stsc_forward(const ag::Var& x, const StscParams& p);

struct InceptionBlock {
  ag::Var conv1, bias1;  // [C, C, 1, 1]
  ag::Var conv3, bias3;  // [C, C, 3, 3]
  ag::Var conv5, bias5;  // [C, C, 5, 5]
  ag::Var proj, proj_bias;  // [C, 3C, 1, 1]

  static InceptionBlock create(ParamStore& store, const std::string& prefix, std::size_t channels,
                               Rng& rng);
  // x + proj(ELU(concat(conv1 x, conv3 x, conv5 x))).
  ag::Var operator()(const ag::Var& x) const;
};

struct InceptionParams {
  InceptionBlock full, half, quarter;
  ag::Var phi, phi_bias;  // [C, C, 1, 1]

  static InceptionParams create(ParamStore& store, const std::string& prefix, std::size_t channels,
                                Rng& rng);
};

// ELU(phi(block_full(x) + up2(block_half(pool2 x)) + up4(block_quarter(pool4 x)))).
// Throws ShapeError unless H and W are divisible by 4.
ag::Var multiscale_inception(const ag::Var& x, const InceptionParams& p);

struct EmbeddingTables {
  ag::Var temporal;  // [T_max, D]
  ag::Var spatial;   // [rows, D]

  static EmbeddingTables create(ParamStore& store, const std::string& prefix, std::size_t max_steps,
                                std::size_t rows, std::size_t dim, Rng& rng, double stddev = 0.1);
};

// out[t, :, h, w] = x[t, :, h, w] + temporal[t] + spatial[h * W + w].
// Throws ConfigError when the window exceeds the temporal table.
ag::Var add_spacetime_embeddings(const ag::Var& x, const EmbeddingTables& tables);

// Four-neighbour Laplacian per frame with replicate padding. values holds
// T x H x W samples; H and W must be at least 3.
std::vector<double> laplacian_boundaries(std::span<const double> values, int steps, int height,
                                         int width);
// Applied to normalized reflectivity.
std::vector<double> laplacian_boundaries(const RadarSequence& radar);

struct ConvLstmParams {
  ag::Var input_kernel;      // [4Cb, 1, k, k]; gate order i, f, o, g
  ag::Var recurrent_kernel;  // [4Cb, Cb, k, k]
  ag::Var bias;              // [4Cb]; forget gate initialized to 1

  std::size_t hidden() const { return recurrent_kernel.dim(1); }
  static ConvLstmParams create(ParamStore& store, const std::string& prefix, std::size_t hidden,
                               std::size_t kernel, Rng& rng);
};

// b: [T, 1, H, W] -> hidden states [T, Cb, H, W] from a zero initial state.
// Hidden state t depends on frames 0..t only. Throws ConfigError when the
// kernel is larger than the grid.
ag::Var convlstm_forward(const ag::Var& b, const ConvLstmParams& p);

// `count` virtual stations placed uniformly inside the georef; each series
// is the Z-R rain rate bilinearly interpolated between the four surrounding
// cell centres (clamped at the border). Ids are "V000", "V001", ...
StationSeries interpolate_virtual_nodes(const RadarSequence& radar, int count, std::uint64_t seed,
                                        const ZRParams& zr = {});
// Bilinear Z-R rain at (x, y) for step t.
double interpolate_zr(const RadarSequence& radar, int t, double x, double y, const ZRParams& zr = {});

struct AwsInputParams {
  Linear input;  // [2 + 2D] -> D
  static AwsInputParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                               Rng& rng);
};

// Normalized gauge values with missing entries imputed to 0. values and
// mask are N' x T station-major.
struct NodeInputs {
  std::size_t nodes = 0;
  std::size_t steps = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> table_rows;  // spatial-table row of each node
};

// Builds NodeInputs from a series. Unobserved entries become 0 without
// reading the stored value.
NodeInputs make_node_inputs(const StationSeries& series, const RainNormalizer& norm,
                            std::vector<std::size_t> table_rows);

// ReLU(W_in [g; mask; e_time[t]; e_space[node]]) -> [N' * T, D].
ag::Var aws_input_embed(const NodeInputs& in, const EmbeddingTables& tables, const AwsInputParams& p);

struct GatGruParams {
  ag::Var w;           // [D, D] shared node transform
  ag::Var att_src;     // [D, 1]
  ag::Var att_dst;     // [D, 1]
  ag::Var gat_bias;    // [D]
  ag::Var gru_input;   // [D, 3D] columns r, u, n
  ag::Var gru_hidden;  // [D, 3D]
  ag::Var gru_bias;    // [3D]
  ag::Var gru_hidden_bias;  // [3D]

  static GatGruParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                             Rng& rng);
};

// Attention neighbourhoods including the node itself, sorted ascending.
std::vector<std::vector<int>> attention_groups(const Adjacency& adj);

// One layer: per step t, single-head graph attention over each node's
// neighbourhood followed by ELU, then a GRU update against the node's
// hidden state at t - 1 (zero at t = 0). x: [N' * T, D] station-major.
ag::Var gat_gru_layer(const ag::Var& x, std::size_t steps, const std::vector<std::vector<int>>& groups,
                      const GatGruParams& p);

// aws_input_embed followed by the given layers (at least one).
ag::Var aws_encode(const NodeInputs& in, const Adjacency& adj, const EmbeddingTables& tables,
                   const AwsInputParams& input, const std::vector<GatGruParams>& layers);

}  // namespace rainrecon
