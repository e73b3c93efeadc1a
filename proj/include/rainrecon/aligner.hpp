#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rainrecon/autograd.hpp"
#include "rainrecon/core.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon {

enum class Modality : std::uint8_t { radar, aws };

// Token latents [L, D] with per-token step index, position and modality.
struct TokenSet {
  ag::Var tokens;
  std::vector<int> steps;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<Modality> modality;

  std::size_t size() const { return steps.size(); }
};

// Radar block first, then the station block; features [L_r + L_s, 2D].
struct AlignedMemory {
  ag::Var tokens;
  std::vector<int> steps;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<Modality> modality;
  std::size_t radar_count = 0;

  std::size_t size() const { return steps.size(); }
};

// Tokens ordered by step, then patch row, then patch column. Each token
// projects the patch flattened in (channel, row, column) order; its
// position is the patch centre. feat: [T, C, H, W]; proj: C*p*p -> D.
TokenSet patchify_project(const ag::Var& feat, std::size_t patch, const GridGeoref& georef,
                          const Linear& proj);

// Tokens ordered station-major, time-minor. nodes: [N' * T, D_in].
TokenSet flatten_project(const ag::Var& nodes, std::size_t steps, const StationSet& stations,
                         const Linear& proj);

struct CrossAttentionParams {
  Linear query, key, value, output;
  ag::Var distance_scale;  // beta >= 0 in the bias -beta * d^2 (normalized coordinates)

  static CrossAttentionParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                     Rng& rng, double initial_distance_scale = 4.0);
};

struct AttentionOptions {
  std::size_t heads = 4;
  bool distance_bias = true;
};

// Multi-head scaled dot-product attention of `queries` over `keys`, with an
// optional additive bias -beta * |pos_q - pos_k|^2 measured in coordinates
// normalized by the georef extent. Optionally returns per-head weights.
ag::Var cross_attention(const TokenSet& queries, const TokenSet& keys, const CrossAttentionParams& p,
                        const AttentionOptions& options, const GridGeoref& georef,
                        std::vector<ag::Var>* weights = nullptr);

// E_RS (radar queries over station keys) and E_SR (the reverse). Throws
// DomainError when either side is empty.
std::pair<ag::Var, ag::Var> bidirectional_cross_attention(const TokenSet& radar, const TokenSet& aws,
                                                          const CrossAttentionParams& radar_to_aws,
                                                          const CrossAttentionParams& aws_to_radar,
                                                          const AttentionOptions& options,
                                                          const GridGeoref& georef);

// [E_RS | H_r] stacked above [E_SR | H_s]. Either block may be empty.
AlignedMemory fuse_and_concat(const TokenSet& radar, const TokenSet& aws, const ag::Var& e_rs,
                              const ag::Var& e_sr);

}  // namespace rainrecon
