#pragma once

#include <vector>

#include "rainrecon/aligner.hpp"
#include "rainrecon/autograd.hpp"
#include "rainrecon/core.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon {

// Location in georef units and the target step within the window.
struct QueryPoint {
  double x = 0.0;
  double y = 0.0;
  int step = 0;
};

// Normalized coordinates followed by sin/cos pairs at frequencies
// 2^k * pi, k = 0..bands-1, for each axis: 2 + 4 * bands values.
std::vector<double> fourier_features(double nx, double ny, std::size_t bands);

struct QueryEncoderParams {
  Linear hidden;    // (2 + 4 * bands) -> D'
  Linear output;    // D' -> D'
  ag::Var time_table;  // [T_max, D']
  std::size_t bands = 0;

  static QueryEncoderParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                   std::size_t bands, std::size_t max_steps, Rng& rng);
};

// q_loc = MLP(fourier(x, y)) + time_table[step] -> [Q, D']. Throws
// DomainError for queries outside the georef.
ag::Var encode_query(const std::vector<QueryPoint>& queries, const GridGeoref& georef,
                     const QueryEncoderParams& p);

struct BoundaryFusionParams {
  Linear query;   // D' -> D'
  Linear key;     // Cb -> D'
  Linear value;   // Cb -> D'
  Linear hidden;  // D' -> D'
  Linear output;  // D' -> D'

  static BoundaryFusionParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                     std::size_t boundary_channels, Rng& rng);
};

// Cells whose centres lie within `radius` cells (Euclidean) of the query's
// cell, in row-major order. Throws ConfigError when radius < 1.
std::vector<int> boundary_neighbourhood(const GridGeoref& georef, double x, double y, double radius);

// q_q = MLP(q_loc + Fuse), where Fuse attends from q_loc over the boundary
// features of the neighbourhood cells at the query step. With `fuse` false
// the attention term is omitted. hb: [T, Cb, H, W].
ag::Var fuse_boundary(const ag::Var& q_loc, const ag::Var& hb, const std::vector<QueryPoint>& queries,
                      const GridGeoref& georef, double radius, const BoundaryFusionParams& p,
                      bool fuse = true);

struct CausalAttentionParams {
  ag::Var w_a;  // [D', D']
  Linear value; // D' -> D'
  ag::Var distance_scale;  // gamma in the optional bias -gamma * d^2 (normalized coordinates)

  static CausalAttentionParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                      Rng& rng, double initial_distance_scale = 0.0);
};

struct CausalPrior {
  ag::Var context;                    // [Q, D']
  ag::Var weights;                    // [Q, A] over the admissible tokens
  std::vector<std::size_t> admissible;  // memory indices of the A columns
};

// Softmax of q_q W_a k_i over the tokens with step <= t_q; all queries share
// t_q. Tokens after t_q are never read. Throws DomainError when no token is
// admissible.
CausalPrior causal_attend(const ag::Var& qq, const AlignedMemory& mem, int t_q,
                          const CausalAttentionParams& p);
// Same, with the additive proximity bias -gamma * |pos_q - pos_k|^2 between
// each query location and each token position.
CausalPrior causal_attend(const ag::Var& qq, const AlignedMemory& mem, int t_q, const CausalAttentionParams& p,
                          const std::vector<QueryPoint>& queries, const GridGeoref& georef);

struct PredictorParams {
  Linear hidden;  // 2D' -> D'
  Linear output;  // D' -> 1

  static PredictorParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                Rng& rng);
};

// softplus(MLP([c_prior; q_q])) -> [Q, 1], in the normalized rain domain.
ag::Var predict_rain(const CausalPrior& cp, const ag::Var& qq, const PredictorParams& p);

}  // namespace rainrecon
