#include "rainrecon/aligner.hpp"

#include <cmath>

#include "rainrecon/errors.hpp"

namespace rainrecon {

using ag::Var;

TokenSet patchify_project(const Var& feat, std::size_t patch, const GridGeoref& georef,
                          const Linear& proj) {
  if (feat.rank() != 4) throw ShapeError("patchify: input must be [T, C, H, W]");
  const std::size_t steps = feat.dim(0), c_n = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: " + std::to_string(h) + "x" + std::to_string(w) +
                     " frame not divisible into " + std::to_string(patch) + "x" +
                     std::to_string(patch) + " patches");
  }
  const std::size_t ph = h / patch, pw = w / patch, width = c_n * patch * patch;
  const std::size_t count = steps * ph * pw;
  TokenSet out;
  std::vector<std::size_t> idx;
  idx.reserve(count * width);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t pr = 0; pr < ph; ++pr) {
      for (std::size_t pc = 0; pc < pw; ++pc) {
        for (std::size_t c = 0; c < c_n; ++c) {
          for (std::size_t i = 0; i < patch; ++i) {
            for (std::size_t j = 0; j < patch; ++j) {
              idx.push_back(((t * c_n + c) * h + pr * patch + i) * w + pc * patch + j);
            }
          }
        }
        out.steps.push_back(static_cast<int>(t));
        out.x.push_back(georef.x_min() + (pc + 0.5) * patch * georef.cell_dx());
        out.y.push_back(georef.y_min() + (pr + 0.5) * patch * georef.cell_dy());
        out.modality.push_back(Modality::radar);
      }
    }
  }
  out.tokens = proj(ag::gather(feat, std::move(idx), {count, width}));
  return out;
}

TokenSet flatten_project(const Var& nodes, std::size_t steps, const StationSet& stations,
                         const Linear& proj) {
  if (nodes.rank() != 2 || nodes.dim(0) != stations.size() * steps) {
    throw ShapeError("flatten: node features must be [N * T, D]");
  }
  TokenSet out;
  for (const auto& s : stations) {
    for (std::size_t t = 0; t < steps; ++t) {
      out.steps.push_back(static_cast<int>(t));
      out.x.push_back(s.x);
      out.y.push_back(s.y);
      out.modality.push_back(Modality::aws);
    }
  }
  out.tokens = proj(nodes);
  return out;
}

CrossAttentionParams CrossAttentionParams::create(ParamStore& store, const std::string& prefix,
                                                  std::size_t dim, Rng& rng,
                                                  double initial_distance_scale) {
  CrossAttentionParams p;
  p.query = Linear::create(store, prefix + ".query", dim, dim, rng);
  p.key = Linear::create(store, prefix + ".key", dim, dim, rng);
  p.value = Linear::create(store, prefix + ".value", dim, dim, rng);
  p.output = Linear::create(store, prefix + ".output", dim, dim, rng);
  p.distance_scale = store.add(prefix + ".distance_scale", {1}, {initial_distance_scale});
  return p;
}

Var cross_attention(const TokenSet& queries, const TokenSet& keys, const CrossAttentionParams& p,
                    const AttentionOptions& options, const GridGeoref& georef,
                    std::vector<Var>* weights) {
  if (keys.size() == 0 || queries.size() == 0) throw DomainError("cross attention: empty token set");
  const std::size_t d = queries.tokens.dim(1);
  if (options.heads == 0 || d % options.heads != 0) {
    throw ConfigError("cross attention: " + std::to_string(options.heads) + " heads do not divide width " +
                      std::to_string(d));
  }
  const std::size_t dh = d / options.heads, lq = queries.size(), lk = keys.size();
  auto q = p.query(queries.tokens);
  auto k = p.key(keys.tokens);
  auto v = p.value(keys.tokens);
  Var bias;
  if (options.distance_bias) {
    std::vector<double> d2(lq * lk);
    for (std::size_t i = 0; i < lq; ++i) {
      const double qx = georef.normalized_x(queries.x[i]), qy = georef.normalized_y(queries.y[i]);
      for (std::size_t j = 0; j < lk; ++j) {
        const double dx = qx - georef.normalized_x(keys.x[j]);
        const double dy = qy - georef.normalized_y(keys.y[j]);
        d2[i * lk + j] = dx * dx + dy * dy;
      }
    }
    bias = ag::scale_by(ag::constant({lq, lk}, std::move(d2)), p.distance_scale);
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < options.heads; ++h) {
    auto scores = ag::scale(ag::matmul_bt(ag::slice_cols(q, h * dh, (h + 1) * dh),
                                          ag::slice_cols(k, h * dh, (h + 1) * dh)),
                            inv_sqrt);
    if (bias.defined()) scores = ag::sub(scores, bias);
    auto attn = ag::softmax_rows(scores);
    if (weights) weights->push_back(attn);
    heads.push_back(ag::matmul(attn, ag::slice_cols(v, h * dh, (h + 1) * dh)));
  }
  return p.output(heads.size() == 1 ? heads[0] : ag::concat_cols(heads));
}

std::pair<Var, Var> bidirectional_cross_attention(const TokenSet& radar, const TokenSet& aws,
                                                  const CrossAttentionParams& radar_to_aws,
                                                  const CrossAttentionParams& aws_to_radar,
                                                  const AttentionOptions& options,
                                                  const GridGeoref& georef) {
  if (radar.size() == 0) throw DomainError("alignment needs radar tokens");
  if (aws.size() == 0) throw DomainError("alignment needs station tokens");
  return {cross_attention(radar, aws, radar_to_aws, options, georef),
          cross_attention(aws, radar, aws_to_radar, options, georef)};
}

AlignedMemory fuse_and_concat(const TokenSet& radar, const TokenSet& aws, const Var& e_rs,
                              const Var& e_sr) {
  AlignedMemory mem;
  std::vector<Var> blocks;
  if (radar.size() > 0) {
    if (e_rs.dim(0) != radar.size()) throw ShapeError("fuse: E_RS rows differ from radar tokens");
    blocks.push_back(ag::concat_cols({e_rs, radar.tokens}));
  }
  if (aws.size() > 0) {
    if (e_sr.dim(0) != aws.size()) throw ShapeError("fuse: E_SR rows differ from station tokens");
    blocks.push_back(ag::concat_cols({e_sr, aws.tokens}));
  }
  if (blocks.empty()) throw DomainError("fuse: both token sets are empty");
  mem.tokens = blocks.size() == 1 ? blocks[0] : ag::concat_rows(blocks);
  mem.radar_count = radar.size();
  for (const TokenSet* set : {&radar, &aws}) {
    mem.steps.insert(mem.steps.end(), set->steps.begin(), set->steps.end());
    mem.x.insert(mem.x.end(), set->x.begin(), set->x.end());
    mem.y.insert(mem.y.end(), set->y.begin(), set->y.end());
    mem.modality.insert(mem.modality.end(), set->modality.begin(), set->modality.end());
  }
  return mem;
}

}  // namespace rainrecon
