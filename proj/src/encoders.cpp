#include "rainrecon/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "rainrecon/errors.hpp"

namespace rainrecon {

using ag::Var;

double normalize_reflectivity(double dbz) { return (dbz - kReflectivityFloorDbz) / 64.0; }

Var radar_input(const RadarSequence& radar) {
  std::vector<double> v(radar.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = normalize_reflectivity(radar.values[i]);
  const auto t = static_cast<std::size_t>(radar.steps());
  return ag::constant({t, 1, static_cast<std::size_t>(radar.georef.height()),
                       static_cast<std::size_t>(radar.georef.width())},
                      std::move(v));
}

namespace {

Var conv_weight(ParamStore& store, const std::string& name, std::size_t co, std::size_t ci,
                std::size_t k, Rng& rng) {
  return store.add_glorot(name, {co, ci, k, k}, ci * k * k, co * k * k, rng);
}

// Input channel range [begin, end) of a 1x1 kernel [Co, Ci, 1, 1].
Var pointwise_slice(const Var& kernel, std::size_t begin, std::size_t end) {
  const std::size_t co = kernel.dim(0), ci = kernel.dim(1);
  auto m = ag::slice_cols(ag::reshape(kernel, {co, ci}), begin, end);
  return ag::reshape(m, {co, end - begin, 1, 1});
}

}  // namespace

StscParams StscParams::create(ParamStore& store, const std::string& prefix, std::size_t channels,
                              std::size_t kernel, std::size_t temporal_kernel, Rng& rng) {
  StscParams p;
  p.spatial_kernel = conv_weight(store, prefix + ".spatial_kernel", channels, 1, kernel, rng);
  p.spatial_bias = store.add_zeros(prefix + ".spatial_bias", {channels});
  std::vector<double> tk(channels * temporal_kernel, 0.0);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t j = 0; j < temporal_kernel; ++j) tk[c * temporal_kernel + j] = jitter(rng);
    tk[c * temporal_kernel + temporal_kernel / 2] += 1.0;
  }
  p.temporal_kernel = store.add(prefix + ".temporal_kernel", {channels, temporal_kernel}, std::move(tk));
  p.temporal_bias = store.add_zeros(prefix + ".temporal_bias", {channels});
  return p;
}

Var stsc_forward(const Var& x, const StscParams& p) {
  if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("stsc: input must be [T, 1, H, W]");
  const std::size_t kt = p.temporal_kernel.dim(1);
  if (kt > 2 * x.dim(0) - 1) {
    throw ConfigError("stsc: temporal kernel of length " + std::to_string(kt) + " exceeds 2T-1 = " +
                      std::to_string(2 * x.dim(0) - 1));
  }
  auto spatial = ag::conv2d(x, p.spatial_kernel, p.spatial_bias);
  return ag::temporal_conv(spatial, p.temporal_kernel, p.temporal_bias);
}

InceptionBlock InceptionBlock::create(ParamStore& store, const std::string& prefix,
                                      std::size_t channels, Rng& rng) {
  InceptionBlock b;
  b.conv1 = conv_weight(store, prefix + ".conv1", channels, channels, 1, rng);
  b.bias1 = store.add_zeros(prefix + ".bias1", {channels});
  b.conv3 = conv_weight(store, prefix + ".conv3", channels, channels, 3, rng);
  b.bias3 = store.add_zeros(prefix + ".bias3", {channels});
  b.conv5 = conv_weight(store, prefix + ".conv5", channels, channels, 5, rng);
  b.bias5 = store.add_zeros(prefix + ".bias5", {channels});
  b.proj = store.add_glorot(prefix + ".proj", {channels, 3 * channels, 1, 1}, 3 * channels, channels,
                            rng, 0.5);
  b.proj_bias = store.add_zeros(prefix + ".proj_bias", {channels});
  return b;
}

Var InceptionBlock::operator()(const Var& x) const {
  const std::size_t c = x.dim(1);
  if (conv1.dim(1) != c) throw ShapeError("inception: channel count mismatch");
  // A 1x1 projection of the channel concatenation equals the sum of the
  // projections of each branch through its slice of the kernel.
  auto a = ag::elu(ag::conv2d(x, conv1, bias1));
  auto b = ag::elu(ag::conv2d(x, conv3, bias3));
  auto d = ag::elu(ag::conv2d(x, conv5, bias5));
  auto mixed = ag::add(ag::add(ag::conv2d(a, pointwise_slice(proj, 0, c), proj_bias),
                               ag::conv2d(b, pointwise_slice(proj, c, 2 * c), Var())),
                       ag::conv2d(d, pointwise_slice(proj, 2 * c, 3 * c), Var()));
  return ag::add(x, mixed);
}

InceptionParams InceptionParams::create(ParamStore& store, const std::string& prefix,
                                        std::size_t channels, Rng& rng) {
  InceptionParams p;
  p.full = InceptionBlock::create(store, prefix + ".full", channels, rng);
  p.half = InceptionBlock::create(store, prefix + ".half", channels, rng);
  p.quarter = InceptionBlock::create(store, prefix + ".quarter", channels, rng);
  p.phi = conv_weight(store, prefix + ".phi", channels, channels, 1, rng);
  p.phi_bias = store.add_zeros(prefix + ".phi_bias", {channels});
  return p;
}

Var multiscale_inception(const Var& x, const InceptionParams& p) {
  if (x.rank() != 4) throw ShapeError("inception: input must be [T, C, H, W]");
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ShapeError("inception: spatial extent " + std::to_string(x.dim(2)) + "x" +
                     std::to_string(x.dim(3)) + " must be divisible by 4");
  }
  auto full = p.full(x);
  auto half = ag::upsample_nearest(p.half(ag::avg_pool(x, 2)), 2);
  auto quarter = ag::upsample_nearest(p.quarter(ag::avg_pool(x, 4)), 4);
  return ag::elu(ag::conv2d(ag::add(ag::add(full, half), quarter), p.phi, p.phi_bias));
}

EmbeddingTables EmbeddingTables::create(ParamStore& store, const std::string& prefix,
                                        std::size_t max_steps, std::size_t rows, std::size_t dim,
                                        Rng& rng, double stddev) {
  EmbeddingTables t;
  t.temporal = store.add_normal(prefix + ".temporal", {max_steps, dim}, stddev, rng);
  t.spatial = store.add_normal(prefix + ".spatial", {rows, dim}, stddev, rng);
  return t;
}

Var add_spacetime_embeddings(const Var& x, const EmbeddingTables& tables) {
  if (x.rank() != 4) throw ShapeError("embeddings: input must be [T, C, H, W]");
  if (x.dim(0) > tables.temporal.dim(0)) {
    throw ConfigError("embeddings: window of " + std::to_string(x.dim(0)) +
                      " steps exceeds the temporal table (" + std::to_string(tables.temporal.dim(0)) +
                      " rows)");
  }
  return ag::add_spacetime(x, tables.temporal, tables.spatial);
}

std::vector<double> laplacian_boundaries(std::span<const double> values, int steps, int height,
                                         int width) {
  if (height < 3 || width < 3) throw ShapeError("laplacian: grid must be at least 3x3");
  const std::size_t frame = static_cast<std::size_t>(height) * width;
  if (values.size() != frame * steps) throw ShapeError("laplacian: value count does not match T x H x W");
  std::vector<double> out(values.size());
  for (int t = 0; t < steps; ++t) {
    const double* f = values.data() + t * frame;
    double* o = out.data() + t * frame;
    for (int r = 0; r < height; ++r) {
      const int up = std::max(r - 1, 0), down = std::min(r + 1, height - 1);
      for (int c = 0; c < width; ++c) {
        const int left = std::max(c - 1, 0), right = std::min(c + 1, width - 1);
        const double centre = f[r * width + c];
        o[r * width + c] = (f[up * width + c] - centre) + (f[down * width + c] - centre) +
                           (f[r * width + left] - centre) + (f[r * width + right] - centre);
      }
    }
  }
  return out;
}

std::vector<double> laplacian_boundaries(const RadarSequence& radar) {
  std::vector<double> v(radar.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = normalize_reflectivity(radar.values[i]);
  return laplacian_boundaries(v, radar.steps(), radar.georef.height(), radar.georef.width());
}

ConvLstmParams ConvLstmParams::create(ParamStore& store, const std::string& prefix,
                                      std::size_t hidden, std::size_t kernel, Rng& rng) {
  ConvLstmParams p;
  p.input_kernel = conv_weight(store, prefix + ".input_kernel", 4 * hidden, 1, kernel, rng);
  p.recurrent_kernel = conv_weight(store, prefix + ".recurrent_kernel", 4 * hidden, hidden, kernel, rng);
  std::vector<double> bias(4 * hidden, 0.0);
  std::fill(bias.begin() + hidden, bias.begin() + 2 * hidden, 1.0);
  p.bias = store.add(prefix + ".bias", {4 * hidden}, std::move(bias));
  return p;
}

Var convlstm_forward(const Var& b, const ConvLstmParams& p) {
  if (b.rank() != 4 || b.dim(1) != 1) throw ShapeError("convlstm: input must be [T, 1, H, W]");
  const std::size_t steps = b.dim(0), h = b.dim(2), w = b.dim(3), hw = h * w;
  const std::size_t k = p.input_kernel.dim(2), cb = p.hidden();
  if (k > h || k > w) {
    throw ConfigError("convlstm: kernel " + std::to_string(k) + " larger than the " + std::to_string(h) +
                      "x" + std::to_string(w) + " grid");
  }
  // Input contributions for every step in one batched convolution.
  auto xin = ag::reshape(ag::conv2d(b, p.input_kernel, p.bias), {steps * 4 * cb, hw});
  Var hidden, cell;
  std::vector<Var> outputs;
  for (std::size_t t = 0; t < steps; ++t) {
    auto gates = ag::slice_rows(xin, t * 4 * cb, (t + 1) * 4 * cb);
    if (hidden.defined()) {
      auto rec = ag::conv2d(ag::reshape(hidden, {1, cb, h, w}), p.recurrent_kernel, Var());
      gates = ag::add(gates, ag::reshape(rec, {4 * cb, hw}));
    }
    auto i = ag::sigmoid(ag::slice_rows(gates, 0, cb));
    auto f = ag::sigmoid(ag::slice_rows(gates, cb, 2 * cb));
    auto o = ag::sigmoid(ag::slice_rows(gates, 2 * cb, 3 * cb));
    auto g = ag::tanh(ag::slice_rows(gates, 3 * cb, 4 * cb));
    cell = cell.defined() ? ag::add(ag::mul(f, cell), ag::mul(i, g)) : ag::mul(i, g);
    hidden = ag::mul(o, ag::tanh(cell));
    outputs.push_back(hidden);
  }
  return ag::reshape(ag::concat_rows(outputs), {steps, cb, h, w});
}

double interpolate_zr(const RadarSequence& radar, int t, double x, double y, const ZRParams& zr) {
  const auto& g = radar.georef;
  const double gx = (x - g.x_min()) / g.cell_dx() - 0.5;
  const double gy = (y - g.y_min()) / g.cell_dy() - 0.5;
  const int c0 = static_cast<int>(std::floor(gx)), r0 = static_cast<int>(std::floor(gy));
  const double fx = gx - c0, fy = gy - r0;
  auto clamp_col = [&](int c) { return std::clamp(c, 0, g.width() - 1); };
  auto clamp_row = [&](int r) { return std::clamp(r, 0, g.height() - 1); };
  auto rain = [&](int r, int c) {
    return zr_rain_from_dbz(radar.at(t, clamp_row(r), clamp_col(c)), zr);
  };
  double v = 0.0;
  if (fx < 1.0 && fy < 1.0) v += (1.0 - fx) * (1.0 - fy) * rain(r0, c0);
  if (fx > 0.0 && fy < 1.0) v += fx * (1.0 - fy) * rain(r0, c0 + 1);
  if (fx < 1.0 && fy > 0.0) v += (1.0 - fx) * fy * rain(r0 + 1, c0);
  if (fx > 0.0 && fy > 0.0) v += fx * fy * rain(r0 + 1, c0 + 1);
  return v;
}

StationSeries interpolate_virtual_nodes(const RadarSequence& radar, int count, std::uint64_t seed,
                                        const ZRParams& zr) {
  if (count < 0) throw ConfigError("virtual node count must be non-negative");
  StationSeries out = StationSeries::empty(radar.steps());
  const auto& g = radar.georef;
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(g.x_min(), g.x_max()), uy(g.y_min(), g.y_max());
  for (int k = 0; k < count; ++k) {
    const double x = ux(rng), y = uy(rng);
    char id[16];
    std::snprintf(id, sizeof(id), "V%03d", k);
    out.stations.push_back({id, x, y, true});
    for (int t = 0; t < radar.steps(); ++t) {
      out.rain.push_back(interpolate_zr(radar, t, x, y, zr));
      out.mask.push_back(1);
    }
  }
  return out;
}

AwsInputParams AwsInputParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                      Rng& rng) {
  return {Linear::create(store, prefix + ".input", 2 + 2 * dim, dim, rng)};
}

NodeInputs make_node_inputs(const StationSeries& series, const RainNormalizer& norm,
                            std::vector<std::size_t> table_rows) {
  if (table_rows.size() != series.size()) throw ShapeError("node inputs: one table row per station");
  NodeInputs in;
  in.nodes = series.size();
  in.steps = static_cast<std::size_t>(series.steps);
  in.table_rows = std::move(table_rows);
  in.values.assign(in.nodes * in.steps, 0.0);
  in.mask.assign(in.nodes * in.steps, 0);
  for (std::size_t i = 0; i < in.nodes; ++i) {
    for (std::size_t t = 0; t < in.steps; ++t) {
      if (series.observed(i, static_cast<int>(t))) {
        in.values[i * in.steps + t] = norm.normalize(series.rain_at(i, static_cast<int>(t)));
        in.mask[i * in.steps + t] = 1;
      }
    }
  }
  return in;
}

Var aws_input_embed(const NodeInputs& in, const EmbeddingTables& tables, const AwsInputParams& p) {
  const std::size_t n = in.nodes, steps = in.steps, rows = n * steps;
  const std::size_t d = tables.temporal.dim(1);
  if (steps > tables.temporal.dim(0)) throw ConfigError("aws embed: window exceeds the temporal table");
  std::vector<double> raw(rows * 2);
  std::vector<std::size_t> time_idx(rows * d), space_idx(rows * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (in.table_rows[i] >= tables.spatial.dim(0)) throw ConfigError("aws embed: node outside the spatial table");
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t r = i * steps + t;
      raw[2 * r] = in.mask[r] ? in.values[r] : 0.0;
      raw[2 * r + 1] = in.mask[r] ? 1.0 : 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        time_idx[r * d + c] = t * d + c;
        space_idx[r * d + c] = in.table_rows[i] * d + c;
      }
    }
  }
  auto features = ag::concat_cols({ag::constant({rows, 2}, std::move(raw)),
                                   ag::gather(tables.temporal, std::move(time_idx), {rows, d}),
                                   ag::gather(tables.spatial, std::move(space_idx), {rows, d})});
  return ag::relu(p.input(features));
}

GatGruParams GatGruParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                  Rng& rng) {
  GatGruParams p;
  p.w = store.add_glorot(prefix + ".gat.weight", {dim, dim}, dim, dim, rng);
  p.att_src = store.add_glorot(prefix + ".gat.att_src", {dim, 1}, dim, 1, rng);
  p.att_dst = store.add_glorot(prefix + ".gat.att_dst", {dim, 1}, dim, 1, rng);
  p.gat_bias = store.add_zeros(prefix + ".gat.bias", {dim});
  p.gru_input = store.add_glorot(prefix + ".gru.input", {dim, 3 * dim}, dim, dim, rng);
  p.gru_hidden = store.add_glorot(prefix + ".gru.hidden", {dim, 3 * dim}, dim, dim, rng);
  p.gru_bias = store.add_zeros(prefix + ".gru.bias", {3 * dim});
  p.gru_hidden_bias = store.add_zeros(prefix + ".gru.hidden_bias", {3 * dim});
  return p;
}

std::vector<std::vector<int>> attention_groups(const Adjacency& adj) {
  std::vector<std::vector<int>> groups(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i) {
    groups[i] = adj.neighbors[i];
    groups[i].push_back(static_cast<int>(i));
    std::sort(groups[i].begin(), groups[i].end());
    groups[i].erase(std::unique(groups[i].begin(), groups[i].end()), groups[i].end());
  }
  return groups;
}

Var gat_gru_layer(const Var& x, std::size_t steps, const std::vector<std::vector<int>>& groups,
                  const GatGruParams& p) {
  if (x.rank() != 2 || steps == 0 || x.dim(0) % steps != 0) {
    throw ShapeError("gat_gru: input must be [N * T, D]");
  }
  const std::size_t n = x.dim(0) / steps, d = x.dim(1);
  if (groups.size() != n) throw ShapeError("gat_gru: adjacency size differs from node count");
  // Neighbour order is canonicalized so the aggregation is order independent.
  std::vector<std::vector<int>> sorted = groups;
  for (auto& g : sorted) std::sort(g.begin(), g.end());

  Var hidden;
  std::vector<Var> per_step;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> idx(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) idx[i * d + c] = (i * steps + t) * d + c;
    }
    auto xt = ag::gather(x, std::move(idx), {n, d});
    auto wh = ag::matmul(xt, p.w);
    auto agg = ag::graph_attention(wh, ag::matmul(wh, p.att_src), ag::matmul(wh, p.att_dst), sorted);
    auto z = ag::elu(ag::add_bias(agg, p.gat_bias));

    auto gi = ag::add_bias(ag::matmul(z, p.gru_input), p.gru_bias);
    Var gh;
    if (hidden.defined()) {
      gh = ag::add_bias(ag::matmul(hidden, p.gru_hidden), p.gru_hidden_bias);
    } else {
      // Zero hidden state: the recurrent term reduces to its bias.
      gh = ag::add_bias(ag::zeros({n, 3 * d}), p.gru_hidden_bias);
    }
    auto r = ag::sigmoid(ag::add(ag::slice_cols(gi, 0, d), ag::slice_cols(gh, 0, d)));
    auto u = ag::sigmoid(ag::add(ag::slice_cols(gi, d, 2 * d), ag::slice_cols(gh, d, 2 * d)));
    auto cand = ag::tanh(ag::add(ag::slice_cols(gi, 2 * d, 3 * d), ag::mul(r, ag::slice_cols(gh, 2 * d, 3 * d))));
    hidden = hidden.defined() ? ag::add(ag::mul(ag::one_minus(u), cand), ag::mul(u, hidden))
                              : ag::mul(ag::one_minus(u), cand);
    per_step.push_back(hidden);
  }
  // Time-major stack back to station-major rows.
  auto stacked = ag::concat_rows(per_step);
  std::vector<std::size_t> idx(n * steps * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t c = 0; c < d; ++c) idx[(i * steps + t) * d + c] = (t * n + i) * d + c;
    }
  }
  return ag::gather(stacked, std::move(idx), {n * steps, d});
}

Var aws_encode(const NodeInputs& in, const Adjacency& adj, const EmbeddingTables& tables,
               const AwsInputParams& input, const std::vector<GatGruParams>& layers) {
  if (layers.empty()) throw ConfigError("aws encoder needs at least one layer");
  if (adj.size() != in.nodes) throw ShapeError("aws encoder: adjacency size differs from node count");
  const auto groups = attention_groups(adj);
  auto h = aws_input_embed(in, tables, input);
  for (const auto& layer : layers) h = gat_gru_layer(h, in.steps, groups, layer);
  return h;
}

}  // namespace rainrecon
