#include "rainrecon/model.hpp"

#include <algorithm>

#include "rainrecon/errors.hpp"

namespace rainrecon {

using ag::Var;

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"no_radar", "no_aws", "no_rfe", "no_bpa_bidir",
                                              "no_csta_geo"};
  return names;
}

std::vector<std::string> Ablation::names() const {
  std::vector<std::string> out;
  if (no_radar) out.push_back("no_radar");
  if (no_aws) out.push_back("no_aws");
  if (no_rfe) out.push_back("no_rfe");
  if (no_bpa_bidir) out.push_back("no_bpa_bidir");
  if (no_csta_geo) out.push_back("no_csta_geo");
  return out;
}

void enable_ablation(Ablation& a, const std::string& name) {
  if (name == "no_radar") {
    a.no_radar = true;
  } else if (name == "no_aws") {
    a.no_aws = true;
  } else if (name == "no_rfe") {
    a.no_rfe = true;
  } else if (name == "no_bpa_bidir" || name == "no_bpa") {
    a.no_bpa_bidir = true;
  } else if (name == "no_csta_geo" || name == "no_csta") {
    a.no_csta_geo = true;
  } else {
    std::string valid;
    for (const auto& n : ablation_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw UsageError("unknown ablation '" + name + "' (valid: " + valid + ")");
  }
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (channels == 0 || boundary_channels == 0 || dim == 0) fail("widths must be positive");
  if (patch == 0) fail("patch must be positive");
  if (heads == 0 || dim % heads != 0) fail("heads must divide dim");
  if (aws_layers == 0) fail("aws_layers must be positive");
  if (kernel % 2 == 0 || temporal_kernel % 2 == 0) fail("kernels must be odd");
  if (window == 0) fail("window must be positive");
  if (!(boundary_radius >= 1.0)) fail("boundary_radius must be at least one cell");
  if (!(virtual_ratio >= 0.0)) fail("virtual_ratio must be non-negative");
  if (knn < 1) fail("knn must be positive");
  if (!(rain_scale > 0.0)) fail("rain_scale must be positive");
}

WindowInput make_window(const Dataset& ds, const std::vector<std::size_t>& stations, int end_step,
                        std::size_t window) {
  const int begin = end_step - static_cast<int>(window) + 1;
  if (begin < 0 || end_step >= ds.steps()) {
    throw DomainError("window ending at step " + std::to_string(end_step) + " needs " +
                      std::to_string(window) + " steps of history");
  }
  WindowInput in;
  in.radar.georef = ds.radar.georef;
  in.radar.timestamps.assign(ds.radar.timestamps.begin() + begin, ds.radar.timestamps.begin() + end_step + 1);
  const std::size_t frame = ds.radar.georef.cell_count();
  in.radar.values.assign(ds.radar.values.begin() + begin * frame,
                         ds.radar.values.begin() + (end_step + 1) * frame);
  in.gauges = ds.gauges.subset(stations).slice_steps(begin, end_step + 1);
  in.gauge_rows = stations;
  return in;
}

ReconstructionModel::ReconstructionModel(const ModelConfig& config, const Ablation& ablation,
                                         const ModelLayout& layout, std::uint64_t seed)
    : config_(config),
      ablation_(ablation),
      layout_(layout),
      normalizer_(config.scaling, config.rain_scale) {
  config_.validate();
  const auto& g = layout_.georef;
  if (g.height() % static_cast<int>(config_.patch) != 0 || g.width() % static_cast<int>(config_.patch) != 0) {
    throw ConfigError("model config: patch " + std::to_string(config_.patch) + " does not divide the " +
                      std::to_string(g.height()) + "x" + std::to_string(g.width()) + " grid");
  }
  Rng rng(seed);
  const std::size_t c = config_.channels, d = config_.dim, dm = 2 * d;
  stsc_ = StscParams::create(store_, "radar.stsc", c, config_.kernel, config_.temporal_kernel, rng);
  inception_ = InceptionParams::create(store_, "radar.inception", c, rng);
  radar_tables_ = EmbeddingTables::create(store_, "radar.embed", config_.window, g.cell_count(), c, rng);
  convlstm_ = ConvLstmParams::create(store_, "boundary.convlstm", config_.boundary_channels,
                                     config_.kernel, rng);
  aws_tables_ = EmbeddingTables::create(store_, "aws.embed", config_.window,
                                        layout_.gauge_rows + layout_.virtual_count, d, rng);
  aws_input_ = AwsInputParams::create(store_, "aws", d, rng);
  for (std::size_t l = 0; l < config_.aws_layers; ++l) {
    aws_layers_.push_back(GatGruParams::create(store_, "aws.layer" + std::to_string(l), d, rng));
  }
  radar_proj_ = Linear::create(store_, "aligner.radar_proj", c * config_.patch * config_.patch, d, rng);
  aws_proj_ = Linear::create(store_, "aligner.aws_proj", d, d, rng);
  radar_to_aws_ = CrossAttentionParams::create(store_, "aligner.radar_to_aws", d, rng, config_.distance_scale);
  aws_to_radar_ = CrossAttentionParams::create(store_, "aligner.aws_to_radar", d, rng, config_.distance_scale);
  query_ = QueryEncoderParams::create(store_, "decoder.query", dm, config_.query_bands, config_.window, rng);
  fusion_ = BoundaryFusionParams::create(store_, "decoder.fusion", dm, config_.boundary_channels, rng);
  causal_ = CausalAttentionParams::create(store_, "decoder.causal", dm, rng, config_.causal_distance_scale);
  predictor_ = PredictorParams::create(store_, "decoder.predictor", dm, rng);
}

std::vector<std::string> ReconstructionModel::radar_parameter_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : store_.entries()) {
    if (name.rfind("radar.", 0) == 0 || name.rfind("boundary.", 0) == 0) out.push_back(name);
  }
  return out;
}

EncodedWindow ReconstructionModel::encode(const WindowInput& input) const {
  const auto& g = layout_.georef;
  if (!(input.radar.georef == g)) throw DomainError("model: window grid differs from the model grid");
  const std::size_t steps = static_cast<std::size_t>(input.radar.steps());
  if (steps == 0 || steps > config_.window) {
    throw DomainError("model: window of " + std::to_string(steps) + " steps, model supports 1.." +
                      std::to_string(config_.window));
  }
  if (input.gauges.steps != input.radar.steps() || input.gauge_rows.size() != input.gauges.size()) {
    throw ShapeError("model: gauge window inconsistent with radar window");
  }
  EncodedWindow enc;
  enc.steps = steps;
  const bool use_radar = !ablation_.no_radar, use_aws = !ablation_.no_aws;

  TokenSet radar_tokens, aws_tokens;
  if (use_radar) {
    auto feat = add_spacetime_embeddings(multiscale_inception(stsc_forward(radar_input(input.radar), stsc_),
                                                              inception_),
                                         radar_tables_);
    radar_tokens = patchify_project(feat, config_.patch, g, radar_proj_);
    if (!ablation_.no_rfe) {
      auto lap = laplacian_boundaries(input.radar);
      enc.boundary = convlstm_forward(
          ag::constant({steps, 1, static_cast<std::size_t>(g.height()), static_cast<std::size_t>(g.width())},
                       std::move(lap)),
          convlstm_);
    }
  }
  if (use_aws) {
    StationSeries nodes = input.gauges;
    std::vector<std::size_t> rows = input.gauge_rows;
    for (std::size_t r : rows) {
      if (r >= layout_.gauge_rows) throw DomainError("model: gauge row outside the station table");
    }
    if (use_radar && layout_.virtual_count > 0) {
      const auto virt = interpolate_virtual_nodes(input.radar, static_cast<int>(layout_.virtual_count),
                                                  layout_.virtual_seed);
      nodes.stations.insert(nodes.stations.end(), virt.stations.begin(), virt.stations.end());
      nodes.rain.insert(nodes.rain.end(), virt.rain.begin(), virt.rain.end());
      nodes.mask.insert(nodes.mask.end(), virt.mask.begin(), virt.mask.end());
      for (std::size_t k = 0; k < layout_.virtual_count; ++k) rows.push_back(layout_.gauge_rows + k);
    }
    if (nodes.size() > 0) {
      const auto in = make_node_inputs(nodes, normalizer_, rows);
      Adjacency adj;
      if (nodes.size() >= 2) {
        adj = knn_adjacency(nodes.stations,
                            std::min(config_.knn, static_cast<int>(nodes.size()) - 1));
      } else {
        adj.neighbors.assign(nodes.size(), {});
      }
      auto h = aws_encode(in, adj, aws_tables_, aws_input_, aws_layers_);
      aws_tokens = flatten_project(h, steps, nodes.stations, aws_proj_);
    }
  }

  const std::size_t d = config_.dim;
  Var e_rs, e_sr;
  const AttentionOptions options{config_.heads, config_.distance_bias};
  if (radar_tokens.size() > 0) {
    e_rs = (aws_tokens.size() > 0 && !ablation_.no_bpa_bidir)
               ? cross_attention(radar_tokens, aws_tokens, radar_to_aws_, options, g)
               : ag::zeros({radar_tokens.size(), d});
  }
  if (aws_tokens.size() > 0) {
    e_sr = radar_tokens.size() > 0 ? cross_attention(aws_tokens, radar_tokens, aws_to_radar_, options, g)
                                   : ag::zeros({aws_tokens.size(), d});
  }
  enc.memory = fuse_and_concat(radar_tokens, aws_tokens, e_rs, e_sr);
  return enc;
}

Prediction ReconstructionModel::decode(const EncodedWindow& enc, const std::vector<QueryPoint>& queries) const {
  if (queries.empty()) throw DomainError("model: no queries");
  const int t_q = queries.front().step;
  for (const auto& q : queries) {
    if (q.step != t_q) throw DomainError("model: queries in one call must share a step");
  }
  if (t_q < 0 || static_cast<std::size_t>(t_q) >= enc.steps) {
    throw DomainError("model: query step " + std::to_string(t_q) + " outside the window");
  }
  const auto& g = layout_.georef;
  auto q_loc = encode_query(queries, g, query_);
  auto qq = fuse_boundary(q_loc, enc.boundary, queries, g, config_.boundary_radius, fusion_,
                          enc.boundary.defined());
  Prediction p;
  p.prior = config_.causal_distance_bias ? causal_attend(qq, enc.memory, t_q, causal_, queries, g)
                                         : causal_attend(qq, enc.memory, t_q, causal_);
  p.rain = predict_rain(p.prior, qq, predictor_);
  return p;
}

RainField reconstruct_field(const ReconstructionModel& model, const WindowInput& input, int step) {
  const auto enc = model.encode(input);
  const int t = step < 0 ? static_cast<int>(enc.steps) - 1 : step;
  const auto& g = model.layout().georef;
  RainField field(g);
  constexpr std::size_t kChunk = 256;
  std::vector<QueryPoint> queries;
  std::vector<std::size_t> cells;
  auto flush = [&] {
    if (queries.empty()) return;
    const auto pred = model.decode(enc, queries);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      field.values[cells[i]] = model.normalizer().denormalize(pred.rain.value()[i]);
    }
    queries.clear();
    cells.clear();
  };
  for (int r = 0; r < g.height(); ++r) {
    for (int c = 0; c < g.width(); ++c) {
      queries.push_back({g.cell_center_x(c), g.cell_center_y(r), t});
      cells.push_back(static_cast<std::size_t>(r) * g.width() + c);
      if (queries.size() == kChunk) flush();
    }
  }
  flush();
  return field;
}

}  // namespace rainrecon
