#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rainrecon/errors.hpp"
#include "rainrecon/harness.hpp"

namespace rainrecon {

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (steps == 0) fail("steps must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(peak_lr > 0.0)) fail("peak_lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must lie in (0, 1)");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be non-negative");
  if (!(train_frac > 0.0 && train_frac < 1.0)) fail("train_frac must lie in (0, 1)");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
  if (!(input_drop > 0.0 && input_drop < 1.0)) fail("input_drop must lie in (0, 1)");
}

Experiment prepare_experiment(const Dataset& ds, double train_frac, double mask_ratio, std::uint64_t seed) {
  Experiment e;
  e.train_end = chronological_split_index(ds.steps(), train_frac);
  e.partition = mask_stations(ds.gauges, mask_ratio, seed);
  return e;
}

double one_cycle_lr(std::size_t step, std::size_t total, double peak, double warmup_fraction) {
  const double initial = peak / 25.0, final_lr = peak / 1e4;
  const auto warm = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(warmup_fraction * total)));
  if (step < warm) {
    const double u = static_cast<double>(step) / static_cast<double>(warm);
    return initial + (peak - initial) * 0.5 * (1.0 - std::cos(std::numbers::pi * u));
  }
  const std::size_t rest = total > warm ? total - warm : 1;
  const double u = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(rest));
  return final_lr + (peak - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(ParamStore& store, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, var] : store.entries()) {
    const auto grad = var.grad();
    if (grad.empty()) continue;
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m.assign(var.size(), 0.0);
      v.assign(var.size(), 0.0);
    }
    ag::Var p = var;
    auto value = p.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      value[i] -= lr * (update + weight_decay_ * value[i]);
    }
  }
}

namespace {

void clip_gradients(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, var] : store.entries()) {
    for (double g : var.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (const auto& [_, var] : store.entries()) {
    if (var.grad().empty()) continue;
    auto* node = var.node();
    for (double& g : node->grad) g *= s;
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  ds.validate();
  const auto exp = prepare_experiment(ds, cfg.train_frac, cfg.mask_ratio, cfg.partition_seed());
  const auto& visible = exp.partition.visible_index;
  const int window = static_cast<int>(cfg.model.window);
  std::vector<int> window_ends;
  for (int e = window - 1; e < exp.train_end; ++e) window_ends.push_back(e);
  if (window_ends.empty()) {
    throw DomainError("train: the training split (" + std::to_string(exp.train_end) +
                      " steps) is shorter than one window of " + std::to_string(window));
  }

  ModelLayout layout;
  layout.georef = ds.radar.georef;
  layout.gauge_rows = ds.gauges.size();
  layout.virtual_count =
      static_cast<std::size_t>(std::floor(cfg.model.virtual_ratio * static_cast<double>(visible.size()) + 1e-9));
  layout.virtual_seed = cfg.seed + 1;

  TrainResult result;
  result.model = std::make_unique<ReconstructionModel>(cfg.model, cfg.ablation, layout, cfg.seed);
  auto& model = *result.model;
  AdamW optimizer(cfg.weight_decay);
  Rng rng(cfg.seed ^ 0x5deece66dULL);
  const double lambda = cfg.effective_lambda();
  const LossConfig loss_cfg{lambda, cfg.loss.pairs};
  const auto& g = ds.radar.georef;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const int end = window_ends[std::uniform_int_distribution<std::size_t>(0, window_ends.size() - 1)(rng)];

    // Hide part of the visible stations from the input and supervise at them.
    // A single visible station is both input and target.
    std::vector<std::size_t> order = visible;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t hidden = 0;
    if (order.size() >= 2) {
      hidden = static_cast<std::size_t>(std::lround(cfg.input_drop * static_cast<double>(order.size())));
      hidden = std::clamp<std::size_t>(hidden, 1, order.size() - 1);
    }
    std::vector<std::size_t> input(order.begin() + hidden, order.end());
    std::sort(input.begin(), input.end());

    std::vector<std::size_t> supervised;
    for (std::size_t k = 0; k < (hidden > 0 ? hidden : order.size()); ++k) {
      if (ds.gauges.observed(order[k], end)) supervised.push_back(order[k]);
    }
    if (supervised.empty()) continue;
    std::shuffle(supervised.begin(), supervised.end(), rng);
    if (supervised.size() > cfg.batch_size) supervised.resize(cfg.batch_size);
    std::sort(supervised.begin(), supervised.end());

    std::vector<QueryPoint> queries;
    std::vector<double> targets, positions;
    for (std::size_t i : supervised) {
      const auto& s = ds.gauges.stations[i];
      queries.push_back({s.x, s.y, window - 1});
      targets.push_back(model.normalizer().normalize(ds.gauges.rain_at(i, end)));
      const auto pe = geo_position_encoding(g.normalized_x(s.x), g.normalized_y(s.y));
      positions.insert(positions.end(), pe.begin(), pe.end());
    }
    const std::size_t q = queries.size();

    const auto enc = model.encode(make_window(ds, input, end, cfg.model.window));
    const auto pred = model.decode(enc, queries);
    auto mse = mse_loss(pred.rain, ag::constant({q, 1}, targets));
    ag::Var geo;
    if (lambda > 0.0 && q >= 2) {
      const auto pairs = sample_pairs(q, cfg.loss.pairs, rng);
      const std::size_t width = positions.size() / q;
      geo = geo_loss(ag::constant({q, width}, positions), pred.prior.weights, pairs);
    }
    auto loss = total_loss(mse, geo, loss_cfg);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (window ending at " << end << "): loss " << value
          << ", mse " << mse.item() << ", geo " << (geo.defined() ? geo.item() : 0.0);
      throw DivergenceError(msg.str());
    }
    model.params().zero_grad();
    ag::backward(loss);
    if (cfg.grad_clip > 0.0) clip_gradients(model.params(), cfg.grad_clip);
    optimizer.step(model.params(), one_cycle_lr(step, cfg.steps, cfg.peak_lr, cfg.warmup_fraction));
    result.loss_curve.push_back(value);
  }
  result.checkpoint = make_checkpoint(model, cfg, cfg.steps);
  return result;
}

}  // namespace rainrecon
