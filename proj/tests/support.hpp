#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rainrecon/autograd.hpp"
#include "rainrecon/datagen.hpp"
#include "rainrecon/model.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon::testing {

inline std::vector<double> random_values(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

inline ag::Var random_parameter(ag::Shape shape, Rng& rng, double scale = 1.0) {
  const auto n = ag::shape_size(shape);
  return ag::parameter(std::move(shape), random_values(n, rng, scale));
}

// Largest norm-wise relative error ||analytic - numeric|| / (||analytic|| +
// ||numeric||) over the tensors in `wrt`. The scalar under test is the dot
// product of forward() with a fixed random tensor, so every output element
// contributes. Central differences with step h. The denominator is floored
// at kGradientNormFloor so an exactly zero gradient is compared in absolute
// terms against finite-difference rounding noise.
inline constexpr double kGradientNormFloor = 1e-6;

inline double gradient_error(const std::function<ag::Var()>& forward, const std::vector<ag::Var>& wrt,
                             std::uint64_t seed = 7, double h = 1e-5) {
  auto out = forward();
  Rng rng(seed);
  const auto weights = random_values(out.size(), rng);
  auto dot = [&](const ag::Var& o) {
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o.value()[i] * weights[i];
    return s;
  };
  for (auto v : wrt) v.zero_grad();
  ag::backward(ag::sum(ag::mul(out, ag::constant(out.shape(), weights))));

  double worst = 0.0;
  for (auto v : wrt) {
    std::vector<double> analytic(v.grad().begin(), v.grad().end());
    if (analytic.empty()) analytic.assign(v.size(), 0.0);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v.value()[i];
      v.mutable_value()[i] = saved + h;
      const double up = dot(forward());
      v.mutable_value()[i] = saved - h;
      const double down = dot(forward());
      v.mutable_value()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(na) + std::sqrt(nn), kGradientNormFloor);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

// Small synthetic dataset on an 8x8 grid of unit cells.
inline Dataset toy_dataset(int steps = 8, int gauges = 10, std::uint64_t seed = 3) {
  StormConfig cfg;
  cfg.georef = GridGeoref(0.0, 0.0, 8.0, 8.0, 8, 8);
  cfg.steps = steps;
  cfg.cell_count = 2;
  cfg.min_sigma_cells = 1.5;
  cfg.max_sigma_cells = 3.0;
  cfg.advection_u = 0.3;
  cfg.advection_v = 0.2;
  cfg.gauge_count = gauges;
  cfg.seed = seed;
  return simulate_storm(cfg);
}

// Model settings sized for fast tests on the toy grid.
inline ModelConfig small_model_config() {
  ModelConfig m;
  m.channels = 2;
  m.boundary_channels = 2;
  m.dim = 8;
  m.heads = 2;
  m.aws_layers = 1;
  m.window = 4;
  m.query_bands = 2;
  m.knn = 3;
  return m;
}

}  // namespace rainrecon::testing
