#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rainrecon/autograd.hpp"

namespace rainrecon {

using Rng = std::mt19937_64;

// Named trainable tensors. Names are module paths ("radar.stsc.spatial_kernel");
// iteration order is lexicographic, which fixes checkpoint layout and the
// optimizer's reduction order.
class ParamStore {
 public:
  ag::Var add(const std::string& name, ag::Shape shape, std::vector<double> values);
  ag::Var add_zeros(const std::string& name, ag::Shape shape);
  // Uniform(-a, a) with a = gain * sqrt(6 / (fan_in + fan_out)).
  ag::Var add_glorot(const std::string& name, ag::Shape shape, std::size_t fan_in,
                     std::size_t fan_out, Rng& rng, double gain = 1.0);
  ag::Var add_normal(const std::string& name, ag::Shape shape, double stddev, Rng& rng);

  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, ag::Var>& entries() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::map<std::string, ag::Var> params_;
};

// Affine layer y = x W + b with W: [in, out].
struct Linear {
  ag::Var weight;
  ag::Var bias;

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                       Rng& rng, bool with_bias = true, double gain = 1.0);
  ag::Var operator()(const ag::Var& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

}  // namespace rainrecon
