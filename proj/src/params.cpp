#include "rainrecon/params.hpp"

#include <cmath>

#include "rainrecon/errors.hpp"

namespace rainrecon {

ag::Var ParamStore::add(const std::string& name, ag::Shape shape, std::vector<double> values) {
  if (params_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  auto v = ag::parameter(std::move(shape), std::move(values));
  params_.emplace(name, v);
  return v;
}

ag::Var ParamStore::add_zeros(const std::string& name, ag::Shape shape) {
  const auto n = ag::shape_size(shape);
  return add(name, std::move(shape), std::vector<double>(n, 0.0));
}

ag::Var ParamStore::add_glorot(const std::string& name, ag::Shape shape, std::size_t fan_in,
                               std::size_t fan_out, Rng& rng, double gain) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> values(ag::shape_size(shape));
  for (double& v : values) v = dist(rng);
  return add(name, std::move(shape), std::move(values));
}

ag::Var ParamStore::add_normal(const std::string& name, ag::Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(ag::shape_size(shape));
  for (double& v : values) v = dist(rng);
  return add(name, std::move(shape), std::move(values));
}

const ag::Var& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) {
    ag::Var p = v;
    p.zero_grad();
  }
}

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng, bool with_bias, double gain) {
  Linear l;
  l.weight = store.add_glorot(name + ".weight", {in, out}, in, out, rng, gain);
  if (with_bias) l.bias = store.add_zeros(name + ".bias", {out});
  return l;
}

ag::Var Linear::operator()(const ag::Var& x) const {
  auto y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_bias(y, bias) : y;
}

}  // namespace rainrecon
