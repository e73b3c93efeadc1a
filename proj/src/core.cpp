#include "rainrecon/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "rainrecon/errors.hpp"

namespace rainrecon {

GridGeoref::GridGeoref(double x_min, double y_min, double x_max, double y_max, int height,
                       int width)
    : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max), height_(height), width_(width) {
  if (!(x_max > x_min)) throw ConfigError("georef: x_max must exceed x_min");
  if (!(y_max > y_min)) throw ConfigError("georef: y_max must exceed y_min");
  if (height < 1 || width < 1) throw ConfigError("georef: H and W must be at least 1");
}

namespace {

int axis_cell(double v, double lo, double hi, int n, const char* axis) {
  if (!(v >= lo && v <= hi)) {
    std::ostringstream msg;
    msg << axis << " coordinate " << v << " outside [" << lo << ", " << hi << "]";
    throw DomainError(msg.str());
  }
  const double step = (hi - lo) / n;
  int idx = static_cast<int>(std::floor((v - lo) / step));
  return std::clamp(idx, 0, n - 1);
}

}  // namespace

CellIndex grid_cell_of(const GridGeoref& georef, double x, double y) {
  const int col = axis_cell(x, georef.x_min(), georef.x_max(), georef.width(), "x");
  const int row = axis_cell(y, georef.y_min(), georef.y_max(), georef.height(), "y");
  return {row, col};
}

void RadarSequence::validate() const {
  if (timestamps.empty()) throw DomainError("radar: at least one time step required");
  const std::size_t expected = timestamps.size() * georef.cell_count();
  if (values.size() != expected) {
    std::ostringstream msg;
    msg << "radar: expected " << expected << " values, found " << values.size();
    throw DomainError(msg.str());
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (!(timestamps[i] > timestamps[i - 1])) throw DomainError("radar: timestamps not increasing");
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw DomainError("radar: non-finite reflectivity");
  }
}

void impute_missing_reflectivity(std::vector<float>& values, float sentinel) {
  for (float& v : values) {
    if (std::isnan(v) || v == sentinel) v = 0.0f;
  }
}

void validate_stations(const StationSet& stations, const GridGeoref& georef) {
  std::set<std::string> seen;
  for (const auto& s : stations) {
    if (!seen.insert(s.id).second) throw DomainError("duplicate station id '" + s.id + "'");
    if (!georef.contains(s.x, s.y)) {
      std::ostringstream msg;
      msg << "station '" << s.id << "' at (" << s.x << ", " << s.y << ") outside the grid";
      throw DomainError(msg.str());
    }
  }
}

StationSeries StationSeries::empty(int steps) {
  StationSeries s;
  s.steps = steps;
  return s;
}

StationSeries StationSeries::subset(std::span<const std::size_t> indices) const {
  StationSeries out;
  out.steps = steps;
  out.stations.reserve(indices.size());
  out.rain.reserve(indices.size() * steps);
  out.mask.reserve(indices.size() * steps);
  for (std::size_t i : indices) {
    out.stations.push_back(stations.at(i));
    for (int t = 0; t < steps; ++t) {
      out.rain.push_back(rain_at(i, t));
      out.mask.push_back(mask[i * steps + t]);
    }
  }
  return out;
}

StationSeries StationSeries::slice_steps(int begin, int end) const {
  if (begin < 0 || end > steps || begin >= end) throw DomainError("station series: bad step range");
  StationSeries out;
  out.stations = stations;
  out.steps = end - begin;
  for (std::size_t i = 0; i < size(); ++i) {
    for (int t = begin; t < end; ++t) {
      out.rain.push_back(rain_at(i, t));
      out.mask.push_back(mask[i * steps + t]);
    }
  }
  return out;
}

void StationSeries::validate() const {
  const std::size_t expected = stations.size() * static_cast<std::size_t>(steps);
  if (rain.size() != expected || mask.size() != expected) {
    throw DomainError("station series: array shape does not match N x T");
  }
  for (std::size_t i = 0; i < rain.size(); ++i) {
    if (mask[i] && !(rain[i] >= 0.0)) throw DomainError("station series: negative or non-finite rainfall");
  }
}

bool Adjacency::linked(int i, int j) const {
  const auto& n = neighbors.at(i);
  return std::binary_search(n.begin(), n.end(), j);
}

Adjacency knn_adjacency(std::span<const double> xs, std::span<const double> ys, int k) {
  const int n = static_cast<int>(xs.size());
  if (ys.size() != xs.size()) throw ShapeError("knn_adjacency: coordinate arrays differ in length");
  if (n < 2) throw DomainError("knn_adjacency: need at least 2 nodes");
  if (k < 1) throw DomainError("knn_adjacency: k must be at least 1");
  if (k >= n) {
    std::ostringstream msg;
    msg << "knn_adjacency: k = " << k << " must be smaller than node count " << n;
    throw DomainError(msg.str());
  }
  std::vector<std::set<int>> sets(n);
  std::vector<std::pair<double, int>> order;
  order.reserve(n);
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = xs[i] - xs[j];
      const double dy = ys[i] - ys[j];
      order.emplace_back(dx * dx + dy * dy, j);
    }
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int m = 0; m < k; ++m) {
      const int j = order[m].second;
      sets[i].insert(j);
      sets[j].insert(i);
    }
  }
  Adjacency adj;
  adj.k = k;
  adj.neighbors.resize(n);
  for (int i = 0; i < n; ++i) adj.neighbors[i].assign(sets[i].begin(), sets[i].end());
  return adj;
}

Adjacency knn_adjacency(const StationSet& stations, int k) {
  std::vector<double> xs, ys;
  for (const auto& s : stations) {
    xs.push_back(s.x);
    ys.push_back(s.y);
  }
  return knn_adjacency(xs, ys, k);
}

double RainField::sample(double x, double y) const {
  const auto cell = grid_cell_of(georef, x, y);
  return at(cell.row, cell.col);
}

RainNormalizer::RainNormalizer(RainScaling scheme, double scale) : scheme_(scheme), scale_(scale) {
  if (!(scale > 0.0)) throw ConfigError("rain normalizer: scale must be positive");
}

double RainNormalizer::normalize(double v) const {
  if (v < 0.0) throw DomainError("normalize_rain: negative rainfall");
  switch (scheme_) {
    case RainScaling::log1p:
      return std::log1p(v) / scale_;
    case RainScaling::identity:
      return v / scale_;
  }
  return v;
}

double RainNormalizer::denormalize(double v) const {
  switch (scheme_) {
    case RainScaling::log1p:
      return std::expm1(v * scale_);
    case RainScaling::identity:
      return v * scale_;
  }
  return v;
}

std::vector<double> RainNormalizer::normalize(std::span<const double> values) const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [this](double v) { return normalize(v); });
  return out;
}

std::vector<double> RainNormalizer::denormalize(std::span<const double> values) const {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [this](double v) { return denormalize(v); });
  return out;
}

RainScaling parse_rain_scaling(const std::string& name) {
  if (name == "log1p") return RainScaling::log1p;
  if (name == "identity") return RainScaling::identity;
  throw ConfigError("unknown rain scaling '" + name + "' (expected log1p or identity)");
}

std::string to_string(RainScaling scheme) {
  return scheme == RainScaling::log1p ? "log1p" : "identity";
}

}  // namespace rainrecon
