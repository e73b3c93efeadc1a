#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rainrecon/autograd.hpp"
#include "rainrecon/params.hpp"

namespace rainrecon {

struct LossConfig {
  double lambda = 0.1;     // GeoLoss weight
  std::size_t pairs = 64;  // query pairs sampled per step

  void validate() const;
};

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

// Mean squared residual over entries with mask != 0 (empty mask: all).
// Throws DomainError when the mask selects nothing.
ag::Var mse_loss(const ag::Var& pred, const ag::Var& truth, std::span<const std::uint8_t> mask = {});
double mse_loss(std::span<const double> pred, std::span<const double> truth,
                std::span<const std::uint8_t> mask = {});

// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Fixed sinusoidal encoding of normalized coordinates whose cosine
// similarity depends only on displacement, decreasing from 1 at zero
// distance and staying non-negative across the unit square.
std::vector<double> geo_position_encoding(double nx, double ny);

// mean over pairs of Sim(p_i, p_j) * (1 - Sim(a_i, a_j)). positions: [Q, P]
// rows; attentions: [Q, A] rows over a shared admissible token set.
ag::Var geo_loss(const ag::Var& positions, const ag::Var& attentions, const PairList& pairs);
double geo_loss(const std::vector<std::vector<double>>& positions,
                const std::vector<std::vector<double>>& attentions, const PairList& pairs);

// Up to `budget` distinct unordered pairs (i < j) drawn uniformly from
// `count` queries; all pairs when fewer exist.
PairList sample_pairs(std::size_t count, std::size_t budget, Rng& rng);

ag::Var total_loss(const ag::Var& mse, const ag::Var& geo, const LossConfig& cfg);
double total_loss(double mse, double geo, const LossConfig& cfg);

// Metrics in physical units. Throw DomainError on empty or mismatched input;
// nse and cc throw UndefinedMetricError on constant series.
double rmse(std::span<const double> truth, std::span<const double> pred);
double mae(std::span<const double> truth, std::span<const double> pred);
double nse(std::span<const double> truth, std::span<const double> pred);
double cc(std::span<const double> truth, std::span<const double> pred);

struct StationMetrics {
  std::string id;
  std::size_t count = 0;
  double rmse = 0.0;
  double mae = 0.0;
};

struct MetricsReport {
  std::string method;
  double rmse = 0.0;
  double mae = 0.0;
  double nse = 0.0;
  double cc = 0.0;
  std::size_t count = 0;
  std::vector<StationMetrics> per_station;

  // "key: value" lines.
  std::string to_text() const;
  // "method,rmse,mae,nse,cc" row matching csv_header().
  std::string to_csv_row() const;
  static std::string csv_header();
};

// Scores paired samples; station_of[i] names the station of sample i.
MetricsReport score(const std::string& method, std::span<const double> truth,
                    std::span<const double> pred, const std::vector<std::string>& station_of);

}  // namespace rainrecon
