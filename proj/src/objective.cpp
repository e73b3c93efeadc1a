#include "rainrecon/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "rainrecon/errors.hpp"

namespace rainrecon {

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be non-negative");
}

ag::Var mse_loss(const ag::Var& pred, const ag::Var& truth, std::span<const std::uint8_t> mask) {
  return ag::masked_mse(pred, truth, mask);
}

double mse_loss(std::span<const double> pred, std::span<const double> truth,
                std::span<const std::uint8_t> mask) {
  if (pred.size() != truth.size()) throw ShapeError("mse: size mismatch");
  if (!mask.empty() && mask.size() != pred.size()) throw ShapeError("mse: mask size mismatch");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    ++n;
  }
  if (n == 0) throw DomainError("mse: mask selects no entries");
  return acc / static_cast<double>(n);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: size mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<double> geo_position_encoding(double nx, double ny) {
  // Frequencies small enough that w * |dx| <= pi / 2 on the unit square.
  constexpr double kFreq[] = {std::numbers::pi / 2.0, std::numbers::pi / 4.0};
  std::vector<double> e;
  for (double w : kFreq) {
    e.push_back(std::sin(w * nx));
    e.push_back(std::cos(w * nx));
    e.push_back(std::sin(w * ny));
    e.push_back(std::cos(w * ny));
  }
  return e;
}

ag::Var geo_loss(const ag::Var& positions, const ag::Var& attentions, const PairList& pairs) {
  if (pairs.empty()) throw DomainError("geo_loss: no pairs");
  if (positions.dim(0) != attentions.dim(0)) throw ShapeError("geo_loss: row counts differ");
  auto pos_sim = ag::pair_cosine(positions, pairs);
  auto att_sim = ag::pair_cosine(attentions, pairs);
  return ag::mean(ag::mul(pos_sim, ag::one_minus(att_sim)));
}

double geo_loss(const std::vector<std::vector<double>>& positions,
                const std::vector<std::vector<double>>& attentions, const PairList& pairs) {
  if (pairs.empty()) throw DomainError("geo_loss: no pairs");
  double acc = 0.0;
  for (const auto& [i, j] : pairs) {
    acc += cosine_similarity(positions.at(i), positions.at(j)) *
           (1.0 - cosine_similarity(attentions.at(i), attentions.at(j)));
  }
  return acc / static_cast<double>(pairs.size());
}

PairList sample_pairs(std::size_t count, std::size_t budget, Rng& rng) {
  PairList out;
  const std::size_t total = count * (count - (count > 0 ? 1 : 0)) / 2;
  if (total == 0 || budget == 0) return out;
  if (budget >= total) {
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = i + 1; j < count; ++j) out.emplace_back(i, j);
    }
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (out.size() < budget) {
    std::size_t i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (seen.insert({i, j}).second) out.emplace_back(i, j);
  }
  return out;
}

ag::Var total_loss(const ag::Var& mse, const ag::Var& geo, const LossConfig& cfg) {
  if (cfg.lambda == 0.0 || !geo.defined()) return mse;
  return ag::add(mse, ag::scale(geo, cfg.lambda));
}

double total_loss(double mse, double geo, const LossConfig& cfg) {
  if (cfg.lambda == 0.0) return mse;
  return mse + cfg.lambda * geo;
}

namespace {

void check_pair(std::span<const double> truth, std::span<const double> pred, const char* name) {
  if (truth.size() != pred.size()) throw DomainError(std::string(name) + ": size mismatch");
  if (truth.empty()) throw DomainError(std::string(name) + ": empty input");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double rmse(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return std::sqrt(acc / static_cast<double>(truth.size()));
}

double mae(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(truth[i] - pred[i]);
  return acc / static_cast<double>(truth.size());
}

double nse(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, "nse");
  if (truth.size() < 2) throw DomainError("nse: at least 2 samples required");
  const double m = mean_of(truth);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    den += (truth[i] - m) * (truth[i] - m);
  }
  if (den == 0.0) throw UndefinedMetricError("nse: truth series is constant");
  return 1.0 - num / den;
}

double cc(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, "cc");
  const double mg = mean_of(truth), mr = mean_of(pred);
  double sgr = 0.0, sgg = 0.0, srr = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    sgr += (truth[i] - mg) * (pred[i] - mr);
    sgg += (truth[i] - mg) * (truth[i] - mg);
    srr += (pred[i] - mr) * (pred[i] - mr);
  }
  if (sgg == 0.0) throw UndefinedMetricError("cc: truth series is constant");
  if (srr == 0.0) throw UndefinedMetricError("cc: prediction series is constant");
  return std::clamp(sgr / (std::sqrt(sgg) * std::sqrt(srr)), -1.0, 1.0);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  out << "method: " << method << "\n"
      << "rmse: " << fmt(rmse) << "\n"
      << "mae: " << fmt(mae) << "\n"
      << "nse: " << fmt(nse) << "\n"
      << "cc: " << fmt(cc) << "\n"
      << "samples: " << count << "\n";
  for (const auto& s : per_station) {
    out << "station " << s.id << ": samples " << s.count << ", rmse " << fmt(s.rmse) << ", mae "
        << fmt(s.mae) << "\n";
  }
  return out.str();
}

std::string MetricsReport::csv_header() { return "method,rmse,mae,nse,cc"; }

std::string MetricsReport::to_csv_row() const {
  return method + "," + fmt(rmse) + "," + fmt(mae) + "," + fmt(nse) + "," + fmt(cc);
}

MetricsReport score(const std::string& method, std::span<const double> truth,
                    std::span<const double> pred, const std::vector<std::string>& station_of) {
  if (station_of.size() != truth.size()) throw ShapeError("score: one station id per sample");
  MetricsReport r;
  r.method = method;
  r.count = truth.size();
  r.rmse = rmse(truth, pred);
  r.mae = mae(truth, pred);
  r.nse = nse(truth, pred);
  r.cc = cc(truth, pred);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    groups[station_of[i]].first.push_back(truth[i]);
    groups[station_of[i]].second.push_back(pred[i]);
  }
  for (const auto& [id, tp] : groups) {
    r.per_station.push_back({id, tp.first.size(), rmse(tp.first, tp.second), mae(tp.first, tp.second)});
  }
  return r;
}

}  // namespace rainrecon
