#include "rainrecon/decoder.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "rainrecon/errors.hpp"

namespace rainrecon {

using ag::Var;

std::vector<double> fourier_features(double nx, double ny, std::size_t bands) {
  std::vector<double> f{nx, ny};
  for (std::size_t k = 0; k < bands; ++k) {
    const double w = std::ldexp(std::numbers::pi, static_cast<int>(k));
    f.push_back(std::sin(w * nx));
    f.push_back(std::cos(w * nx));
    f.push_back(std::sin(w * ny));
    f.push_back(std::cos(w * ny));
  }
  return f;
}

QueryEncoderParams QueryEncoderParams::create(ParamStore& store, const std::string& prefix,
                                              std::size_t dim, std::size_t bands,
                                              std::size_t max_steps, Rng& rng) {
  QueryEncoderParams p;
  p.bands = bands;
  p.hidden = Linear::create(store, prefix + ".hidden", 2 + 4 * bands, dim, rng);
  p.output = Linear::create(store, prefix + ".output", dim, dim, rng);
  p.time_table = store.add_normal(prefix + ".time_table", {max_steps, dim}, 0.1, rng);
  return p;
}

Var encode_query(const std::vector<QueryPoint>& queries, const GridGeoref& georef,
                 const QueryEncoderParams& p) {
  if (queries.empty()) throw DomainError("encode_query: no queries");
  const std::size_t width = 2 + 4 * p.bands, d = p.output.out_features();
  std::vector<double> feats;
  feats.reserve(queries.size() * width);
  std::vector<std::size_t> time_idx;
  time_idx.reserve(queries.size() * d);
  for (const auto& q : queries) {
    if (!georef.contains(q.x, q.y)) {
      std::ostringstream msg;
      msg << "encode_query: (" << q.x << ", " << q.y << ") outside the grid";
      throw DomainError(msg.str());
    }
    if (q.step < 0 || static_cast<std::size_t>(q.step) >= p.time_table.dim(0)) {
      throw DomainError("encode_query: step " + std::to_string(q.step) + " outside the temporal table");
    }
    const auto f = fourier_features(georef.normalized_x(q.x), georef.normalized_y(q.y), p.bands);
    feats.insert(feats.end(), f.begin(), f.end());
    for (std::size_t c = 0; c < d; ++c) time_idx.push_back(q.step * d + c);
  }
  const std::size_t n = queries.size();
  auto mlp = p.output(ag::elu(p.hidden(ag::constant({n, width}, std::move(feats)))));
  return ag::add(mlp, ag::gather(p.time_table, std::move(time_idx), {n, d}));
}

BoundaryFusionParams BoundaryFusionParams::create(ParamStore& store, const std::string& prefix,
                                                  std::size_t dim, std::size_t boundary_channels,
                                                  Rng& rng) {
  BoundaryFusionParams p;
  p.query = Linear::create(store, prefix + ".query", dim, dim, rng);
  p.key = Linear::create(store, prefix + ".key", boundary_channels, dim, rng);
  p.value = Linear::create(store, prefix + ".value", boundary_channels, dim, rng);
  p.hidden = Linear::create(store, prefix + ".hidden", dim, dim, rng);
  p.output = Linear::create(store, prefix + ".output", dim, dim, rng);
  return p;
}

std::vector<int> boundary_neighbourhood(const GridGeoref& georef, double x, double y, double radius) {
  if (!(radius >= 1.0)) throw ConfigError("boundary radius must be at least one cell");
  const auto centre = grid_cell_of(georef, x, y);
  const int reach = static_cast<int>(std::floor(radius));
  std::vector<int> cells;
  for (int dr = -reach; dr <= reach; ++dr) {
    for (int dc = -reach; dc <= reach; ++dc) {
      const int r = centre.row + dr, c = centre.col + dc;
      if (r < 0 || c < 0 || r >= georef.height() || c >= georef.width()) continue;
      if (dr * dr + dc * dc > radius * radius) continue;
      cells.push_back(r * georef.width() + c);
    }
  }
  return cells;
}

Var fuse_boundary(const Var& q_loc, const Var& hb, const std::vector<QueryPoint>& queries,
                  const GridGeoref& georef, double radius, const BoundaryFusionParams& p, bool fuse) {
  auto mlp = [&](const Var& v) { return p.output(ag::elu(p.hidden(v))); };
  if (!fuse) return mlp(q_loc);
  if (hb.rank() != 4 || hb.dim(2) != static_cast<std::size_t>(georef.height()) ||
      hb.dim(3) != static_cast<std::size_t>(georef.width())) {
    throw ShapeError("fuse_boundary: boundary features must be [T, Cb, H, W] on the grid");
  }
  const std::size_t steps = hb.dim(0), cb = hb.dim(1), hw = georef.cell_count();
  // Rows (step, cell) for every cell referenced by some query.
  std::vector<std::vector<int>> groups(queries.size());
  std::vector<std::size_t> idx;
  std::vector<long> row_of(steps * hw, -1);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& qp = queries[q];
    if (qp.step < 0 || static_cast<std::size_t>(qp.step) >= steps) {
      throw DomainError("fuse_boundary: query step outside the boundary sequence");
    }
    for (int cell : boundary_neighbourhood(georef, qp.x, qp.y, radius)) {
      const std::size_t key = qp.step * hw + cell;
      if (row_of[key] < 0) {
        row_of[key] = static_cast<long>(idx.size() / cb);
        for (std::size_t c = 0; c < cb; ++c) idx.push_back((qp.step * cb + c) * hw + cell);
      }
      groups[q].push_back(static_cast<int>(row_of[key]));
    }
  }
  const std::size_t rows = idx.size() / cb;
  auto feats = ag::gather(hb, std::move(idx), {rows, cb});
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.query.out_features()));
  auto attended = ag::subset_attention(p.query(q_loc), p.key(feats), p.value(feats), groups, scale);
  return mlp(ag::add(q_loc, attended));
}

CausalAttentionParams CausalAttentionParams::create(ParamStore& store, const std::string& prefix,
                                                    std::size_t dim, Rng& rng,
                                                    double initial_distance_scale) {
  CausalAttentionParams p;
  p.w_a = store.add_glorot(prefix + ".w_a", {dim, dim}, dim, dim, rng, 0.5);
  p.value = Linear::create(store, prefix + ".value", dim, dim, rng);
  p.distance_scale = store.add(prefix + ".distance_scale", {1}, {initial_distance_scale});
  return p;
}

namespace {

CausalPrior attend(const Var& qq, const AlignedMemory& mem, int t_q, const CausalAttentionParams& p,
                   const std::vector<QueryPoint>* queries, const GridGeoref* georef) {
  CausalPrior cp;
  for (std::size_t i = 0; i < mem.size(); ++i) {
    if (mem.steps[i] <= t_q) cp.admissible.push_back(i);
  }
  if (cp.admissible.empty()) {
    throw DomainError("causal_attend: no memory token at or before step " + std::to_string(t_q));
  }
  const std::size_t d = mem.tokens.dim(1), a = cp.admissible.size();
  std::vector<std::size_t> idx;
  idx.reserve(a * d);
  for (std::size_t i : cp.admissible) {
    for (std::size_t c = 0; c < d; ++c) idx.push_back(i * d + c);
  }
  auto keys = ag::gather(mem.tokens, std::move(idx), {a, d});
  auto scores = ag::matmul_bt(ag::matmul(qq, p.w_a), keys);
  if (queries) {
    const std::size_t n = queries->size();
    if (n != qq.dim(0)) throw ShapeError("causal_attend: query positions differ from query rows");
    std::vector<double> d2(n * a);
    for (std::size_t i = 0; i < n; ++i) {
      const double qx = georef->normalized_x((*queries)[i].x), qy = georef->normalized_y((*queries)[i].y);
      for (std::size_t j = 0; j < a; ++j) {
        const double dx = qx - georef->normalized_x(mem.x[cp.admissible[j]]);
        const double dy = qy - georef->normalized_y(mem.y[cp.admissible[j]]);
        d2[i * a + j] = dx * dx + dy * dy;
      }
    }
    scores = ag::sub(scores, ag::scale_by(ag::constant({n, a}, std::move(d2)), p.distance_scale));
  }
  cp.weights = ag::softmax_rows(scores);
  cp.context = ag::matmul(cp.weights, p.value(keys));
  return cp;
}

}  // namespace

CausalPrior causal_attend(const Var& qq, const AlignedMemory& mem, int t_q, const CausalAttentionParams& p) {
  return attend(qq, mem, t_q, p, nullptr, nullptr);
}

CausalPrior causal_attend(const Var& qq, const AlignedMemory& mem, int t_q, const CausalAttentionParams& p,
                          const std::vector<QueryPoint>& queries, const GridGeoref& georef) {
  return attend(qq, mem, t_q, p, &queries, &georef);
}

PredictorParams PredictorParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                        Rng& rng) {
  PredictorParams p;
  p.hidden = Linear::create(store, prefix + ".hidden", 2 * dim, dim, rng);
  p.output = Linear::create(store, prefix + ".output", dim, 1, rng);
  return p;
}

Var predict_rain(const CausalPrior& cp, const Var& qq, const PredictorParams& p) {
  return ag::softplus(p.output(ag::elu(p.hidden(ag::concat_cols({cp.context, qq})))));
}

}  // namespace rainrecon
