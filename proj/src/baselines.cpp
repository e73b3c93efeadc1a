#include "rainrecon/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "rainrecon/errors.hpp"

namespace rainrecon {

double zr_rain_from_dbz(double dbz, const ZRParams& p) {
  const double z = std::pow(10.0, dbz / 10.0);
  return std::pow(z / p.a, 1.0 / p.b);
}

double zr_dbz_from_rain(double rate, const ZRParams& p) {
  if (rate < 0.0) throw DomainError("zr_dbz_from_rain: negative rain rate");
  if (rate == 0.0) return kReflectivityFloorDbz;
  return 10.0 * std::log10(p.a * std::pow(rate, p.b));
}

RainField zr_baseline_field(const RadarSequence& radar, int t, const ZRParams& p) {
  if (t < 0 || t >= radar.steps()) throw DomainError("zr_baseline_field: step out of range");
  RainField field(radar.georef);
  const auto frame = radar.frame(t);
  for (std::size_t i = 0; i < frame.size(); ++i) field.values[i] = zr_rain_from_dbz(frame[i], p);
  return field;
}

std::vector<GaugeSample> gauge_samples(const StationSeries& series, int t) {
  std::vector<GaugeSample> out;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.observed(i, t)) {
      out.push_back({series.stations[i].x, series.stations[i].y, series.rain_at(i, t)});
    }
  }
  return out;
}

namespace {

struct Circle {
  double cx, cy, r2;
};

Circle circumcircle(const GaugeSample& a, const GaugeSample& b, const GaugeSample& c) {
  const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
  const double a2 = a.x * a.x + a.y * a.y;
  const double b2 = b.x * b.x + b.y * b.y;
  const double c2 = c.x * c.x + c.y * c.y;
  const double cx = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
  const double cy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
  return {cx, cy, (a.x - cx) * (a.x - cx) + (a.y - cy) * (a.y - cy)};
}

double cross(const GaugeSample& o, const GaugeSample& a, const GaugeSample& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

int nearest_index(std::span<const GaugeSample> pts, double x, double y) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = (pts[i].x - x) * (pts[i].x - x) + (pts[i].y - y) * (pts[i].y - y);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

template <typename Eval>
RainField evaluate_on_grid(const GridGeoref& georef, Eval&& eval) {
  RainField field(georef);
  for (int r = 0; r < georef.height(); ++r) {
    for (int c = 0; c < georef.width(); ++c) {
      field.at(r, c) = eval(georef.cell_center_x(c), georef.cell_center_y(r));
    }
  }
  return field;
}

}  // namespace

Triangulation::Triangulation(std::span<const GaugeSample> samples) {
  for (const auto& s : samples) {
    const bool dup = std::any_of(points_.begin(), points_.end(),
                                 [&](const GaugeSample& p) { return p.x == s.x && p.y == s.y; });
    if (!dup) points_.push_back(s);
  }
  const int n = static_cast<int>(points_.size());
  if (n < 3) return;

  double min_x = points_[0].x, max_x = min_x, min_y = points_[0].y, max_y = min_y;
  for (const auto& p : points_) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double extent = std::max(max_x - min_x, max_y - min_y);
  bool collinear = true;
  for (int i = 2; i < n && collinear; ++i) {
    if (std::abs(cross(points_[0], points_[1], points_[i])) > 1e-12 * extent * extent) collinear = false;
  }
  if (collinear) return;

  // Super triangle vertices occupy indices n, n+1, n+2.
  std::vector<GaugeSample> pts = points_;
  const double mx = 0.5 * (min_x + max_x), my = 0.5 * (min_y + max_y), big = 50.0 * extent;
  pts.push_back({mx - big, my - big, 0.0});
  pts.push_back({mx + big, my - big, 0.0});
  pts.push_back({mx, my + big, 0.0});

  struct Tri {
    std::array<int, 3> v;
    Circle c;
  };
  std::vector<Tri> tris{{{n, n + 1, n + 2}, circumcircle(pts[n], pts[n + 1], pts[n + 2])}};

  for (int i = 0; i < n; ++i) {
    const auto& p = pts[i];
    std::vector<Tri> keep;
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& t : tris) {
      const double d2 = (p.x - t.c.cx) * (p.x - t.c.cx) + (p.y - t.c.cy) * (p.y - t.c.cy);
      if (d2 < t.c.r2 * (1.0 - 1e-12)) {
        for (int e = 0; e < 3; ++e) {
          int a = t.v[e], b = t.v[(e + 1) % 3];
          if (a > b) std::swap(a, b);
          ++edge_count[{a, b}];
        }
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [edge, count] : edge_count) {
      if (count != 1) continue;
      const auto [a, b] = edge;
      if (std::abs(cross(pts[a], pts[b], p)) == 0.0) continue;
      keep.push_back({{a, b, i}, circumcircle(pts[a], pts[b], p)});
    }
    tris = std::move(keep);
  }
  for (const auto& t : tris) {
    if (t.v[0] < n && t.v[1] < n && t.v[2] < n) triangles_.push_back(t.v);
  }
}

double Triangulation::evaluate(double x, double y) const {
  if (points_.empty()) throw DomainError("tin: no samples");
  for (const auto& p : points_) {
    if (p.x == x && p.y == y) return p.value;
  }
  for (const auto& t : triangles_) {
    const auto& a = points_[t[0]];
    const auto& b = points_[t[1]];
    const auto& c = points_[t[2]];
    const double det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    const double l1 = ((b.y - c.y) * (x - c.x) + (c.x - b.x) * (y - c.y)) / det;
    const double l2 = ((c.y - a.y) * (x - c.x) + (a.x - c.x) * (y - c.y)) / det;
    const double l3 = 1.0 - l1 - l2;
    constexpr double tol = -1e-12;
    if (l1 >= tol && l2 >= tol && l3 >= tol) return l1 * a.value + l2 * b.value + l3 * c.value;
  }
  return points_[nearest_index(points_, x, y)].value;
}

RainField tin_interpolate(std::span<const GaugeSample> samples, const GridGeoref& georef,
                          InterpolationDiagnostics* diag) {
  if (samples.empty()) throw DomainError("tin_interpolate: no observed stations");
  Triangulation tri(samples);
  if (tri.degenerate() && diag) {
    diag->nearest_fallback = true;
    diag->warnings.push_back("tin: fewer than 3 non-collinear stations, using nearest station");
  }
  return evaluate_on_grid(georef, [&](double x, double y) { return tri.evaluate(x, y); });
}

RainField tin_interpolate(const StationSeries& series, int t, const GridGeoref& georef,
                          InterpolationDiagnostics* diag) {
  return tin_interpolate(gauge_samples(series, t), georef, diag);
}

namespace {

double tps_kernel(double r2) { return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0; }

}  // namespace

ThinPlateSpline::ThinPlateSpline(std::span<const GaugeSample> samples, double smoothing)
    : points_(samples.begin(), samples.end()) {
  if (smoothing < 0.0) throw ConfigError("tps: smoothing must be non-negative");
  const std::size_t n = points_.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (points_[i].x == points_[j].x && points_[i].y == points_[j].y) {
        std::ostringstream msg;
        msg << "tps: duplicate station positions #" << i << " and #" << j << " at (" << points_[i].x
            << ", " << points_[i].y << ")";
        throw DomainError(msg.str());
      }
    }
  }
  if (n < 3) throw DomainError("tps: at least 3 stations required");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = points_[i].x - points_[j].x, dy = points_[i].y - points_[j].y;
      a(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    a(i, i) += smoothing;
    a(i, n) = a(n, i) = 1.0;
    a(i, n + 1) = a(n + 1, i) = points_[i].x;
    a(i, n + 2) = a(n + 2, i) = points_[i].y;
    rhs(i) = points_[i].value;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw DomainError("tps: singular system (collinear stations?)");
  const Eigen::VectorXd sol = lu.solve(rhs);
  weights_.assign(sol.data(), sol.data() + n);
  affine_ = {sol(n), sol(n + 1), sol(n + 2)};
}

double ThinPlateSpline::evaluate(double x, double y) const {
  double v = affine_[0] + affine_[1] * x + affine_[2] * y;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const double dx = x - points_[i].x, dy = y - points_[i].y;
    v += weights_[i] * tps_kernel(dx * dx + dy * dy);
  }
  return v;
}

RainField tps_interpolate(std::span<const GaugeSample> samples, const GridGeoref& georef,
                          double smoothing) {
  ThinPlateSpline tps(samples, smoothing);
  return evaluate_on_grid(georef, [&](double x, double y) { return tps.evaluate(x, y); });
}

RainField tps_interpolate(const StationSeries& series, int t, const GridGeoref& georef,
                          double smoothing) {
  return tps_interpolate(gauge_samples(series, t), georef, smoothing);
}

double idw_value(std::span<const GaugeSample> samples, double x, double y, double power) {
  if (samples.empty()) throw DomainError("idw: no samples");
  if (!(power > 0.0)) throw ConfigError("idw: power must be positive");
  double num = 0.0, den = 0.0;
  for (const auto& s : samples) {
    const double d2 = (s.x - x) * (s.x - x) + (s.y - y) * (s.y - y);
    if (d2 == 0.0) return s.value;
    const double w = std::pow(d2, -0.5 * power);
    num += w * s.value;
    den += w;
  }
  return num / den;
}

RainField idw_interpolate(std::span<const GaugeSample> samples, const GridGeoref& georef,
                          double power) {
  return evaluate_on_grid(georef, [&](double x, double y) { return idw_value(samples, x, y, power); });
}

RainField idw_interpolate(const StationSeries& series, int t, const GridGeoref& georef,
                          double power) {
  return idw_interpolate(gauge_samples(series, t), georef, power);
}

}  // namespace rainrecon
