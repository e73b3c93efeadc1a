#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "rainrecon/core.hpp"

namespace rainrecon {

// Marshall-Palmer style power law Z = a * R^b.
struct ZRParams {
  double a = 200.0;
  double b = 1.6;
};

// Reflectivity assigned to zero rainfall.
inline constexpr double kReflectivityFloorDbz = -32.0;

// R = (Z / a)^(1/b) with Z = 10^(dbz/10).
double zr_rain_from_dbz(double dbz, const ZRParams& p = {});
// dbz = 10 log10(a R^b); R = 0 maps to kReflectivityFloorDbz. Throws
// DomainError for negative rates.
double zr_dbz_from_rain(double rate, const ZRParams& p = {});

// Elementwise Z-R on frame t of the radar sequence.
RainField zr_baseline_field(const RadarSequence& radar, int t, const ZRParams& p = {});

struct GaugeSample {
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;
};

// Observed stations of `series` at step t.
std::vector<GaugeSample> gauge_samples(const StationSeries& series, int t);

struct InterpolationDiagnostics {
  bool nearest_fallback = false;
  std::vector<std::string> warnings;
};

// Delaunay triangulation (Bowyer-Watson) of the sample positions.
class Triangulation {
 public:
  // Duplicate positions keep the first sample. Fewer than three distinct or
  // all-collinear samples produce an empty triangulation (degenerate()).
  explicit Triangulation(std::span<const GaugeSample> samples);

  bool degenerate() const { return triangles_.empty(); }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  // Barycentric interpolation inside the hull, nearest sample outside.
  double evaluate(double x, double y) const;

 private:
  std::vector<GaugeSample> points_;
  std::vector<std::array<int, 3>> triangles_;
};

RainField tin_interpolate(std::span<const GaugeSample> samples, const GridGeoref& georef,
                          InterpolationDiagnostics* diag = nullptr);
RainField tin_interpolate(const StationSeries& series, int t, const GridGeoref& georef,
                          InterpolationDiagnostics* diag = nullptr);

// Thin-plate spline with kernel r^2 log r plus an affine term.
class ThinPlateSpline {
 public:
  // Throws DomainError on duplicate positions (naming them) or a singular
  // system (fewer than three or collinear samples).
  ThinPlateSpline(std::span<const GaugeSample> samples, double smoothing = 0.0);
  double evaluate(double x, double y) const;

 private:
  std::vector<GaugeSample> points_;
  std::vector<double> weights_;
  std::array<double, 3> affine_{};
};

RainField tps_interpolate(std::span<const GaugeSample> samples, const GridGeoref& georef,
                          double smoothing = 0.0);
RainField tps_interpolate(const StationSeries& series, int t, const GridGeoref& georef,
                          double smoothing = 0.0);

double idw_value(std::span<const GaugeSample> samples, double x, double y, double power = 2.0);
RainField idw_interpolate(std::span<const GaugeSample> samples, const GridGeoref& georef,
                          double power = 2.0);
RainField idw_interpolate(const StationSeries& series, int t, const GridGeoref& georef,
                          double power = 2.0);

}  // namespace rainrecon
