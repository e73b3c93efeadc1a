#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rainrecon {

// Axis-aligned raster georeference. Row index grows with y, column index
// with x; cell (0, 0) touches (x_min, y_min).
class GridGeoref {
 public:
  GridGeoref() = default;
  GridGeoref(double x_min, double y_min, double x_max, double y_max, int height, int width);

  double x_min() const { return x_min_; }
  double y_min() const { return y_min_; }
  double x_max() const { return x_max_; }
  double y_max() const { return y_max_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t cell_count() const { return static_cast<std::size_t>(height_) * width_; }
  double cell_dx() const { return (x_max_ - x_min_) / width_; }
  double cell_dy() const { return (y_max_ - y_min_) / height_; }

  bool contains(double x, double y) const {
    return x >= x_min_ && x <= x_max_ && y >= y_min_ && y <= y_max_;
  }
  double cell_center_x(int col) const { return x_min_ + (col + 0.5) * cell_dx(); }
  double cell_center_y(int row) const { return y_min_ + (row + 0.5) * cell_dy(); }

  // Coordinates mapped to [0, 1] against the bounding box.
  double normalized_x(double x) const { return (x - x_min_) / (x_max_ - x_min_); }
  double normalized_y(double y) const { return (y - y_min_) / (y_max_ - y_min_); }

  bool operator==(const GridGeoref&) const = default;

 private:
  double x_min_ = 0.0;
  double y_min_ = 0.0;
  double x_max_ = 1.0;
  double y_max_ = 1.0;
  int height_ = 1;
  int width_ = 1;
};

struct CellIndex {
  int row = 0;
  int col = 0;
  bool operator==(const CellIndex&) const = default;
};

// Cell containing (x, y). Uses the floor rule on each axis, so a point on an
// interior cell edge belongs to the cell starting at that edge; points on the
// upper bounding edge belong to the last cell. Throws DomainError naming the
// offending axis when outside the bounding box.
CellIndex grid_cell_of(const GridGeoref& georef, double x, double y);

// T x H x W reflectivity in dBZ, row-major, with per-step timestamps in
// minutes. Stored as float because that is the on-disk precision.
struct RadarSequence {
  GridGeoref georef;
  std::vector<double> timestamps;
  std::vector<float> values;

  int steps() const { return static_cast<int>(timestamps.size()); }
  float at(int t, int row, int col) const {
    return values[(static_cast<std::size_t>(t) * georef.height() + row) * georef.width() + col];
  }
  std::span<const float> frame(int t) const {
    return std::span<const float>(values).subspan(static_cast<std::size_t>(t) * georef.cell_count(),
                                                  georef.cell_count());
  }
  // Throws DomainError on shape mismatch, non-finite values or non-increasing timestamps.
  void validate() const;
};

// Replaces NaN and the declared missing-value sentinel by 0 dBZ.
void impute_missing_reflectivity(std::vector<float>& values, float sentinel);

struct Station {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  bool is_virtual = false;
};

using StationSet = std::vector<Station>;

// Throws DomainError on duplicate ids or stations outside the georef.
void validate_stations(const StationSet& stations, const GridGeoref& georef);

// N x T rainfall in mm/h (row-major, station-major) plus an observed mask.
struct StationSeries {
  StationSet stations;
  int steps = 0;
  std::vector<double> rain;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return stations.size(); }
  double rain_at(std::size_t i, int t) const { return rain[i * steps + t]; }
  bool observed(std::size_t i, int t) const { return mask[i * steps + t] != 0; }

  static StationSeries empty(int steps);
  StationSeries subset(std::span<const std::size_t> indices) const;
  StationSeries slice_steps(int begin, int end) const;
  void validate() const;
};

// Undirected neighbour lists; each list is sorted ascending and excludes the
// node itself.
struct Adjacency {
  int k = 0;
  std::vector<std::vector<int>> neighbors;

  std::size_t size() const { return neighbors.size(); }
  bool linked(int i, int j) const;
};

// k nearest distinct nodes by Euclidean distance (ties by lower index),
// followed by symmetric closure. Requires N >= 2 and 1 <= k < N.
Adjacency knn_adjacency(const StationSet& stations, int k);
Adjacency knn_adjacency(std::span<const double> xs, std::span<const double> ys, int k);

// H x W reconstructed rainfall in mm/h.
struct RainField {
  GridGeoref georef;
  std::vector<double> values;

  explicit RainField(const GridGeoref& g = {}) : georef(g), values(g.cell_count(), 0.0) {}
  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * georef.width() + col]; }
  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * georef.width() + col];
  }
  // Value of the cell containing (x, y).
  double sample(double x, double y) const;
};

enum class RainScaling { log1p, identity };

// Invertible rainfall transform used for model inputs and targets.
class RainNormalizer {
 public:
  explicit RainNormalizer(RainScaling scheme = RainScaling::log1p, double scale = 1.0);

  RainScaling scheme() const { return scheme_; }
  double scale() const { return scale_; }

  // Throws DomainError for negative rainfall.
  double normalize(double mm_per_h) const;
  double denormalize(double value) const;
  std::vector<double> normalize(std::span<const double> values) const;
  std::vector<double> denormalize(std::span<const double> values) const;

 private:
  RainScaling scheme_;
  double scale_;
};

RainScaling parse_rain_scaling(const std::string& name);
std::string to_string(RainScaling scheme);

}  // namespace rainrecon
