#include "rainrecon/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "rainrecon/errors.hpp"

namespace rainrecon {

Rgb rain_colour(double fraction) {
  static constexpr std::array<Rgb, 6> kStops{{{255, 255, 255},
                                               {160, 200, 255},
                                               {30, 90, 220},
                                               {40, 180, 80},
                                               {250, 220, 40},
                                               {220, 30, 30}}};
  const double f = std::clamp(std::isfinite(fraction) ? fraction : 0.0, 0.0, 1.0) * (kStops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(f), kStops.size() - 2);
  const double u = f - static_cast<double>(i);
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    out[c] = static_cast<std::uint8_t>(std::lround(kStops[i][c] + u * (kStops[i + 1][c] - kStops[i][c])));
  }
  return out;
}

std::vector<std::uint8_t> heatmap_bytes(const RainField& field, const StationSet& stations,
                                        const HeatmapOptions& options) {
  if (options.pixel_scale < 1) throw ConfigError("heatmap: pixel scale must be positive");
  const auto& g = field.georef;
  double vmax = options.vmax;
  for (double v : field.values) {
    if (!std::isfinite(v)) throw DomainError("heatmap: field contains non-finite values");
    if (options.vmax <= 0.0) vmax = std::max(vmax, v);
  }
  if (!(vmax > 0.0)) vmax = 1.0;
  const int s = options.pixel_scale, w = g.width() * s, h = g.height() * s;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const std::size_t offset = bytes.size();
  bytes.resize(offset + static_cast<std::size_t>(w) * h * 3);
  auto put = [&](int px, int py, const Rgb& c) {
    if (px < 0 || py < 0 || px >= w || py >= h) return;
    std::copy(c.begin(), c.end(), bytes.begin() + offset + (static_cast<std::size_t>(py) * w + px) * 3);
  };
  for (int py = 0; py < h; ++py) {
    const int row = g.height() - 1 - py / s;
    for (int px = 0; px < w; ++px) put(px, py, rain_colour(field.at(row, px / s) / vmax));
  }
  if (options.mark_stations) {
    const Rgb black{0, 0, 0};
    const int arm = std::max(1, s / 3);
    for (const auto& st : stations) {
      const int px = static_cast<int>(std::floor(g.normalized_x(st.x) * w));
      const int py = h - 1 - static_cast<int>(std::floor(g.normalized_y(st.y) * h));
      for (int d = -arm; d <= arm; ++d) {
        put(px + d, py, black);
        put(px, py + d, black);
      }
    }
  }
  return bytes;
}

void render_heatmap(const RainField& field, const StationSet& stations, const std::filesystem::path& path,
                    const HeatmapOptions& options) {
  const auto bytes = heatmap_bytes(field, stations, options);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("heatmap: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("heatmap: write failed for " + path.string());
}

void write_field_csv(const RainField& field, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (int r = 0; r < field.georef.height(); ++r) {
    for (int c = 0; c < field.georef.width(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", field.at(r, c));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

RainField read_field_csv(const std::filesystem::path& path, const GridGeoref& georef) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  RainField field(georef);
  std::string line;
  int r = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (r >= georef.height()) throw FormatError(path.string() + ": more than " + std::to_string(georef.height()) + " rows");
    std::stringstream ss(line);
    std::string cell;
    int c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= georef.width()) throw FormatError(path.string() + ": row " + std::to_string(r) + " too long");
      char* end = nullptr;
      field.at(r, c) = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw FormatError(path.string() + ": bad value '" + cell + "'");
      ++c;
    }
    if (c != georef.width()) {
      throw FormatError(path.string() + ": row " + std::to_string(r) + " has " + std::to_string(c) +
                        " values, expected " + std::to_string(georef.width()));
    }
    ++r;
  }
  if (r != georef.height()) {
    throw FormatError(path.string() + ": expected " + std::to_string(georef.height()) + " rows, found " +
                      std::to_string(r));
  }
  return field;
}

}  // namespace rainrecon
