#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rainrecon/core.hpp"

namespace rainrecon {

struct HeatmapOptions {
  int pixel_scale = 8;       // pixels per cell edge
  double vmax = 0.0;         // top of the colour scale in mm/h; 0 uses the field maximum
  bool mark_stations = true;
};

using Rgb = std::array<std::uint8_t, 3>;

// Fixed colour ramp over [0, 1]: white, light blue, blue, green, yellow, red.
Rgb rain_colour(double fraction);

// Binary PPM (P6) of W * scale by H * scale pixels; the top image row shows
// the highest grid row. Stations are drawn as black crosses. Throws
// FormatError when the file cannot be written and DomainError for
// non-finite fields.
void render_heatmap(const RainField& field, const StationSet& stations, const std::filesystem::path& path,
                    const HeatmapOptions& options = {});
std::vector<std::uint8_t> heatmap_bytes(const RainField& field, const StationSet& stations,
                                        const HeatmapOptions& options = {});

// Field as text: H lines of W comma-separated values, row 0 first.
void write_field_csv(const RainField& field, const std::filesystem::path& path);
RainField read_field_csv(const std::filesystem::path& path, const GridGeoref& georef);

}  // namespace rainrecon
