#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "rainrecon/datagen.hpp"
#include "rainrecon/errors.hpp"

namespace rainrecon {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw FormatError(where + ": expected a number, found '" + text + "'");
  }
  return v;
}

long parse_int(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw FormatError(where + ": expected an integer, found '" + text + "'");
  }
  return v;
}

void write_floats(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<float> read_floats(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.filename().string() + ": cannot open");
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % sizeof(float) != 0 || bytes / sizeof(float) != expected) {
    std::ostringstream msg;
    msg << path.filename().string() << ": expected " << expected << " float32 elements, found "
        << bytes / sizeof(float) << (bytes % sizeof(float) ? " (plus a partial element)" : "");
    throw FormatError(msg.str());
  }
  std::vector<float> values(expected);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
  return values;
}

constexpr const char* kGaugeHeader = "station_id,x,y,t_index,rain_mm_h,observed";

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  const auto& g = ds.radar.georef;
  const double timestep =
      ds.steps() > 1 ? ds.radar.timestamps[1] - ds.radar.timestamps[0] : 0.0;
  {
    std::ofstream meta(dir / "meta.txt");
    if (!meta) throw FormatError("cannot write " + (dir / "meta.txt").string());
    meta << "H=" << g.height() << "\n"
         << "W=" << g.width() << "\n"
         << "T=" << ds.steps() << "\n"
         << "x_min=" << format_double(g.x_min()) << "\n"
         << "x_max=" << format_double(g.x_max()) << "\n"
         << "y_min=" << format_double(g.y_min()) << "\n"
         << "y_max=" << format_double(g.y_max()) << "\n"
         << "timestep_minutes=" << format_double(timestep) << "\n"
         << "units=" << ds.units << "\n";
    if (ds.steps() > 0 && ds.radar.timestamps[0] != 0.0) {
      meta << "start_minutes=" << format_double(ds.radar.timestamps[0]) << "\n";
    }
  }
  write_floats(dir / "radar.f32", ds.radar.values);
  if (ds.truth) write_floats(dir / "truth.f32", *ds.truth);
  std::ofstream csv(dir / "gauges.csv");
  if (!csv) throw FormatError("cannot write " + (dir / "gauges.csv").string());
  csv << kGaugeHeader << "\n";
  for (std::size_t i = 0; i < ds.gauges.size(); ++i) {
    const auto& s = ds.gauges.stations[i];
    for (int t = 0; t < ds.gauges.steps; ++t) {
      csv << s.id << "," << format_double(s.x) << "," << format_double(s.y) << "," << t << ","
          << format_double(ds.gauges.rain_at(i, t)) << "," << (ds.gauges.observed(i, t) ? 1 : 0)
          << "\n";
    }
  }
  if (!csv) throw FormatError("write failed for gauges.csv");
}

Dataset load_dataset(const fs::path& dir, const LoadOptions& options) {
  std::ifstream meta(dir / "meta.txt");
  if (!meta) throw FormatError("meta.txt: cannot open in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError("meta.txt: line " + std::to_string(line_no) + " is not key=value");
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("meta.txt: missing field '" + key + "'");
    return it->second;
  };
  const long h = parse_int(field("H"), "meta.txt: field H");
  const long w = parse_int(field("W"), "meta.txt: field W");
  const long steps = parse_int(field("T"), "meta.txt: field T");
  if (h < 1 || w < 1 || steps < 1) throw FormatError("meta.txt: H, W and T must be positive");
  const double x_min = parse_double(field("x_min"), "meta.txt: field x_min");
  const double x_max = parse_double(field("x_max"), "meta.txt: field x_max");
  const double y_min = parse_double(field("y_min"), "meta.txt: field y_min");
  const double y_max = parse_double(field("y_max"), "meta.txt: field y_max");
  const double timestep = parse_double(field("timestep_minutes"), "meta.txt: field timestep_minutes");
  const double start = kv.count("start_minutes")
                           ? parse_double(kv["start_minutes"], "meta.txt: field start_minutes")
                           : 0.0;

  Dataset ds;
  ds.units = field("units");
  try {
    ds.radar.georef = GridGeoref(x_min, y_min, x_max, y_max, static_cast<int>(h), static_cast<int>(w));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("meta.txt: ") + e.what());
  }
  if (steps > 1 && !(timestep > 0.0)) throw FormatError("meta.txt: field timestep_minutes must be positive");
  for (long t = 0; t < steps; ++t) ds.radar.timestamps.push_back(start + t * timestep);

  const std::size_t count = static_cast<std::size_t>(steps) * h * w;
  ds.radar.values = read_floats(dir / "radar.f32", count);
  if (kv.count("missing_dbz")) {
    impute_missing_reflectivity(ds.radar.values,
                                static_cast<float>(parse_double(kv["missing_dbz"], "meta.txt: field missing_dbz")));
  } else {
    impute_missing_reflectivity(ds.radar.values, std::nanf(""));
  }
  if (fs::exists(dir / "truth.f32")) ds.truth = read_floats(dir / "truth.f32", count);

  std::ifstream csv(dir / "gauges.csv");
  if (!csv) throw FormatError("gauges.csv: cannot open");
  if (!std::getline(csv, line) || trim(line) != kGaugeHeader) {
    throw FormatError(std::string("gauges.csv: header must be '") + kGaugeHeader + "'");
  }
  struct Rows {
    Station station;
    std::vector<double> rain;
    std::vector<std::uint8_t> mask;
    std::vector<std::uint8_t> seen;
  };
  std::vector<Rows> rows;
  std::map<std::string, std::size_t> index;
  line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    const std::string where = "gauges.csv: line " + std::to_string(line_no);
    if (cols.size() != 6) throw FormatError(where + ": expected 6 columns, found " + std::to_string(cols.size()));
    const std::string id = trim(cols[0]);
    const double x = parse_double(cols[1], where + ", field x");
    const double y = parse_double(cols[2], where + ", field y");
    const long t = parse_int(cols[3], where + ", field t_index");
    const double rain = parse_double(cols[4], where + ", field rain_mm_h");
    const long obs = parse_int(cols[5], where + ", field observed");
    if (t < 0 || t >= steps) throw FormatError(where + ", field t_index: out of range");
    if (obs != 0 && obs != 1) throw FormatError(where + ", field observed: must be 0 or 1");
    if (!(x >= x_min && x <= x_max)) throw FormatError(where + ", field x: station '" + id + "' outside the grid");
    if (!(y >= y_min && y <= y_max)) throw FormatError(where + ", field y: station '" + id + "' outside the grid");
    if (obs && !(rain >= 0.0)) throw FormatError(where + ", field rain_mm_h: negative or non-finite");
    auto it = index.find(id);
    if (it == index.end()) {
      it = index.emplace(id, rows.size()).first;
      rows.push_back({{id, x, y, false},
                      std::vector<double>(steps, 0.0),
                      std::vector<std::uint8_t>(steps, 0),
                      std::vector<std::uint8_t>(steps, 0)});
    }
    auto& r = rows[it->second];
    if (r.station.x != x || r.station.y != y) {
      throw FormatError(where + ", field x/y: station '" + id + "' moves between rows");
    }
    if (r.seen[t]) throw FormatError(where + ", field t_index: duplicate step for '" + id + "'");
    r.seen[t] = 1;
    r.rain[t] = rain;
    r.mask[t] = static_cast<std::uint8_t>(obs);
  }
  ds.gauges.steps = static_cast<int>(steps);
  for (auto& r : rows) {
    for (long t = 0; t < steps; ++t) {
      if (!r.seen[t]) {
        throw FormatError("gauges.csv: station '" + r.station.id + "' lacks t_index " + std::to_string(t));
      }
    }
    ds.gauges.stations.push_back(r.station);
    ds.gauges.rain.insert(ds.gauges.rain.end(), r.rain.begin(), r.rain.end());
    ds.gauges.mask.insert(ds.gauges.mask.end(), r.mask.begin(), r.mask.end());
  }
  try {
    ds.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("dataset ") + dir.string() + ": " + e.what());
  }
  if (options.aggregate_factor > 1) return aggregate_steps(ds, options.aggregate_factor, options.rule);
  return ds;
}

Dataset aggregate_steps(const Dataset& ds, int factor, AggregationRule rule) {
  if (factor < 1) throw ConfigError("aggregation factor must be positive");
  if (factor == 1) return ds;
  const int out_steps = ds.steps() / factor;
  if (out_steps < 1) throw DomainError("aggregation factor exceeds the number of steps");
  const std::size_t frame = ds.radar.georef.cell_count();
  const double weight = rule == AggregationRule::mean ? 1.0 / factor : 1.0;

  Dataset out;
  out.units = ds.units;
  out.radar.georef = ds.radar.georef;
  out.radar.values.assign(out_steps * frame, 0.0f);
  if (ds.truth) out.truth = std::vector<float>(out_steps * frame, 0.0f);
  for (int s = 0; s < out_steps; ++s) {
    out.radar.timestamps.push_back(ds.radar.timestamps[s * factor]);
    for (std::size_t p = 0; p < frame; ++p) {
      double refl = 0.0, truth = 0.0;
      for (int k = 0; k < factor; ++k) {
        refl += ds.radar.values[(s * factor + k) * frame + p];
        if (ds.truth) truth += (*ds.truth)[(s * factor + k) * frame + p];
      }
      out.radar.values[s * frame + p] = static_cast<float>(refl / factor);
      if (ds.truth) (*out.truth)[s * frame + p] = static_cast<float>(truth * weight);
    }
  }
  out.gauges.stations = ds.gauges.stations;
  out.gauges.steps = out_steps;
  for (std::size_t i = 0; i < ds.gauges.size(); ++i) {
    for (int s = 0; s < out_steps; ++s) {
      double acc = 0.0;
      bool all = true;
      for (int k = 0; k < factor; ++k) {
        const int t = s * factor + k;
        all = all && ds.gauges.observed(i, t);
        if (ds.gauges.observed(i, t)) acc += ds.gauges.rain_at(i, t);
      }
      out.gauges.rain.push_back(all ? acc * weight : 0.0);
      out.gauges.mask.push_back(all ? 1 : 0);
    }
  }
  return out;
}

AggregationRule parse_aggregation_rule(const std::string& name) {
  if (name == "mean") return AggregationRule::mean;
  if (name == "sum") return AggregationRule::sum;
  throw ConfigError("unknown aggregation rule '" + name + "' (expected mean or sum)");
}

}  // namespace rainrecon
