#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rainrecon/config.hpp"
#include "rainrecon/errors.hpp"
#include "rainrecon/harness.hpp"

namespace rainrecon {

namespace {

constexpr const char* kMagic = "rainrecon-checkpoint";

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t to_little(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::little) {
    return bits;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((bits >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return out;
  }
}

}  // namespace

Checkpoint make_checkpoint(const ReconstructionModel& model, const TrainConfig& config, std::size_t step) {
  Checkpoint c;
  c.config = config;
  c.layout = model.layout();
  c.step = step;
  for (const auto& [name, var] : model.params().entries()) {
    c.params[name] = {var.shape(), std::vector<double>(var.value().begin(), var.value().end())};
  }
  return c;
}

std::unique_ptr<ReconstructionModel> restore_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<ReconstructionModel>(ckpt.config.model, ckpt.config.ablation, ckpt.layout,
                                                     ckpt.config.seed);
  const auto& entries = model->params().entries();
  if (entries.size() != ckpt.params.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                      std::to_string(entries.size()));
  }
  for (const auto& [name, var] : entries) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw FormatError("checkpoint: missing parameter '" + name + "'");
    if (it->second.first != var.shape()) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + ag::shape_string(it->second.first) +
                        ", model expects " + ag::shape_string(var.shape()));
    }
    ag::Var p = var;
    std::copy(it->second.second.begin(), it->second.second.end(), p.mutable_value().begin());
  }
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  const auto& g = ckpt.layout.georef;
  out << kMagic << "\n"
      << "version=" << Checkpoint::kVersion << "\n"
      << "step=" << ckpt.step << "\n"
      << "layout.x_min=" << full(g.x_min()) << "\n"
      << "layout.y_min=" << full(g.y_min()) << "\n"
      << "layout.x_max=" << full(g.x_max()) << "\n"
      << "layout.y_max=" << full(g.y_max()) << "\n"
      << "layout.height=" << g.height() << "\n"
      << "layout.width=" << g.width() << "\n"
      << "layout.gauge_rows=" << ckpt.layout.gauge_rows << "\n"
      << "layout.virtual_count=" << ckpt.layout.virtual_count << "\n"
      << "layout.virtual_seed=" << ckpt.layout.virtual_seed << "\n";
  for (const auto& [k, v] : train_config_snapshot(ckpt.config)) out << "config." << k << "=" << v << "\n";
  out << "params=" << ckpt.params.size() << "\n";
  for (const auto& [name, sv] : ckpt.params) {
    const auto& [shape, values] = sv;
    out << "param " << name << " " << shape.size();
    for (auto d : shape) out << " " << d;
    out << "\n";
    for (double v : values) {
      const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
    out << "\n";
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  const std::string src = path.filename().string();
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw FormatError(src + ": not a checkpoint file");
  std::map<std::string, std::string> header;
  KeyValues config;
  std::size_t param_count = 0;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(src + ": malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "params") {
      param_count = std::stoul(value);
      break;
    }
    if (key.rfind("config.", 0) == 0) {
      config.emplace_back(key.substr(7), value);
    } else {
      header[key] = value;
    }
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) throw FormatError(src + ": missing field '" + key + "'");
    return it->second;
  };
  if (std::stoi(field("version")) != Checkpoint::kVersion) {
    throw FormatError(src + ": unsupported version " + field("version"));
  }
  Checkpoint c;
  try {
    c.step = std::stoul(field("step"));
    c.layout.georef = GridGeoref(std::stod(field("layout.x_min")), std::stod(field("layout.y_min")),
                                 std::stod(field("layout.x_max")), std::stod(field("layout.y_max")),
                                 std::stoi(field("layout.height")), std::stoi(field("layout.width")));
    c.layout.gauge_rows = std::stoul(field("layout.gauge_rows"));
    c.layout.virtual_count = std::stoul(field("layout.virtual_count"));
    c.layout.virtual_seed = std::stoull(field("layout.virtual_seed"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const FormatError*>(&e)) throw;
    throw FormatError(src + ": bad layout field (" + e.what() + ")");
  }
  c.config = train_config_from_snapshot(config);
  for (std::size_t p = 0; p < param_count; ++p) {
    if (!std::getline(in, line)) throw FormatError(src + ": truncated parameter list");
    std::istringstream ss(line);
    std::string tag, name;
    std::size_t rank = 0;
    if (!(ss >> tag >> name >> rank) || tag != "param") throw FormatError(src + ": bad parameter header");
    ag::Shape shape(rank);
    for (auto& d : shape) {
      if (!(ss >> d)) throw FormatError(src + ": bad shape for '" + name + "'");
    }
    std::vector<double> values(ag::shape_size(shape));
    for (double& v : values) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) {
        throw FormatError(src + ": truncated values for '" + name + "'");
      }
      v = std::bit_cast<double>(to_little(bits));
    }
    if (in.get() != '\n') throw FormatError(src + ": missing terminator after '" + name + "'");
    c.params[name] = {std::move(shape), std::move(values)};
  }
  return c;
}

}  // namespace rainrecon
