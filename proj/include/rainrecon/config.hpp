#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "rainrecon/datagen.hpp"
#include "rainrecon/harness.hpp"

namespace rainrecon {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// UTF-8 "key=value" lines; blank lines and lines starting with '#' are
// skipped, as is anything after a '#' that follows whitespace. Throws
// FormatError naming `source` and the line for malformed input.
KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_config_file(const std::filesystem::path& path);

// Throw UsageError for unknown keys and ConfigError for unparsable values.
void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
void apply_storm_setting(StormConfig& cfg, const std::string& key, const std::string& value);

// Every TrainConfig field, doubles at full precision; the ablation flags
// appear as "ablate" with a comma-separated list.
KeyValues train_config_snapshot(const TrainConfig& cfg);
TrainConfig train_config_from_snapshot(const KeyValues& kv);

}  // namespace rainrecon
