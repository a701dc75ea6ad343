#pragma once

// Flat key=value configuration text mirroring the fields of TrainConfig,
// CanConfig (keys prefixed "can.") and NimaConfig (keys prefixed "nima.").
// Lines are `key = value`; blank lines and lines starting with '#' are
// ignored.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "nimaenh/can.hpp"
#include "nimaenh/quality.hpp"
#include "nimaenh/training.hpp"

namespace nimaenh::config {

using KeyValues = std::map<std::string, std::string>;

// Throws InvalidArgument naming the line for malformed or duplicate entries.
KeyValues parse(std::string_view text);
// One `key = value` line per entry in key order.
std::string format(const KeyValues& values);

// Throws IoError when the file cannot be read.
KeyValues load(const std::filesystem::path& path);

struct RunConfig {
  train::TrainConfig train;
  can::CanConfig can = can::desk_config();
  quality::NimaConfig nima;
};

// Every field with its current value, including defaults.
KeyValues to_key_values(const RunConfig& config);

// Overwrites the fields named in `values`. Unknown keys and unparsable values
// throw InvalidArgument; the result is validated.
RunConfig apply(RunConfig base, const KeyValues& values);

// Round-trip exact text for a double.
std::string format_double(double value);

// SHA-256 of format(to_key_values(config)).
std::string config_hash(const RunConfig& config);

}  // namespace nimaenh::config
