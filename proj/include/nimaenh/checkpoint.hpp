#pragma once

// Model checkpoints. Layout:
//
//   8 bytes   magic "NIMAENH1"
//   4 bytes   manifest length N, little-endian
//   N bytes   UTF-8 JSON manifest: version, model kind, step, config, config
//             hash, and per tensor its name, shape, byte offset and count
//   ...       tensor data, little-endian float32, in manifest order
//   4 bytes   CRC-32 of every preceding byte, little-endian
//
// Parameters are narrowed to float32 on save, so a loaded model equals the
// float-rounded original and a save -> load -> save cycle is byte-identical.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nimaenh/can.hpp"
#include "nimaenh/quality.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::checkpoint {

inline constexpr std::string_view kMagic = "NIMAENH1";
inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  std::string kind;  // "nima" or "can"
  std::uint64_t step = 0;
  std::map<std::string, std::string> config;
  ParameterSet tensors;
};

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);

// Throws VersionMismatchError for a foreign magic or format version and
// CorruptCheckpointError for truncation, checksum or manifest damage.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

// Writes through a temporary file and renames it into place.
void save(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

// SHA-256 over names, shapes and the float64 bytes of every parameter in
// name order.
std::string parameter_hash(const ParameterSet& params);

Checkpoint from_model(const quality::NimaModel& model, std::uint64_t step = 0);
Checkpoint from_model(const can::CanModel& model, std::uint64_t step = 0);

// Throw CorruptCheckpointError when kind, config or tensor shapes do not
// describe a valid model. The predictor comes back frozen.
quality::NimaModel to_nima(const Checkpoint& checkpoint);
can::CanModel to_can(const Checkpoint& checkpoint);

}  // namespace nimaenh::checkpoint
