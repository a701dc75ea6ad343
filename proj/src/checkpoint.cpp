#include "nimaenh/checkpoint.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "nimaenh/config.hpp"
#include "nimaenh/error.hpp"

namespace nimaenh::checkpoint {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; checkpoints stay far below 4 GiB but chunk anyway.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, n);
    done += n;
  }
  return static_cast<std::uint32_t>(crc);
}

[[noreturn]] void corrupt(const std::string& what) {
  throw CorruptCheckpointError("corrupt checkpoint: " + what);
}

std::map<std::string, std::string> with_prefix(const config::KeyValues& all,
                                               std::string_view prefix) {
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : all)
    if (key.rfind(prefix, 0) == 0) out[key] = value;
  return out;
}

config::RunConfig config_of(const Checkpoint& c, std::string_view kind) {
  if (c.kind != kind) {
    corrupt("expected a " + std::string(kind) + " model, found '" + c.kind + "'");
  }
  try {
    return config::apply({}, c.config);
  } catch (const InvalidArgument& e) {
    corrupt(std::string("bad model config: ") + e.what());
  }
}

// Tensor names and shapes must match what the config builds.
void check_layout(const ParameterSet& expected, const ParameterSet& actual) {
  if (expected.size() != actual.size()) {
    corrupt("expected " + std::to_string(expected.size()) + " tensors, found " +
            std::to_string(actual.size()));
  }
  for (const auto& [name, t] : expected) {
    const auto it = actual.find(name);
    if (it == actual.end()) corrupt("missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      corrupt("tensor " + name + " has shape " + to_string(it->second.shape()) + ", expected " +
              to_string(t.shape()));
    }
  }
}

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  json manifest;
  manifest["version"] = kFormatVersion;
  manifest["kind"] = c.kind;
  manifest["step"] = c.step;
  manifest["config"] = c.config;
  {
    std::string text;
    for (const auto& [key, value] : c.config) text += key + " = " + value + "\n";
    manifest["config_hash"] =
        sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += t.size() * sizeof(float);
  }
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset + 4);
  for (const auto& [name, t] : c.tensors) {
    for (double v : t.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      put_u32(out, bits);
    }
  }
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size()) corrupt("file is truncated");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw VersionMismatchError("not a checkpoint of this format (bad magic bytes)");
  }
  if (bytes.size() < kMagic.size() + 8) corrupt("file is truncated");
  const std::size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_u32(bytes.data() + body)) {
    corrupt("checksum mismatch (file truncated or damaged)");
  }
  const std::uint32_t manifest_len = get_u32(bytes.data() + kMagic.size());
  const std::size_t data_start = kMagic.size() + 4 + std::size_t{manifest_len};
  if (data_start > body) corrupt("manifest length exceeds file size");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(kMagic.size() + 4),
                           bytes.begin() + static_cast<std::ptrdiff_t>(data_start));
  } catch (const json::exception& e) {
    corrupt(std::string("manifest is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kFormatVersion) {
      throw VersionMismatchError("checkpoint format version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kFormatVersion) + ")");
    }
    c.kind = manifest.at("kind").get<std::string>();
    c.step = manifest.at("step").get<std::uint64_t>();
    c.config = manifest.at("config").get<std::map<std::string, std::string>>();
    const std::size_t data_len = body - data_start;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (count != element_count(shape) || count == 0) corrupt("tensor " + name + " count mismatch");
      if (offset > data_len || count * sizeof(float) > data_len - offset) {
        corrupt("tensor " + name + " extends past the data section");
      }
      Tensor t = Tensor::uninitialized(shape);
      const std::uint8_t* src = bytes.data() + data_start + offset;
      for (std::size_t i = 0; i < count; ++i) {
        t[i] = static_cast<double>(std::bit_cast<float>(get_u32(src + 4 * i)));
      }
      if (!c.tensors.emplace(name, std::move(t)).second) corrupt("duplicate tensor " + name);
    }
  } catch (const json::exception& e) {
    corrupt(std::string("malformed manifest: ") + e.what());
  } catch (const ShapeError& e) {
    corrupt(std::string("malformed tensor shape: ") + e.what());
  }
  return c;
}

void save(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize(checkpoint);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const CorruptCheckpointError& e) {
    throw CorruptCheckpointError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string parameter_hash(const ParameterSet& params) {
  std::vector<std::uint8_t> buf;
  auto put_u64 = [&](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  };
  for (const auto& [name, t] : params) {
    put_u64(name.size());
    buf.insert(buf.end(), name.begin(), name.end());
    put_u64(t.rank());
    for (auto extent : t.shape()) put_u64(extent);
    for (double v : t.values()) put_u64(std::bit_cast<std::uint64_t>(v));
  }
  return sha256_hex(buf);
}

Checkpoint from_model(const quality::NimaModel& model, std::uint64_t step) {
  config::RunConfig rc;
  rc.nima = model.config;
  Checkpoint c;
  c.kind = "nima";
  c.step = step;
  c.config = with_prefix(config::to_key_values(rc), "nima.");
  c.tensors = model.params;
  return c;
}

Checkpoint from_model(const can::CanModel& model, std::uint64_t step) {
  config::RunConfig rc;
  rc.can = model.config;
  Checkpoint c;
  c.kind = "can";
  c.step = step;
  c.config = with_prefix(config::to_key_values(rc), "can.");
  c.tensors = model.params;
  return c;
}

quality::NimaModel to_nima(const Checkpoint& checkpoint) {
  const auto rc = config_of(checkpoint, "nima");
  check_layout(quality::build_tiny_nima(rc.nima, 0).params, checkpoint.tensors);
  quality::NimaModel model;
  model.config = rc.nima;
  model.params = checkpoint.tensors;
  model.frozen = true;
  return model;
}

can::CanModel to_can(const Checkpoint& checkpoint) {
  const auto rc = config_of(checkpoint, "can");
  check_layout(can::build_can(rc.can, 0).params, checkpoint.tensors);
  can::CanModel model;
  model.config = rc.can;
  model.params = checkpoint.tensors;
  return model;
}

}  // namespace nimaenh::checkpoint
