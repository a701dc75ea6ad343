#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nimaenh/checkpoint.hpp"
#include "nimaenh/config.hpp"
#include "nimaenh/error.hpp"
#include "support.hpp"

namespace nimaenh {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nimaenh_test_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

can::CanConfig small_can() {
  can::CanConfig c;
  c.depth = 4;
  c.width = 6;
  return c;
}

TEST(Checkpoint, NimaRoundTripEqualsFloatRoundedOriginal) {
  const auto model = quality::build_tiny_nima({}, 3);
  const fs::path path = scratch("nima.ckpt");
  checkpoint::save(path, checkpoint::from_model(model, 17));
  const auto loaded = checkpoint::load(path);
  EXPECT_EQ(loaded.kind, "nima");
  EXPECT_EQ(loaded.step, 17u);
  const auto back = checkpoint::to_nima(loaded);
  EXPECT_TRUE(back.frozen);
  EXPECT_EQ(back.config.channels, model.config.channels);
  for (const auto& [name, t] : model.params) {
    const Tensor& u = back.params.at(name);
    ASSERT_EQ(u.shape(), t.shape()) << name;
    for (std::size_t i = 0; i < t.size(); ++i)
      ASSERT_EQ(u[i], static_cast<double>(static_cast<float>(t[i]))) << name;
  }
}

TEST(Checkpoint, CanResaveIsByteIdentical) {
  const auto model = can::build_can(small_can(), 4);
  const fs::path a = scratch("a.ckpt"), b = scratch("b.ckpt");
  checkpoint::save(a, checkpoint::from_model(model, 5));
  checkpoint::save(b, checkpoint::from_model(checkpoint::to_can(checkpoint::load(a)), 5));
  EXPECT_EQ(read_bytes(a), read_bytes(b));
  const auto back = checkpoint::to_can(checkpoint::load(a));
  EXPECT_EQ(back.config.depth, 4u);
  EXPECT_EQ(back.config.width, 6u);
}

TEST(Checkpoint, EveryTruncationIsCorrupt) {
  const auto bytes = checkpoint::serialize(checkpoint::from_model(can::build_can(small_can(), 0)));
  for (std::size_t n : {std::size_t{12}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    const std::span<const std::uint8_t> cut(bytes.data(), n);
    EXPECT_THROW(checkpoint::deserialize(cut), CorruptCheckpointError) << n;
  }
}

TEST(Checkpoint, FlippedDataByteFailsChecksum) {
  auto bytes = checkpoint::serialize(checkpoint::from_model(can::build_can(small_can(), 0)));
  bytes[bytes.size() - 20] ^= 0x01;
  try {
    checkpoint::deserialize(bytes);
    FAIL() << "expected CorruptCheckpointError";
  } catch (const CorruptCheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, ForeignMagicIsVersionMismatch) {
  auto bytes = checkpoint::serialize(checkpoint::from_model(can::build_can(small_can(), 0)));
  bytes[7] = '2';
  EXPECT_THROW(checkpoint::deserialize(bytes), VersionMismatchError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(checkpoint::load(scratch("does_not_exist.ckpt")), IoError);
}

TEST(Checkpoint, KindAndShapeMismatchAreCorrupt) {
  const auto nima = checkpoint::from_model(quality::build_tiny_nima({}, 0));
  EXPECT_THROW(checkpoint::to_can(nima), CorruptCheckpointError);
  auto damaged = nima;
  damaged.tensors.at("nima.fc.b") = Tensor({7});
  EXPECT_THROW(checkpoint::to_nima(damaged), CorruptCheckpointError);
  auto missing = checkpoint::from_model(can::build_can(small_can(), 0));
  missing.tensors.erase("can.1.w");
  EXPECT_THROW(checkpoint::to_can(missing), CorruptCheckpointError);
}

TEST(Checkpoint, ParameterHashTracksValues) {
  auto model = can::build_can(small_can(), 0);
  const auto h = checkpoint::parameter_hash(model.params);
  EXPECT_EQ(h.size(), 64u);
  EXPECT_EQ(h, checkpoint::parameter_hash(can::build_can(small_can(), 0).params));
  model.params.at("can.0.b")[0] += 1e-12;
  EXPECT_NE(h, checkpoint::parameter_hash(model.params));
}

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(checkpoint::sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::string abc = "abc";
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size());
  EXPECT_EQ(checkpoint::sha256_hex(bytes), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

// ---------------------------------------------------------------------------

TEST(Config, ParseIgnoresCommentsAndWhitespace) {
  const auto kv = config::parse("# header\n\n  gamma = 0.5 \nbatch_size=4\r\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("gamma"), "0.5");
  EXPECT_EQ(kv.at("batch_size"), "4");
}

TEST(Config, ParseErrorsNameTheLine) {
  try {
    config::parse("gamma = 1\nno equals sign\n");
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(config::parse("gamma = 1\ngamma = 2\n"), InvalidArgument);
  EXPECT_THROW(config::parse(" = 2\n"), InvalidArgument);
}

TEST(Config, ApplyOverridesAndValidates) {
  const auto run = config::apply({}, config::parse("gamma = 0.25\ncan.depth = 5\ncan.dilation_schedule = 1,2,4,1,1\n"
                                                   "nima.channels = 4,8\noptimizer = momentum\n"));
  EXPECT_EQ(run.train.gamma, 0.25);
  EXPECT_EQ(run.can.depth, 5u);
  EXPECT_EQ(run.can.dilation_schedule, (std::vector<std::size_t>{1, 2, 4, 1, 1}));
  EXPECT_EQ(run.nima.channels, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(run.train.optimizer, train::OptimizerKind::momentum);
  EXPECT_THROW(config::apply({}, {{"no_such_key", "1"}}), InvalidArgument);
  EXPECT_THROW(config::apply({}, {{"gamma", "abc"}}), InvalidArgument);
  EXPECT_THROW(config::apply({}, {{"gamma", "-1"}}), InvalidArgument);
  EXPECT_THROW(config::apply({}, {{"batch_size", "-3"}}), InvalidArgument);
  EXPECT_THROW(config::apply({}, {{"optimizer", "sgd"}}), InvalidArgument);
  EXPECT_THROW(config::apply({}, {{"can.depth", "0"}}), InvalidArgument);
}

TEST(Config, KeyValuesRoundTripExactly) {
  config::RunConfig run;
  run.train.gamma = 0.1 + 0.2;
  run.train.learning_rate = 1.0 / 3.0;
  const auto back = config::apply({}, config::parse(config::format(config::to_key_values(run))));
  EXPECT_EQ(back.train.gamma, run.train.gamma);
  EXPECT_EQ(back.train.learning_rate, run.train.learning_rate);
  EXPECT_EQ(config::config_hash(back), config::config_hash(run));
}

TEST(Config, HashIsStableAndSensitive) {
  const config::RunConfig a, b;
  EXPECT_EQ(config::config_hash(a), config::config_hash(b));
  config::RunConfig c;
  c.train.seed = 1;
  EXPECT_NE(config::config_hash(a), config::config_hash(c));
}

TEST(Config, FormatDoubleRoundTrips) {
  testing::Gen gen(61);
  for (int i = 0; i < 1000; ++i) {
    const double v = gen.normal() * std::pow(10.0, gen.uniform(-20, 20));
    EXPECT_EQ(std::stod(config::format_double(v)), v);
  }
}

TEST(Config, LoadMissingFileIsIoError) {
  EXPECT_THROW(config::load(scratch("nope.cfg")), IoError);
}

}  // namespace
}  // namespace nimaenh
