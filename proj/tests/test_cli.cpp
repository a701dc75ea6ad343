#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "nimaenh/checkpoint.hpp"
#include "nimaenh/csv.hpp"
#include "nimaenh/image.hpp"
#include "nimaenh/synth.hpp"

namespace nimaenh {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<csv::Row> read_csv(const fs::path& path) { return csv::parse(slurp(path)); }

// Small models so whole pipelines run in seconds.
constexpr const char* kFastConfig =
    "step_budget = 6\n"
    "batch_size = 2\n"
    "can.depth = 4\n"
    "can.width = 4\n"
    "can.dilation_schedule = 1,2,1,1\n";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("nimaenh_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "fast.cfg") << kFastConfig;
  }
  fs::path root_;
  std::string cfg() const { return (root_ / "fast.cfg").string(); }

  fs::path gen_data(const std::string& name = "data") {
    const auto r = run({"gen-data", "--seed", "3", "--count", "10", "--size", "16x16", "--operator", "mixed",
                        "--config", cfg(), "--out", (root_ / name).string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return root_ / name;
  }
};

TEST_F(Cli, GenDataIsByteIdenticalAcrossRuns) {
  const fs::path a = gen_data("a"), b = gen_data("b");
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a / "images")) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / "images" / entry.path().filename())) << entry.path();
    ++files;
  }
  EXPECT_EQ(files, 30u);
  EXPECT_TRUE(fs::exists(a / "run_manifest.json"));
}

TEST_F(Cli, GenDataBelowMinimumSizeIsUsageError) {
  const auto r = run({"gen-data", "--count", "10", "--size", "4x4", "--out", (root_ / "x").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("4x4"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("minimum"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownFlagIsUsageError) {
  EXPECT_EQ(run({"gen-data", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"no-such-command"}).code, cli::kExitUsage);
}

fs::path uniform_stub(const fs::path& dir) {
  auto model = quality::build_tiny_nima({}, 0);
  for (auto* name : {"nima.fc.w", "nima.fc.b"})
    for (double& v : model.params.at(name).values()) v = 0.0;
  const fs::path path = dir / "stub.ckpt";
  checkpoint::save(path, checkpoint::from_model(model));
  return path;
}

TEST_F(Cli, ScoreWithUniformStubGivesMidScore) {
  const fs::path stub = uniform_stub(root_);
  image::write_image(root_ / "b.png", synth::procedural_image(1, 20, 24));
  image::write_image(root_ / "a.ppm", synth::procedural_image(2, 16, 16));
  const auto r = run({"score", "--nima", stub.string(), "--images", (root_ / "b.png").string(),
                      (root_ / "a.ppm").string(), "--out", (root_ / "scores.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(root_ / "scores.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "path");
  EXPECT_EQ(rows[0][1], "nima_score");
  EXPECT_EQ(rows[0].size(), 12u);
  EXPECT_NE(rows[1][0].find("a.ppm"), std::string::npos);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_NEAR(std::stod(rows[i][1]), 5.5, 1e-6);
    double total = 0.0;
    for (std::size_t k = 2; k < 12; ++k) total += std::stod(rows[i][k]);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST_F(Cli, ScoreMissingImageIsIoErrorNamingPath) {
  const fs::path stub = uniform_stub(root_);
  const std::string missing = (root_ / "nope.png").string();
  const auto r = run({"score", "--nima", stub.string(), "--images", missing, "--out", (root_ / "s.csv").string()});
  EXPECT_EQ(r.code, cli::kExitIo);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(Cli, CorruptCheckpointIsIoErrorMentioningChecksum) {
  const fs::path stub = uniform_stub(root_);
  std::string bytes = slurp(stub);
  bytes[bytes.size() - 10] ^= 0x40;
  std::ofstream(stub, std::ios::binary | std::ios::trunc) << bytes;
  image::write_image(root_ / "a.png", synth::procedural_image(2, 16, 16));
  const auto r = run({"score", "--nima", stub.string(), "--images", (root_ / "a.png").string(), "--out",
                      (root_ / "s.csv").string()});
  EXPECT_EQ(r.code, cli::kExitIo);
  EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

TEST_F(Cli, EnhanceKeepsDimensionsAndRejectsUndersized) {
  can::CanConfig config = can::desk_config();
  const fs::path ckpt = root_ / "can.ckpt";
  checkpoint::save(ckpt, checkpoint::from_model(can::build_can(config, 0)));
  image::write_image(root_ / "odd.png", synth::procedural_image(3, 37, 61));
  auto r = run({"enhance", "--can", ckpt.string(), "--images", (root_ / "odd.png").string(), "--out",
                (root_ / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Tensor enhanced = image::read_image(root_ / "out" / "odd.png");
  EXPECT_EQ(enhanced.shape(), (Shape{37, 61, 3}));

  image::write_image(root_ / "tiny.png", synth::procedural_image(3, 8, 8));
  r = run({"enhance", "--can", ckpt.string(), "--images", (root_ / "tiny.png").string(), "--out",
           (root_ / "out2").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("tiny.png"), std::string::npos) << r.err;
}

TEST_F(Cli, FullPipelineShortRun) {
  const fs::path data = gen_data();
  auto r = run({"train-nima", "--data", data.string(), "--config", cfg(), "--out", (root_ / "tn").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "tn" / "nima.ckpt"));
  EXPECT_EQ(read_csv(root_ / "tn" / "eval.csv")[0][0], "count");

  const std::string nima = (root_ / "tn" / "nima.ckpt").string();
  r = run({"train-can", "--data", data.string(), "--nima", nima, "--gamma", "0", "--config", cfg(), "--out",
           (root_ / "g0").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto history = read_csv(root_ / "g0" / "history.csv");
  ASSERT_EQ(history.size(), 1u + 6u);
  EXPECT_EQ(history[0], (csv::Row{"step", "fidelity", "gamma_q", "total"}));
  for (std::size_t i = 1; i < history.size(); ++i) EXPECT_EQ(std::stod(history[i][2]), 0.0);

  r = run({"train-can", "--data", data.string(), "--nima", nima, "--config", cfg(), "--out",
           (root_ / "g4").string()});
  ASSERT_EQ(r.code, 0) << r.err;

  r = run({"eval", "--nima", nima, "--can", (root_ / "g4" / "can.ckpt").string(), "--can-baseline",
           (root_ / "g0" / "can.ckpt").string(), "--data", data.string(), "--out", (root_ / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto methods = read_csv(root_ / "ev" / "eval_methods.csv");
  ASSERT_EQ(methods.size(), 5u);
  EXPECT_EQ(methods[0], (csv::Row{"method", "count", "mean_score", "std_score", "mean_psnr"}));
  EXPECT_EQ(methods[2][0], "reference");
  EXPECT_EQ(std::stod(methods[2][4]), 99.0);
  EXPECT_TRUE(fs::exists(root_ / "ev" / "eval_scores.csv"));
}

TEST_F(Cli, DefaultOutputFollowsEnvironment) {
  ::setenv(cli::kOutDirEnv, (root_ / "env").string().c_str(), 1);
  const auto r = run({"gen-data", "--count", "10", "--size", "16x16"});
  ::unsetenv(cli::kOutDirEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "env" / "gen-data" / "manifest.csv"));
  EXPECT_EQ(run({"gen-data", "--count", "10", "--size", "16x16"}).code, cli::kExitUsage);
}

}  // namespace
}  // namespace nimaenh
