#include <gtest/gtest.h>

#include <cmath>

#include "nimaenh/can.hpp"
#include "nimaenh/error.hpp"
#include "support.hpp"

namespace nimaenh {
namespace {

using testing::Gen;
using testing::max_abs_diff;
using testing::naive_conv;

can::CanConfig config_of(std::size_t depth, std::size_t width = 32) {
  can::CanConfig c;
  c.depth = depth;
  c.width = width;
  return c;
}

// Layer k reads 3 channels when k == 0, writes 3 when last, else `width`.
std::size_t closed_form_parameter_count(std::size_t depth, std::size_t width) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < depth; ++k) {
    const bool last = k + 1 == depth;
    const std::size_t kernel = last ? 1 : 3;
    const std::size_t in = k == 0 ? 3 : width, out = last ? 3 : width;
    total += kernel * kernel * in * out + out;
  }
  return total;
}

TEST(BuildCan, DefaultConfigLayersAndParameterCount) {
  const auto model = can::build_can({}, 0);
  EXPECT_EQ(model.params.size(), 20u);
  // 896 for the first layer, 8 * 9248 for the 32->32 3x3 layers, 99 for the 1x1 output.
  EXPECT_EQ(closed_form_parameter_count(10, 32), 896u + 8u * 9248u + 99u);
  EXPECT_EQ(parameter_count(model.params), closed_form_parameter_count(10, 32));
  EXPECT_EQ(parameter_count(model.params), 74979u);
}

TEST(BuildCan, DepthThreeWidthFour) {
  const auto model = can::build_can(config_of(3, 4), 0);
  EXPECT_EQ(model.params.at("can.0.w").shape(), (Shape{3, 3, 3, 4}));
  EXPECT_EQ(model.params.at("can.1.w").shape(), (Shape{3, 3, 4, 4}));
  EXPECT_EQ(model.params.at("can.2.w").shape(), (Shape{1, 1, 4, 3}));
}

TEST(BuildCan, DeterministicUnderSeed) {
  const auto a = can::build_can(can::desk_config(), 4), b = can::build_can(can::desk_config(), 4);
  for (const auto& [name, t] : a.params) EXPECT_EQ(t, b.params.at(name)) << name;
}

TEST(BuildCan, InvalidConfigsThrow) {
  EXPECT_THROW(can::build_can(config_of(0), 0), InvalidArgument);
  EXPECT_THROW(can::build_can(config_of(3, 0), 0), InvalidArgument);
  auto bad = config_of(3);
  bad.dilation_schedule = {1, 2};
  EXPECT_THROW(can::build_can(bad, 0), InvalidArgument);
  bad.dilation_schedule = {1, 2, 2};
  EXPECT_THROW(can::build_can(bad, 0), InvalidArgument);
}

TEST(Schedules, DefaultAndLiteral) {
  EXPECT_EQ(can::default_schedule(10), (std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64, 128, 1, 1}));
  EXPECT_EQ(can::literal_schedule(10), (std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64, 128, 256, 1}));
  EXPECT_EQ(can::default_schedule(3), (std::vector<std::size_t>{1, 1, 1}));
}

TEST(ReceptiveField, Formula) {
  EXPECT_EQ(can::receptive_field(config_of(1)), 1u);
  EXPECT_EQ(can::receptive_field(config_of(3)), 5u);
  EXPECT_EQ(can::receptive_field(config_of(10)), 513u);
}

// Width of the set of input columns that influence one output pixel.
std::size_t measured_field(const can::CanConfig& config, std::size_t h, std::size_t w) {
  const auto model = can::build_can(config, 1);
  ad::Bindings b(model.params.begin(), model.params.end());
  b["x"] = Tensor({h, w, 3}).set_requires_grad(true);
  Tensor mask({h, w, 3});
  mask[((h / 2) * w + w / 2) * 3] = 1.0;
  const ad::Expr root = ad::sum(can::can_graph(config, ad::input("x"), false) * ad::constant(mask));
  const Tensor g = ad::gradient(root, b).at("x");
  std::size_t lo = w, hi = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        if (g[(y * w + x) * 3 + c] != 0.0) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
  return hi - lo + 1;
}

TEST(ReceptiveField, MatchesImpulseResponseForDesktopDepths) {
  for (std::size_t depth : {3u, 5u, 7u}) {
    const auto config = config_of(depth, 8);
    const std::size_t field = can::receptive_field(config);
    EXPECT_EQ(measured_field(config, 40, field + 20), field) << "depth " << depth;
  }
}

TEST(CanForward, ShapeAndConstantInvariant) {
  const auto model = can::build_can(can::desk_config(), 2);
  Gen gen(51);
  EXPECT_EQ(can::can_forward(model, gen.image(37, 61)).shape(), (Shape{37, 61, 3}));
  const Tensor out = can::can_forward(model, Tensor({20, 24, 3}, 0.4));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], out[i % 3]);
}

TEST(CanForward, ZeroPaddingBreaksConstancyAtHighDilation) {
  auto config = config_of(4, 8);
  config.padding = nn::Padding::zero;
  const Tensor out = can::can_forward(can::build_can(config, 2), Tensor({20, 20, 3}, 0.4));
  double spread = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) spread = std::max(spread, std::abs(out[i] - out[i % 3]));
  EXPECT_GT(spread, 1e-6);
}

TEST(CanForward, IdentityInitStaysCloseToInput) {
  Gen gen(52);
  const Tensor x = gen.image(48, 64);
  EXPECT_LE(max_abs_diff(can::can_forward(can::build_can(can::desk_config(), 0), x), x), 0.05);
}

TEST(CanForward, MatchesLayerByLayerOracle) {
  Gen gen(53);
  auto config = config_of(3, 5);
  auto model = can::build_can(config, 0);
  for (auto& [name, t] : model.params)
    for (double& v : t.values()) v = gen.uniform(-0.5, 0.5);
  const Tensor x = gen.image(9, 11);
  Tensor h = x;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string p = "can." + std::to_string(k);
    h = naive_conv(h, model.params.at(p + ".w"), model.params.at(p + ".b"), 1, 1, true);
    if (k < 2)
      for (double& v : h.values()) v = v >= 0 ? v : 0.2 * v;
  }
  EXPECT_LE(max_abs_diff(can::can_forward(model, x), h), 1e-12);
}

TEST(CanForward, UndersizedImageNamesLimitingDilation) {
  const auto model = can::build_can(can::desk_config(), 0);
  try {
    can::can_forward(model, Tensor({12, 40, 3}));
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("dilation 16"), std::string::npos) << e.what();
  }
  EXPECT_EQ(can::minimum_extent(can::desk_config()), 16u);
}

// ---------------------------------------------------------------------------

quality::NimaModel small_nima() {
  quality::NimaConfig config;
  config.min_extent = 8;
  auto model = quality::build_tiny_nima(config, 5);
  model.frozen = true;
  return model;
}

TEST(PerceptualLoss, FidelityVanishesOnEqualImages) {
  Gen gen(54);
  const auto nima = small_nima();
  const Tensor r = gen.image(8, 8);
  EXPECT_EQ(can::perceptual_loss(r, r, nima, 0.0).total, 0.0);
  const auto l = can::perceptual_loss(r, r, nima, 1e-4);
  EXPECT_EQ(l.fidelity, 0.0);
  EXPECT_NEAR(l.total, 1e-4 * quality::quality_penalty(r, nima), 1e-15);
}

TEST(PerceptualLoss, AffineInGamma) {
  Gen gen(55);
  const auto nima = small_nima();
  const Tensor r = gen.image(8, 8), y = gen.image(8, 8);
  const double l0 = can::perceptual_loss(r, y, nima, 0.0).total;
  const double l1 = can::perceptual_loss(r, y, nima, 1.0).total;
  for (double gamma : {1e-4, 0.5}) {
    EXPECT_NEAR(can::perceptual_loss(r, y, nima, gamma).total, l0 + gamma * (l1 - l0), 1e-12);
  }
  EXPECT_GE(l0, 0.0);
}

TEST(PerceptualLoss, GradientInEnhancedMatchesFiniteDifferences) {
  Gen gen(56);
  const auto nima = small_nima();
  ad::Bindings b(nima.params.begin(), nima.params.end());
  b["r"] = gen.image(8, 8);
  b["y"] = gen.image(8, 8).set_requires_grad(true);
  const auto loss = can::perceptual_loss_expr(ad::input("r"), ad::input("y"), nima.config, 1e-2);
  EXPECT_LT(ad::grad_check(loss.total, b, 1e-5), 1e-4);
}

TEST(PerceptualLoss, ShapeMismatchThrows) {
  const auto nima = small_nima();
  EXPECT_THROW(can::perceptual_loss(Tensor({8, 8, 3}), Tensor({8, 9, 3}), nima, 0.0), ShapeError);
}

}  // namespace
}  // namespace nimaenh
