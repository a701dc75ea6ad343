#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nimaenh/error.hpp"
#include "nimaenh/layers.hpp"
#include "support.hpp"

namespace nimaenh {
namespace {

using testing::Gen;

TEST(LeakyRelu, Branches) {
  const Tensor out = nn::leaky_relu(Tensor::vector({2.0, -1.0, 0.0}), 0.2);
  EXPECT_EQ(out, Tensor::vector({2.0, -0.2, 0.0}));
  EXPECT_THROW(nn::leaky_relu(Tensor::vector({1.0}), 1.0), InvalidArgument);
  EXPECT_THROW(nn::leaky_relu(Tensor::vector({1.0}), -0.1), InvalidArgument);
}

TEST(GlobalAveragePool, Examples) {
  EXPECT_EQ(nn::global_average_pool(Tensor({2, 2, 1}, std::vector<double>{1, 2, 3, 4})), Tensor::vector({2.5}));
  const Tensor c = nn::global_average_pool(Tensor({3, 5, 4}, 0.25));
  for (double v : c.values()) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(nn::global_average_pool(Tensor({0, 2, 1})), InvalidArgument);
}

TEST(GlobalAveragePool, InvariantUnderSpatialPermutation) {
  Gen gen(21);
  const Tensor x = gen.tensor({4, 6, 3});
  std::vector<std::size_t> perm(24);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen.rng());
  Tensor y(x.shape());
  for (std::size_t p = 0; p < 24; ++p)
    for (std::size_t c = 0; c < 3; ++c) y[perm[p] * 3 + c] = x[p * 3 + c];
  const Tensor a = nn::global_average_pool(x), b = nn::global_average_pool(y);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a[c], b[c], 1e-15);
}

TEST(FullyConnected, Examples) {
  const Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  EXPECT_EQ(nn::fully_connected(Tensor::vector({1, 1}), eye, Tensor::vector({1, 1})), Tensor::vector({2, 2}));
  EXPECT_EQ(nn::fully_connected(Tensor::vector({0.5, -3}), eye, Tensor::vector({0, 0})), Tensor::vector({0.5, -3}));
  EXPECT_EQ(nn::fully_connected(Tensor::vector({0, 0}), eye, Tensor::vector({7, 8})), Tensor::vector({7, 8}));
  EXPECT_THROW(nn::fully_connected(Tensor::vector({1, 2, 3}), eye, Tensor::vector({0, 0})), ShapeError);
}

TEST(Softmax, Examples) {
  const Tensor flat = nn::softmax(Tensor({10}));
  for (double v : flat.values()) EXPECT_NEAR(v, 0.1, 1e-15);
  const Tensor two = nn::softmax(Tensor::vector({std::log(1.0), std::log(3.0)}));
  EXPECT_NEAR(two[0], 0.25, 1e-15);
  EXPECT_NEAR(two[1], 0.75, 1e-15);
}

TEST(Softmax, PropertyPositiveNormalizedShiftInvariant) {
  Gen gen(22);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = gen.tensor({gen.index(1, 12)}, -30, 30);
    Tensor shifted = z;
    for (double& v : shifted.values()) v += 100.0;
    const Tensor p = nn::softmax(z), q = nn::softmax(shifted);
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-12);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Init, DeterministicUnderSeed) {
  const nn::InitSpec spec{nn::InitScheme::fan_in_gaussian, 42};
  EXPECT_EQ(nn::init_conv_weights(spec, 3, 3, 4, 5), nn::init_conv_weights(spec, 3, 3, 4, 5));
  const nn::InitSpec other{nn::InitScheme::fan_in_gaussian, 43};
  EXPECT_FALSE(nn::init_conv_weights(spec, 3, 3, 4, 5) == nn::init_conv_weights(other, 3, 3, 4, 5));
}

TEST(Init, IdentityPlusNoiseCentreTaps) {
  const nn::InitSpec spec{nn::InitScheme::identity_plus_noise, 5, 1e-3};
  const Tensor w = nn::init_conv_weights(spec, 3, 3, 32, 32);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t o = 0; o < 32; ++o) {
      const double centre = w[((1 * 3 + 1) * 32 + i) * 32 + o];
      EXPECT_NEAR(centre, i == o ? 1.0 : 0.0, 1e-2);
    }
}

// Sample moment over 9*32*32 = 9216 draws per tensor, two tensors.
TEST(Init, FanInGaussianStd) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed : {1u, 2u}) {
    const Tensor w = nn::init_conv_weights({nn::InitScheme::fan_in_gaussian, seed}, 3, 3, 32, 32);
    for (double v : w.values()) {
      sum += v;
      sum_sq += v * v;
      ++n;
    }
  }
  ASSERT_GE(n, 10000u);
  const double mean = sum / n;
  const double std = std::sqrt(sum_sq / n - mean * mean);
  const double expected = std::sqrt(2.0 / (9 * 32));
  EXPECT_NEAR(std / expected, 1.0, 0.1);
}

}  // namespace
}  // namespace nimaenh
