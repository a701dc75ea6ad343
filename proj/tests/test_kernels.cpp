#include <gtest/gtest.h>

#include <vector>

#include "nimaenh/error.hpp"
#include "nimaenh/kernels.hpp"
#include "nimaenh/layers.hpp"
#include "support.hpp"

namespace nimaenh {
namespace {

using testing::Gen;
using testing::max_abs_diff;
using testing::naive_conv;

nn::ConvLayer layer_of(Tensor w, Tensor b, std::size_t dilation, std::size_t stride, bool symmetric) {
  nn::ConvLayer layer;
  layer.weights = std::move(w);
  layer.bias = std::move(b);
  layer.dilation = dilation;
  layer.stride = stride;
  layer.padding = symmetric ? nn::Padding::symmetric : nn::Padding::zero;
  return layer;
}

TEST(ReflectIndex, EdgeInclusiveMirror) {
  // [1,2,3] padded by one is [1,1,2,3,3].
  EXPECT_EQ(kernels::reflect_index(-1, 3), 0u);
  EXPECT_EQ(kernels::reflect_index(0, 3), 0u);
  EXPECT_EQ(kernels::reflect_index(2, 3), 2u);
  EXPECT_EQ(kernels::reflect_index(3, 3), 2u);
  EXPECT_EQ(kernels::reflect_index(-3, 3), 2u);
  EXPECT_EQ(kernels::reflect_index(5, 3), 0u);
}

TEST(SymmetricPad, OneDimensionalExample) {
  const Tensor x({1, 3, 1}, std::vector<double>{1, 2, 3});
  const Tensor padded = nn::symmetric_pad(x, 0, 1);
  ASSERT_EQ(padded.shape(), (Shape{1, 5, 1}));
  EXPECT_EQ(std::vector<double>(padded.values().begin(), padded.values().end()),
            (std::vector<double>{1, 1, 2, 3, 3}));
}

TEST(SymmetricPad, ZeroMarginIsIdentityAndConstantStaysConstant) {
  Gen gen(1);
  const Tensor x = gen.tensor({4, 5, 2});
  EXPECT_EQ(nn::symmetric_pad(x, 0, 0), x);
  const Tensor c({4, 5, 2}, 0.375);
  const Tensor padded = nn::symmetric_pad(c, 4, 5);
  ASSERT_EQ(padded.shape(), (Shape{12, 15, 2}));
  for (double v : padded.values()) EXPECT_EQ(v, 0.375);
}

TEST(SymmetricPad, MarginLargerThanExtentThrows) {
  EXPECT_THROW(nn::symmetric_pad(Tensor({3, 3, 1}), 4, 0), InvalidArgument);
}

TEST(Conv2d, ConstantInputClosedForm) {
  const double w = 0.3, b = -0.1;
  const Tensor x({5, 5, 1}, 1.0);
  const Tensor out = nn::conv2d(x, layer_of(Tensor({3, 3, 1, 1}, w), Tensor({1}, b), 1, 1, true));
  for (double v : out.values()) EXPECT_NEAR(v, 9 * w + b, 1e-15);
}

TEST(Conv2d, DeltaKernelIsIdentityAtAnyDilation) {
  Gen gen(2);
  const Tensor x = gen.tensor({9, 9, 2});
  for (std::size_t d : {1u, 2u, 4u}) {
    Tensor w({3, 3, 2, 2});
    for (std::size_t c = 0; c < 2; ++c) w[((1 * 3 + 1) * 2 + c) * 2 + c] = 1.0;
    EXPECT_EQ(nn::conv2d(x, layer_of(w, Tensor({2}), d, 1, true)), x) << "dilation " << d;
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(nn::conv2d(Tensor({5, 5, 2}), layer_of(Tensor({3, 3, 3, 1}), Tensor({1}), 1, 1, true)),
               InvalidArgument);
}

// Fixed example from the layer contract: 7x7x2 input, 3x3x2x3 kernel, dilation 2.
TEST(Conv2d, MatchesNestedLoopOracleOnFixedCase) {
  Gen gen(3);
  const Tensor x = gen.tensor({7, 7, 2});
  const Tensor w = gen.tensor({3, 3, 2, 3});
  const Tensor b = gen.tensor({3});
  const Tensor out = nn::conv2d(x, layer_of(w, b, 2, 1, true));
  EXPECT_LE(max_abs_diff(out, naive_conv(x, w, b, 2, 1, true)), 1e-12);
}

// Random sizes up to 9x9, dilations {1, 2, 4}, both paddings, both kernel
// sizes, occasional stride 2.
TEST(Conv2d, PropertyMatchesOracleOnRandomCases) {
  Gen gen(4);
  int checked = 0;
  for (int trial = 0; trial < 300 && checked < 150; ++trial) {
    const std::size_t d = std::vector<std::size_t>{1, 2, 4}[gen.index(0, 2)];
    const std::size_t k = gen.coin() ? 3 : 1;
    const bool symmetric = gen.coin();
    const std::size_t stride = gen.index(0, 3) == 0 ? 2 : 1;
    const std::size_t h = gen.index(1, 9), w = gen.index(1, 9);
    const std::size_t margin = k == 1 ? 0 : d;
    if (symmetric && (margin > h || margin > w)) continue;
    const std::size_t cin = gen.index(1, 4), cout = gen.index(1, 5);
    const Tensor x = gen.tensor({h, w, cin});
    const Tensor wt = gen.tensor({k, k, cin, cout});
    const Tensor b = gen.tensor({cout});
    const Tensor out = nn::conv2d(x, layer_of(wt, b, d, stride, symmetric));
    const Tensor expect = naive_conv(x, wt, b, d, stride, symmetric);
    ASSERT_EQ(out.shape(), expect.shape());
    ASSERT_LE(max_abs_diff(out, expect), 1e-12) << h << "x" << w << " d=" << d << " k=" << k;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Conv2d, ShapePreservedForEveryDilationAndPadding) {
  Gen gen(5);
  for (std::size_t d : {1u, 2u, 4u, 8u})
    for (bool symmetric : {true, false}) {
      const Tensor x = gen.tensor({17, 11, 3});
      const Tensor out =
          nn::conv2d(x, layer_of(gen.tensor({3, 3, 3, 4}), gen.tensor({4}), d, 1, symmetric));
      EXPECT_EQ(out.shape(), (Shape{17, 11, 4}));
    }
}

TEST(Conv2d, ConstantInputStaysConstantOnlyUnderSymmetricPadding) {
  Gen gen(6);
  const Tensor x({12, 12, 2}, 0.7);
  const Tensor w = gen.tensor({3, 3, 2, 3});
  const Tensor b = gen.tensor({3});
  for (std::size_t d : {1u, 2u, 4u}) {
    const Tensor sym = nn::conv2d(x, layer_of(w, b, d, 1, true));
    for (std::size_t i = 0; i < sym.size(); ++i) EXPECT_EQ(sym[i], sym[i % 3]);
    const Tensor zero = nn::conv2d(x, layer_of(w, b, d, 1, false));
    double spread = 0.0;
    for (std::size_t i = 0; i < zero.size(); ++i) spread = std::max(spread, std::abs(zero[i] - zero[(6 * 12 + 6) * 3 + i % 3]));
    EXPECT_GT(spread, 1e-6) << "dilation " << d;
  }
}

// The OpenMP kernels against the serial reference, for every backward path.
struct KernelCase {
  kernels::ConvGeometry g;
  std::vector<double> padded, weights, bias, grad_out;
};

KernelCase random_case(Gen& gen, std::size_t h, std::size_t w, std::size_t cin, std::size_t cout,
                       std::size_t k, std::size_t d, std::size_t stride) {
  KernelCase c;
  c.g = kernels::make_geometry(h, w, cin, cout, k, k, d, stride, kernels::Padding::symmetric);
  auto fill = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (double& e : v) e = gen.uniform(-1, 1);
  };
  fill(c.padded, c.g.padded_size());
  fill(c.weights, c.g.weight_size());
  fill(c.bias, cout);
  fill(c.grad_out, c.g.output_size());
  return c;
}

TEST(Kernels, ParallelMatchesSerialReference) {
  Gen gen(7);
  struct Dims {
    std::size_t h, w, cin, cout, k, d, stride;
  };
  const std::vector<Dims> cases{{13, 17, 3, 32, 3, 1, 1}, {20, 24, 32, 32, 3, 4, 1}, {33, 40, 32, 32, 3, 16, 1},
                                {16, 16, 32, 3, 1, 1, 1}, {19, 21, 8, 16, 3, 1, 2}, {9, 11, 5, 7, 3, 2, 1},
                                {12, 12, 16, 8, 3, 1, 1}, {10, 14, 3, 24, 3, 2, 1}};
  for (const auto& dims : cases) {
    const auto c = random_case(gen, dims.h, dims.w, dims.cin, dims.cout, dims.k, dims.d, dims.stride);
    std::vector<double> fast(c.g.output_size()), slow(c.g.output_size());
    kernels::conv_forward(c.g, c.padded, c.weights, c.bias, fast);
    kernels::reference::conv_forward(c.g, c.padded, c.weights, c.bias, slow);
    for (std::size_t i = 0; i < fast.size(); ++i) ASSERT_NEAR(fast[i], slow[i], 1e-12);

    std::vector<double> gp_fast(c.g.padded_size()), gp_slow(c.g.padded_size());
    kernels::conv_backward_input(c.g, c.grad_out, c.weights, gp_fast);
    kernels::reference::conv_backward_input(c.g, c.grad_out, c.weights, gp_slow);
    for (std::size_t i = 0; i < gp_fast.size(); ++i) ASSERT_NEAR(gp_fast[i], gp_slow[i], 1e-12);

    std::vector<double> gx_fast(c.g.input_size(), 0.0), gx_slow(c.g.input_size(), 0.0);
    kernels::conv_backward_input_folded(c.g, c.grad_out, c.weights, gx_fast);
    kernels::fold_padded_grad(c.g, gp_slow, gx_slow);
    for (std::size_t i = 0; i < gx_fast.size(); ++i) ASSERT_NEAR(gx_fast[i], gx_slow[i], 1e-12);

    std::vector<double> gw_fast(c.g.weight_size(), 0.0), gw_slow(c.g.weight_size(), 0.0);
    std::vector<double> gb_fast(dims.cout, 0.0), gb_slow(dims.cout, 0.0);
    kernels::conv_backward_params(c.g, c.padded, c.grad_out, gw_fast, gb_fast);
    kernels::reference::conv_backward_params(c.g, c.padded, c.grad_out, gw_slow, gb_slow);
    for (std::size_t i = 0; i < gw_fast.size(); ++i) ASSERT_NEAR(gw_fast[i], gw_slow[i], 1e-10);
    for (std::size_t i = 0; i < gb_fast.size(); ++i) ASSERT_NEAR(gb_fast[i], gb_slow[i], 1e-10);
  }
}

TEST(Kernels, ForwardIsBitReproducible) {
  Gen gen(8);
  const auto c = random_case(gen, 24, 32, 32, 32, 3, 2, 1);
  std::vector<double> a(c.g.output_size()), b(c.g.output_size());
  kernels::conv_forward(c.g, c.padded, c.weights, c.bias, a);
  kernels::conv_forward(c.g, c.padded, c.weights, c.bias, b);
  EXPECT_EQ(a, b);
}

TEST(Geometry, RejectsEvenKernelsAndOversizedMargins) {
  EXPECT_THROW(kernels::make_geometry(8, 8, 1, 1, 2, 2, 1, 1, kernels::Padding::symmetric), InvalidArgument);
  EXPECT_THROW(kernels::make_geometry(3, 8, 1, 1, 3, 3, 4, 1, kernels::Padding::symmetric), InvalidArgument);
  EXPECT_NO_THROW(kernels::make_geometry(3, 8, 1, 1, 3, 3, 4, 1, kernels::Padding::zero));
  // A 1x1 kernel ignores dilation.
  const auto g = kernels::make_geometry(2, 2, 1, 1, 1, 1, 64, 1, kernels::Padding::symmetric);
  EXPECT_EQ(g.margin_h, 0u);
}

}  // namespace
}  // namespace nimaenh
