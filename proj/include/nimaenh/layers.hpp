#pragma once

#include <cstdint>

#include "nimaenh/autodiff.hpp"
#include "nimaenh/kernels.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::nn {

using kernels::Padding;

inline constexpr double kDefaultLeakySlope = 0.2;

struct ConvLayer {
  Tensor weights;  // [kh, kw, in_channels, out_channels]
  Tensor bias;     // [out_channels]
  std::size_t dilation = 1;
  std::size_t stride = 1;
  Padding padding = Padding::symmetric;

  std::size_t kernel_h() const { return weights.dim(0); }
  std::size_t kernel_w() const { return weights.dim(1); }
  std::size_t in_channels() const { return weights.dim(2); }
  std::size_t out_channels() const { return weights.dim(3); }
};

enum class InitScheme { fan_in_gaussian, identity_plus_noise };

struct InitSpec {
  InitScheme scheme = InitScheme::fan_in_gaussian;
  std::uint64_t seed = 0;
  double noise_std = 1e-3;  // identity_plus_noise only
};

// Eager layer functions on [H, W, C] tensors.
Tensor symmetric_pad(const Tensor& x, std::size_t margin_h, std::size_t margin_w);
Tensor conv2d(const Tensor& x, const ConvLayer& layer);
Tensor leaky_relu(const Tensor& x, double slope = kDefaultLeakySlope);
Tensor global_average_pool(const Tensor& x);
Tensor fully_connected(const Tensor& x, const Tensor& weights, const Tensor& bias);
Tensor softmax(const Tensor& logits);

// Weights for a [kh, kw, cin, cout] kernel. fan_in_gaussian draws
// N(0, 2/fan_in) with fan_in = kh*kw*cin; identity_plus_noise sets the
// centre tap to the channel identity (min(cin, cout) diagonal) and adds
// N(0, noise_std^2) everywhere.
Tensor init_conv_weights(const InitSpec& spec, std::size_t kh, std::size_t kw, std::size_t cin,
                         std::size_t cout);
// [cin, cout] fully-connected weights, N(0, 2/cin).
Tensor init_dense_weights(const InitSpec& spec, std::size_t cin, std::size_t cout);

// Graph form of a ConvLayer whose weights and bias are leaves `<prefix>.w`
// and `<prefix>.b`; parameters when `trainable`, inputs otherwise.
ad::Expr conv_layer_expr(ad::Expr x, const std::string& prefix, std::size_t dilation,
                         std::size_t stride, Padding padding, bool trainable);

}  // namespace nimaenh::nn
