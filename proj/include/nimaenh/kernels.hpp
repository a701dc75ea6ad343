#pragma once

// Convolution kernels over [height, width, channels] buffers.
//
// Two implementations share one set of signatures: the default namespace
// holds the OpenMP kernels used by the autodiff engine, `reference` holds
// plain serial loops kept for tests and the benchmark. Both reduce in the
// same fixed order per output element, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace nimaenh::kernels {

enum class Padding { symmetric, zero };

struct ConvGeometry {
  std::size_t height = 0, width = 0;  // unpadded input extent
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t dilation = 1, stride = 1;
  Padding padding = Padding::symmetric;

  // Derived by make_geometry.
  std::size_t margin_h = 0, margin_w = 0;
  std::size_t padded_h = 0, padded_w = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t input_size() const { return height * width * in_channels; }
  std::size_t padded_size() const { return padded_h * padded_w * in_channels; }
  std::size_t output_size() const { return out_h * out_w * out_channels; }
  std::size_t weight_size() const { return kernel_h * kernel_w * in_channels * out_channels; }
};

// Fills the derived fields. Margin is dilation*(k-1)/2 per axis; a 1x1
// kernel gets no margin whatever the dilation. Throws InvalidArgument for
// even kernels, zero extents, and symmetric margins larger than the image.
ConvGeometry make_geometry(std::size_t height, std::size_t width, std::size_t in_channels,
                           std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                           std::size_t dilation, std::size_t stride, Padding padding);

// Source index for padded coordinate `p` (may be negative or >= n) under
// edge-inclusive reflection: [1,2,3] padded by one is [1,1,2,3,3].
// Requires -n <= p < 2n.
inline std::size_t reflect_index(std::ptrdiff_t p, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (p < 0) return static_cast<std::size_t>(-p - 1);
  if (p >= len) return static_cast<std::size_t>(2 * len - p - 1);
  return static_cast<std::size_t>(p);
}

void pad(const ConvGeometry& g, std::span<const double> x, std::span<double> padded);

// Adds the gradient of a padded buffer back onto the unpadded input gradient.
void fold_padded_grad(const ConvGeometry& g, std::span<const double> grad_padded,
                      std::span<double> grad_x);

// out = bias + conv(padded, weights). Weights are [kh, kw, cin, cout].
void conv_forward(const ConvGeometry& g, std::span<const double> padded,
                  std::span<const double> weights, std::span<const double> bias,
                  std::span<double> out);

// Overwrites grad_padded with d(loss)/d(padded).
void conv_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                         std::span<const double> weights, std::span<double> grad_padded);

// conv_backward_input followed by fold_padded_grad: adds d(loss)/d(x) for the
// unpadded input onto grad_x.
void conv_backward_input_folded(const ConvGeometry& g, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_x);

// Accumulates into grad_weights and grad_bias.
void conv_backward_params(const ConvGeometry& g, std::span<const double> padded,
                          std::span<const double> grad_out, std::span<double> grad_weights,
                          std::span<double> grad_bias);

namespace reference {

void conv_forward(const ConvGeometry& g, std::span<const double> padded,
                  std::span<const double> weights, std::span<const double> bias,
                  std::span<double> out);

void conv_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                         std::span<const double> weights, std::span<double> grad_padded);

void conv_backward_params(const ConvGeometry& g, std::span<const double> padded,
                          std::span<const double> grad_out, std::span<double> grad_weights,
                          std::span<double> grad_bias);

}  // namespace reference

}  // namespace nimaenh::kernels
