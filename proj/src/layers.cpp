#include "nimaenh/layers.hpp"

#include <cmath>
#include <random>

#include "nimaenh/error.hpp"

namespace nimaenh::nn {

namespace {

void expect_image(const Tensor& x, const char* op) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(op) + " needs an [H, W, C] tensor, got " + to_string(x.shape()));
  }
}

Tensor evaluate_unary(const ad::Expr& root, const Tensor& x) {
  return ad::evaluate(root, ad::Bindings{{"x", x}});
}

}  // namespace

Tensor symmetric_pad(const Tensor& x, std::size_t margin_h, std::size_t margin_w) {
  expect_image(x, "symmetric_pad");
  if (margin_h > x.dim(0) || margin_w > x.dim(1)) {
    throw InvalidArgument("padding margin " + std::to_string(margin_h) + "x" +
                          std::to_string(margin_w) + " exceeds image extent " +
                          std::to_string(x.dim(0)) + "x" + std::to_string(x.dim(1)));
  }
  kernels::ConvGeometry g;
  g.height = x.dim(0);
  g.width = x.dim(1);
  g.in_channels = x.dim(2);
  g.margin_h = margin_h;
  g.margin_w = margin_w;
  g.padded_h = g.height + 2 * margin_h;
  g.padded_w = g.width + 2 * margin_w;
  g.padding = Padding::symmetric;
  Tensor out(Shape{g.padded_h, g.padded_w, g.in_channels});
  kernels::pad(g, x.values(), out.values());
  return out;
}

Tensor conv2d(const Tensor& x, const ConvLayer& layer) {
  const ad::Expr root =
      ad::conv2d(ad::input("x"), ad::input("w"), ad::input("b"),
                 {.dilation = layer.dilation, .stride = layer.stride, .padding = layer.padding});
  return ad::evaluate(root, {{"x", x}, {"w", layer.weights}, {"b", layer.bias}});
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return evaluate_unary(ad::leaky_relu(ad::input("x"), slope), x);
}

Tensor global_average_pool(const Tensor& x) {
  expect_image(x, "global_average_pool");
  return evaluate_unary(ad::global_average_pool(ad::input("x")), x);
}

Tensor fully_connected(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  const ad::Expr root = ad::fully_connected(ad::input("x"), ad::input("w"), ad::input("b"));
  return ad::evaluate(root, {{"x", x}, {"w", weights}, {"b", bias}});
}

Tensor softmax(const Tensor& logits) { return evaluate_unary(ad::softmax(ad::input("x")), logits); }

Tensor init_conv_weights(const InitSpec& spec, std::size_t kh, std::size_t kw, std::size_t cin,
                         std::size_t cout) {
  Tensor w(Shape{kh, kw, cin, cout});
  std::mt19937_64 rng(spec.seed);
  if (spec.scheme == InitScheme::fan_in_gaussian) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(kh * kw * cin)));
    for (double& v : w.values()) v = normal(rng);
    return w;
  }
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (double& v : w.values()) v = noise(rng);
  const std::size_t centre = (kh / 2) * kw + kw / 2;
  for (std::size_t c = 0; c < std::min(cin, cout); ++c) w[(centre * cin + c) * cout + c] += 1.0;
  return w;
}

Tensor init_dense_weights(const InitSpec& spec, std::size_t cin, std::size_t cout) {
  Tensor w(Shape{cin, cout});
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(cin)));
  for (double& v : w.values()) v = normal(rng);
  return w;
}

ad::Expr conv_layer_expr(ad::Expr x, const std::string& prefix, std::size_t dilation,
                         std::size_t stride, Padding padding, bool trainable) {
  auto leaf = [&](const std::string& name) {
    return trainable ? ad::parameter(name) : ad::input(name);
  };
  return ad::conv2d(std::move(x), leaf(prefix + ".w"), leaf(prefix + ".b"),
                    {.dilation = dilation, .stride = stride, .padding = padding});
}

}  // namespace nimaenh::nn
