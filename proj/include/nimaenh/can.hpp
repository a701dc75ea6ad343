#pragma once

// Context aggregation network: a fully convolutional stack of 3x3 dilated
// convolutions with leaky ReLU, closed by a linear 1x1 projection back to
// RGB. Layer k of the default schedule uses dilation 2^k for k <= d-3, then
// one undilated 3x3 layer, then the 1x1 output layer.

#include <cstdint>
#include <optional>
#include <vector>

#include "nimaenh/autodiff.hpp"
#include "nimaenh/layers.hpp"
#include "nimaenh/quality.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::can {

enum class Fidelity { l2, l1, huber };

struct CanConfig {
  std::size_t depth = 10;
  std::size_t width = 32;
  // Empty selects default_schedule(depth).
  std::vector<std::size_t> dilation_schedule;
  double leaky_slope = nn::kDefaultLeakySlope;
  nn::Padding padding = nn::Padding::symmetric;
  double init_noise_std = 1e-3;

  std::vector<std::size_t> schedule() const;
  void validate() const;
};

// The reduced-depth configuration used for images up to 64x64.
CanConfig desk_config();

std::vector<std::size_t> default_schedule(std::size_t depth);
// 2^k for every 3x3 layer, no undilated 3x3 stage before the 1x1 layer.
std::vector<std::size_t> literal_schedule(std::size_t depth);

struct CanModel {
  CanConfig config;
  ParameterSet params;  // can.<k>.{w,b}
};

CanModel build_can(const CanConfig& config, std::uint64_t seed);

ad::Expr can_graph(const CanConfig& config, ad::Expr image, bool trainable = true);

// 1 + sum over layers of dilation * (kernel - 1).
std::size_t receptive_field(const CanConfig& config);

// Smallest image extent the symmetric padding of every layer can reflect.
std::size_t minimum_extent(const CanConfig& config);

// Throws InvalidArgument naming the limiting dilation when `image` is too small.
void check_image(const CanConfig& config, const Tensor& image);

Tensor can_forward(const CanModel& model, const Tensor& image);

struct PerceptualLossExpr {
  ad::Expr total;
  ad::Expr fidelity;
  std::optional<ad::Expr> weighted_penalty;  // gamma * q(y); absent when gamma == 0
};

// f(reference, enhanced) + gamma * (10 - NIMA(enhanced)). The predictor
// weights enter as input leaves named like NimaModel::params, so they never
// receive gradients.
PerceptualLossExpr perceptual_loss_expr(ad::Expr reference, ad::Expr enhanced,
                                        const quality::NimaConfig& nima, double gamma,
                                        Fidelity fidelity = Fidelity::l2, double huber_delta = 0.1);

struct PerceptualLoss {
  double total = 0.0;
  double fidelity = 0.0;
  double penalty = 0.0;  // q(enhanced), unweighted
};

PerceptualLoss perceptual_loss(const Tensor& reference, const Tensor& enhanced,
                               const quality::NimaModel& nima, double gamma);

// d(total)/d(enhanced) alongside the loss value.
std::pair<PerceptualLoss, Tensor> perceptual_loss_with_grad(const Tensor& reference,
                                                            const Tensor& enhanced,
                                                            const quality::NimaModel& nima,
                                                            double gamma);

}  // namespace nimaenh::can
