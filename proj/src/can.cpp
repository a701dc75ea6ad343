#include "nimaenh/can.hpp"

#include <algorithm>
#include <optional>

#include "nimaenh/error.hpp"

namespace nimaenh::can {

std::vector<std::size_t> default_schedule(std::size_t depth) {
  std::vector<std::size_t> out(depth, 1);
  for (std::size_t k = 0; k + 2 < depth; ++k) out[k] = std::size_t{1} << k;
  return out;
}

std::vector<std::size_t> literal_schedule(std::size_t depth) {
  std::vector<std::size_t> out(depth, 1);
  for (std::size_t k = 0; k + 1 < depth; ++k) out[k] = std::size_t{1} << k;
  return out;
}

std::vector<std::size_t> CanConfig::schedule() const {
  return dilation_schedule.empty() ? default_schedule(depth) : dilation_schedule;
}

void CanConfig::validate() const {
  if (depth == 0) throw InvalidArgument("CAN depth must be positive");
  if (width == 0) throw InvalidArgument("CAN width must be positive");
  const auto s = schedule();
  if (s.size() != depth) {
    throw InvalidArgument("dilation schedule has " + std::to_string(s.size()) +
                          " entries for depth " + std::to_string(depth));
  }
  if (s.back() != 1) throw InvalidArgument("the last CAN layer must be undilated");
  if (std::find(s.begin(), s.end(), 0) != s.end()) {
    throw InvalidArgument("dilations must be >= 1");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw InvalidArgument("invalid leaky slope");
  if (!(init_noise_std >= 0.0)) throw InvalidArgument("init noise must be non-negative");
}

CanConfig desk_config() {
  CanConfig c;
  c.depth = 7;
  return c;
}

namespace {

constexpr std::size_t kImageChannels = 3;

struct LayerShape {
  std::size_t kernel, in, out, dilation;
};

std::vector<LayerShape> layer_shapes(const CanConfig& config) {
  const auto schedule = config.schedule();
  std::vector<LayerShape> layers;
  for (std::size_t k = 0; k < config.depth; ++k) {
    const bool last = k + 1 == config.depth;
    layers.push_back({last ? std::size_t{1} : std::size_t{3}, k == 0 ? kImageChannels : config.width,
                      last ? kImageChannels : config.width, schedule[k]});
  }
  return layers;
}

std::string layer_prefix(std::size_t k) { return "can." + std::to_string(k); }

}  // namespace

CanModel build_can(const CanConfig& config, std::uint64_t seed) {
  config.validate();
  CanModel model;
  model.config = config;
  const auto layers = layer_shapes(config);
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    const nn::InitSpec spec{.scheme = nn::InitScheme::identity_plus_noise,
                            .seed = seed * 1000 + k,
                            .noise_std = config.init_noise_std};
    model.params[layer_prefix(k) + ".w"] = nn::init_conv_weights(spec, l.kernel, l.kernel, l.in, l.out);
    model.params[layer_prefix(k) + ".b"] = Tensor(Shape{l.out});
  }
  return model;
}

ad::Expr can_graph(const CanConfig& config, ad::Expr image, bool trainable) {
  config.validate();
  const auto layers = layer_shapes(config);
  ad::Expr x = std::move(image);
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = nn::conv_layer_expr(std::move(x), layer_prefix(k), layers[k].dilation, 1, config.padding,
                            trainable);
    if (k + 1 < layers.size()) x = ad::leaky_relu(std::move(x), config.leaky_slope);
  }
  return x;
}

std::size_t receptive_field(const CanConfig& config) {
  config.validate();
  std::size_t field = 1;
  for (const auto& l : layer_shapes(config)) field += l.dilation * (l.kernel - 1);
  return field;
}

std::size_t minimum_extent(const CanConfig& config) {
  config.validate();
  if (config.padding == nn::Padding::zero) return 1;
  std::size_t extent = 1;
  for (const auto& l : layer_shapes(config)) extent = std::max(extent, l.dilation * (l.kernel - 1) / 2);
  return extent;
}

void check_image(const CanConfig& config, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != kImageChannels) {
    throw InvalidArgument("CAN expects an [H, W, 3] image, got " + to_string(image.shape()));
  }
  const std::size_t need = minimum_extent(config);
  if (image.dim(0) < need || image.dim(1) < need) {
    std::size_t limiting = 1;
    for (const auto& l : layer_shapes(config)) {
      if (l.kernel > 1) limiting = std::max(limiting, l.dilation);
    }
    throw InvalidArgument("image " + std::to_string(image.dim(0)) + "x" +
                          std::to_string(image.dim(1)) + " is too small: dilation " +
                          std::to_string(limiting) + " needs at least " + std::to_string(need) +
                          "x" + std::to_string(need));
  }
}

Tensor can_forward(const CanModel& model, const Tensor& image) {
  check_image(model.config, image);
  const ad::Expr root = can_graph(model.config, ad::input("image"), false);
  ad::Bindings b(model.params.begin(), model.params.end());
  b["image"] = image;
  return ad::evaluate(root, b);
}

PerceptualLossExpr perceptual_loss_expr(ad::Expr reference, ad::Expr enhanced,
                                        const quality::NimaConfig& nima, double gamma,
                                        Fidelity fidelity, double huber_delta) {
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be non-negative");
  ad::Expr diff = enhanced - std::move(reference);
  ad::Expr f = [&] {
    switch (fidelity) {
      case Fidelity::l1: return ad::mean(ad::abs(diff));
      case Fidelity::huber: return ad::mean(ad::huber(diff, huber_delta));
      case Fidelity::l2: break;
    }
    return ad::mean(ad::square(diff));
  }();
  if (gamma == 0.0) return {f, f, std::nullopt};
  ad::Expr weighted =
      ad::scale(quality::quality_penalty_expr(quality::nima_graph(nima, std::move(enhanced), false)), gamma);
  return {f + weighted, f, weighted};
}

namespace {

std::pair<PerceptualLoss, Tensor> run_perceptual(const Tensor& reference, const Tensor& enhanced,
                                                 const quality::NimaModel& nima, double gamma,
                                                 bool want_grad) {
  if (reference.shape() != enhanced.shape()) {
    throw ShapeError("reference " + to_string(reference.shape()) + " and enhanced " +
                     to_string(enhanced.shape()) + " differ in shape");
  }
  quality::check_image(nima.config, enhanced);
  // Always build the penalty so it can be reported even when gamma == 0.
  const ad::Expr penalty =
      quality::quality_penalty_expr(quality::nima_graph(nima.config, ad::input("enhanced"), false));
  const auto loss = perceptual_loss_expr(ad::input("reference"), ad::input("enhanced"), nima.config, gamma);

  ad::Bindings b(nima.params.begin(), nima.params.end());
  b["reference"] = reference;
  b["enhanced"] = enhanced;
  b["enhanced"].set_requires_grad(want_grad);
  const ad::Evaluation ev(loss.total, b);
  const ad::Evaluation pe(penalty, b);
  PerceptualLoss out{ev.value().item(), ev.value_of(loss.fidelity).item(), pe.value().item()};
  Tensor grad;
  if (want_grad) grad = ev.backward().at("enhanced");
  return {out, grad};
}

}  // namespace

PerceptualLoss perceptual_loss(const Tensor& reference, const Tensor& enhanced,
                               const quality::NimaModel& nima, double gamma) {
  return run_perceptual(reference, enhanced, nima, gamma, false).first;
}

std::pair<PerceptualLoss, Tensor> perceptual_loss_with_grad(const Tensor& reference,
                                                            const Tensor& enhanced,
                                                            const quality::NimaModel& nima,
                                                            double gamma) {
  return run_perceptual(reference, enhanced, nima, gamma, true);
}

}  // namespace nimaenh::can
