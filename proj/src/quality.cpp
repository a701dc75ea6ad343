#include "nimaenh/quality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nimaenh/error.hpp"

namespace nimaenh::quality {

RatingDistribution::RatingDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InvalidArgument("rating distribution needs at least one bucket");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw InvalidArgument("rating distribution has a negative or non-finite mass");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidArgument("rating distribution mass is " + std::to_string(total) + ", expected 1");
  }
}

RatingDistribution RatingDistribution::uniform(std::size_t buckets) {
  return RatingDistribution(std::vector<double>(buckets, 1.0 / static_cast<double>(buckets)));
}

RatingDistribution RatingDistribution::one_hot(std::size_t bucket, std::size_t buckets) {
  if (bucket < 1 || bucket > buckets) throw InvalidArgument("one_hot bucket out of range");
  std::vector<double> probs(buckets, 0.0);
  probs[bucket - 1] = 1.0;
  return RatingDistribution(std::move(probs));
}

std::vector<double> RatingDistribution::cdf() const {
  std::vector<double> out(probs_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) out[i] = (acc += probs_[i]);
  return out;
}

double RatingDistribution::mean_score() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) acc += static_cast<double>(i + 1) * probs_[i];
  return acc;
}

double emd(const RatingDistribution& p, const RatingDistribution& q, double order) {
  if (p.size() != q.size()) {
    throw InvalidArgument("emd needs distributions of equal length, got " +
                          std::to_string(p.size()) + " and " + std::to_string(q.size()));
  }
  if (!(order > 0.0)) throw InvalidArgument("emd order must be positive");
  const auto cp = p.cdf();
  const auto cq = q.cdf();
  double acc = 0.0;
  for (std::size_t k = 0; k < cp.size(); ++k) acc += std::pow(std::abs(cp[k] - cq[k]), order);
  return std::pow(acc / static_cast<double>(cp.size()), 1.0 / order);
}

double emd_train_loss(const RatingDistribution& truth, const RatingDistribution& predicted) {
  if (truth.size() != predicted.size()) {
    throw InvalidArgument("emd needs distributions of equal length");
  }
  const auto ct = truth.cdf();
  const auto cp = predicted.cdf();
  double acc = 0.0;
  for (std::size_t k = 0; k < ct.size(); ++k) acc += (cp[k] - ct[k]) * (cp[k] - ct[k]);
  return acc / static_cast<double>(ct.size());
}

ad::Expr emd_train_loss_expr(ad::Expr predicted, const RatingDistribution& truth) {
  return emd_train_loss_expr(std::move(predicted), ad::constant(Tensor::vector(truth.cdf())));
}

ad::Expr emd_train_loss_expr(ad::Expr predicted, ad::Expr target_cdf) {
  return ad::mean(ad::square(ad::cumsum(std::move(predicted)) - std::move(target_cdf)));
}

double nima_score(const RatingDistribution& p) { return p.mean_score(); }

ad::Expr nima_score_expr(ad::Expr probs) {
  // The bucket count is only known at evaluation time; ten buckets is the
  // only head this library builds.
  std::vector<double> scores(kBuckets);
  std::iota(scores.begin(), scores.end(), 1.0);
  return ad::sum(std::move(probs) * ad::constant(Tensor::vector(std::move(scores))));
}

ad::Expr quality_penalty_expr(ad::Expr probs) {
  return ad::add_scalar(ad::scale(nima_score_expr(std::move(probs)), -1.0), kMaxScore);
}

void NimaConfig::validate() const {
  if (channels.empty()) throw InvalidArgument("nima backbone needs at least one stage");
  for (auto c : channels) {
    if (c == 0) throw InvalidArgument("nima stage channels must be positive");
  }
  if (buckets != kBuckets) throw InvalidArgument("nima head must have 10 buckets");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw InvalidArgument("invalid leaky slope");
  if (min_extent == 0) throw InvalidArgument("nima min_extent must be positive");
}

NimaModel build_tiny_nima(const NimaConfig& config, std::uint64_t seed) {
  config.validate();
  NimaModel model;
  model.config = config;
  std::size_t in = 3;
  for (std::size_t k = 0; k < config.channels.size(); ++k) {
    const std::size_t out = config.channels[k];
    const nn::InitSpec spec{.scheme = nn::InitScheme::fan_in_gaussian, .seed = seed * 1000 + k};
    const std::string prefix = "nima.conv" + std::to_string(k);
    model.params[prefix + ".w"] = nn::init_conv_weights(spec, 3, 3, in, out);
    model.params[prefix + ".b"] = Tensor(Shape{out});
    in = out;
  }
  const nn::InitSpec head{.scheme = nn::InitScheme::fan_in_gaussian, .seed = seed * 1000 + 999};
  model.params["nima.fc.w"] = nn::init_dense_weights(head, in, config.buckets);
  model.params["nima.fc.b"] = Tensor(Shape{config.buckets});
  return model;
}

bool is_head_parameter(const std::string& name) { return name.rfind("nima.fc.", 0) == 0; }

ad::Expr nima_graph(const NimaConfig& config, ad::Expr image, bool trainable) {
  ad::Expr x = std::move(image);
  for (std::size_t k = 0; k < config.channels.size(); ++k) {
    x = nn::conv_layer_expr(std::move(x), "nima.conv" + std::to_string(k), 1, 2,
                            nn::Padding::symmetric, trainable);
    x = ad::leaky_relu(std::move(x), config.leaky_slope);
  }
  auto leaf = [&](const char* name) { return trainable ? ad::parameter(name) : ad::input(name); };
  ad::Expr logits =
      ad::fully_connected(ad::global_average_pool(std::move(x)), leaf("nima.fc.w"), leaf("nima.fc.b"));
  return ad::softmax(std::move(logits));
}

void check_image(const NimaConfig& config, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw InvalidArgument("quality predictor expects an [H, W, 3] image, got " +
                          to_string(image.shape()));
  }
  if (image.dim(0) < config.min_extent || image.dim(1) < config.min_extent) {
    throw InvalidArgument("image size " + std::to_string(image.dim(0)) + "x" +
                          std::to_string(image.dim(1)) + " is below the predictor minimum " +
                          std::to_string(config.min_extent) + "x" +
                          std::to_string(config.min_extent));
  }
}

namespace {

ad::Bindings bind_model(const NimaModel& model, const Tensor& image) {
  ad::Bindings b(model.params.begin(), model.params.end());
  b["image"] = image;
  return b;
}

}  // namespace

RatingDistribution predict(const NimaModel& model, const Tensor& image) {
  check_image(model.config, image);
  const ad::Expr root = nima_graph(model.config, ad::input("image"), false);
  const Tensor probs = ad::evaluate(root, bind_model(model, image));
  return RatingDistribution(std::vector<double>(probs.values().begin(), probs.values().end()));
}

double quality_penalty(const Tensor& image, const NimaModel& model) {
  return kMaxScore - nima_score(predict(model, image));
}

PenaltyWithGrad quality_penalty_with_grad(const Tensor& image, const NimaModel& model) {
  check_image(model.config, image);
  const ad::Expr root = quality_penalty_expr(nima_graph(model.config, ad::input("image"), false));
  ad::Bindings bindings = bind_model(model, image);
  bindings["image"].set_requires_grad(true);
  const ad::Evaluation ev(root, bindings);
  PenaltyWithGrad out;
  out.penalty = ev.value().item();
  out.grad = ev.backward().at("image");
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw InvalidArgument("correlation needs two equal-length lists of at least 2 values");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

EvalReport eval_metrics(std::span<const RatingDistribution> predicted,
                        std::span<const RatingDistribution> truth, double cutoff) {
  if (predicted.size() != truth.size()) {
    throw InvalidArgument("eval_metrics needs equal-length lists, got " +
                          std::to_string(predicted.size()) + " and " + std::to_string(truth.size()));
  }
  if (predicted.size() < 2) throw InvalidArgument("eval_metrics needs at least 2 items");

  const std::size_t n = predicted.size();
  std::vector<double> pred_mean(n), true_mean(n);
  std::size_t agree = 0;
  double emd_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pred_mean[i] = nima_score(predicted[i]);
    true_mean[i] = nima_score(truth[i]);
    if ((pred_mean[i] > cutoff) == (true_mean[i] > cutoff)) ++agree;
    emd_total += emd(truth[i], predicted[i], 1.0);
  }
  EvalReport report;
  report.two_class_accuracy = static_cast<double>(agree) / static_cast<double>(n);
  report.lcc = pearson(pred_mean, true_mean);
  report.srcc = spearman(pred_mean, true_mean);
  report.mean_emd = emd_total / static_cast<double>(n);
  return report;
}

}  // namespace nimaenh::quality
