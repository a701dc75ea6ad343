#pragma once

// No-reference quality prediction: rating distributions over ordered score
// buckets, the normalized Earth Mover's Distance between them, the tiny
// convolutional predictor with a global-pool + 10-way softmax head, and the
// evaluation metrics used to compare predictors.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nimaenh/autodiff.hpp"
#include "nimaenh/layers.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::quality {

inline constexpr std::size_t kBuckets = 10;
inline constexpr double kMaxScore = 10.0;

// Probability mass over buckets with scores 1..N.
class RatingDistribution {
 public:
  // Throws InvalidArgument unless all entries are >= 0 and sum to 1 within 1e-9.
  explicit RatingDistribution(std::vector<double> probs);

  static RatingDistribution uniform(std::size_t buckets = kBuckets);
  // `bucket` is 1-based.
  static RatingDistribution one_hot(std::size_t bucket, std::size_t buckets = kBuckets);

  std::size_t size() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }

  std::vector<double> cdf() const;
  double mean_score() const;

 private:
  std::vector<double> probs_;
};

// ((1/N) sum_k |CDF_p(k) - CDF_q(k)|^order)^(1/order)
double emd(const RatingDistribution& p, const RatingDistribution& q, double order);

// Squared order-2 EMD, the training objective.
double emd_train_loss(const RatingDistribution& truth, const RatingDistribution& predicted);

// Differentiable squared order-2 EMD of `predicted` (rank-1 probabilities)
// against a fixed ground-truth distribution.
ad::Expr emd_train_loss_expr(ad::Expr predicted, const RatingDistribution& truth);
// Same, with the ground-truth CDF supplied as a graph operand.
ad::Expr emd_train_loss_expr(ad::Expr predicted, ad::Expr target_cdf);

// sum_i i * p_i
double nima_score(const RatingDistribution& p);
ad::Expr nima_score_expr(ad::Expr probs);
// 10 - score
ad::Expr quality_penalty_expr(ad::Expr probs);

struct NimaConfig {
  std::vector<std::size_t> channels{8, 16, 32, 32};  // one stride-2 3x3 stage each
  double leaky_slope = nn::kDefaultLeakySlope;
  std::size_t buckets = kBuckets;
  std::size_t min_extent = 16;

  void validate() const;
};

struct NimaModel {
  NimaConfig config;
  ParameterSet params;  // nima.conv<k>.{w,b}, nima.fc.{w,b}
  bool frozen = false;
};

NimaModel build_tiny_nima(const NimaConfig& config, std::uint64_t seed);

// Parameters of the fully-connected head; everything else is backbone.
bool is_head_parameter(const std::string& name);

// Graph from an [H, W, 3] image to bucket probabilities. With
// `trainable == false` the weights are input leaves, so no gradient is
// produced for them.
ad::Expr nima_graph(const NimaConfig& config, ad::Expr image, bool trainable);

// Throws InvalidArgument when the image is not [H, W, 3] with H, W >= min_extent.
void check_image(const NimaConfig& config, const Tensor& image);

RatingDistribution predict(const NimaModel& model, const Tensor& image);

double quality_penalty(const Tensor& image, const NimaModel& model);

struct PenaltyWithGrad {
  double penalty = 0.0;
  Tensor grad;  // d(penalty)/d(pixels), image shape
};
PenaltyWithGrad quality_penalty_with_grad(const Tensor& image, const NimaModel& model);

struct EvalReport {
  double two_class_accuracy = 0.0;
  // Empty when a score list has zero variance and the coefficient is undefined.
  std::optional<double> lcc;
  std::optional<double> srcc;
  double mean_emd = 0.0;  // order-1 EMD averaged per image
};

inline constexpr double kTwoClassCutoff = 5.0;

EvalReport eval_metrics(std::span<const RatingDistribution> predicted,
                        std::span<const RatingDistribution> truth,
                        double cutoff = kTwoClassCutoff);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
// 1-based ranks, ties receive the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

}  // namespace nimaenh::quality
