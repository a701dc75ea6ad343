#pragma once

// The two training loops: the quality predictor on rated images (squared
// EMD, momentum SGD with per-group rates and stepwise exponential decay), and
// the enhancement network on image pairs under the perceptual loss with the
// predictor held fixed.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nimaenh/can.hpp"
#include "nimaenh/optim.hpp"
#include "nimaenh/quality.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::train {

enum class OptimizerKind { momentum, adam };

struct TrainConfig {
  double gamma = 1e-4;
  can::Fidelity fidelity = can::Fidelity::l2;
  double huber_delta = 0.1;
  OptimizerKind optimizer = OptimizerKind::adam;
  // Rate for every parameter outside the predictor head (all CAN layers,
  // the predictor backbone).
  double learning_rate = 1e-4;
  double head_learning_rate = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 1;
  std::size_t step_budget = 20000;
  double decay_factor = 1.0;
  std::size_t decay_period_epochs = 10;
  std::uint64_t seed = 0;

  // Predictor stage: momentum 0.9, rate 3e-2 for every group, batch 16,
  // 2000 steps, decay 0.95 every 10 epochs.
  static TrainConfig nima_defaults();
  // Enhancement stage: Adam at 1e-4, batch 1, gamma 1e-4, 2e4 steps.
  static TrainConfig can_defaults();

  void validate() const;
};

struct RatedExample {
  Tensor image;
  quality::RatingDistribution rating;
};

struct ImagePair {
  Tensor input;
  Tensor reference;
};

struct NimaTrainResult {
  quality::NimaModel model;
  std::vector<double> epoch_loss;  // mean squared-EMD over the examples seen in each epoch
  std::size_t steps = 0;
};

// Trains `start` in place of a fresh model. A frozen start model is evaluated
// but never updated.
NimaTrainResult train_nima(std::span<const RatedExample> dataset, const TrainConfig& config,
                           quality::NimaModel start);
NimaTrainResult train_nima(std::span<const RatedExample> dataset, const TrainConfig& config,
                           const quality::NimaConfig& arch = {});

struct CanStepRecord {
  std::size_t step = 0;
  double fidelity = 0.0;
  double gamma_q = 0.0;
  double total = 0.0;
};

struct CanTrainResult {
  can::CanModel model;
  std::vector<CanStepRecord> history;
};

// Called after each step; returning false stops training early.
using StepCallback = std::function<bool(const CanStepRecord&)>;

CanTrainResult train_can(std::span<const ImagePair> pairs, const quality::NimaModel& nima,
                         const TrainConfig& config, can::CanModel start,
                         const StepCallback& on_step = {});
CanTrainResult train_can(std::span<const ImagePair> pairs, const quality::NimaModel& nima,
                         const TrainConfig& config, const can::CanConfig& arch,
                         const StepCallback& on_step = {});

}  // namespace nimaenh::train
