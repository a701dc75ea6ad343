#include "nimaenh/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "nimaenh/error.hpp"

namespace nimaenh::train {

TrainConfig TrainConfig::nima_defaults() {
  TrainConfig c;
  c.optimizer = OptimizerKind::momentum;
  // The fine-tuning rates 1e-3 / 1e-2 assume a pretrained backbone; from
  // scratch the tiny predictor barely moves at those, so both groups use 3e-2.
  c.learning_rate = 3e-2;
  c.head_learning_rate = 3e-2;
  c.momentum = 0.9;
  c.batch_size = 16;
  c.step_budget = 2000;
  c.decay_factor = 0.95;
  c.decay_period_epochs = 10;
  return c;
}

TrainConfig TrainConfig::can_defaults() {
  TrainConfig c;
  c.gamma = 1e-4;
  c.optimizer = OptimizerKind::adam;
  c.learning_rate = 1e-4;
  c.head_learning_rate = 1e-4;
  c.batch_size = 1;
  c.step_budget = 20000;
  c.decay_factor = 1.0;
  return c;
}

void TrainConfig::validate() const {
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be >= 0");
  if (!(huber_delta > 0.0)) throw InvalidArgument("huber delta must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("adam betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("adam epsilon must be > 0");
  if (!(learning_rate >= 0.0 && head_learning_rate >= 0.0)) {
    throw InvalidArgument("learning rates must be >= 0");
  }
  if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
  if (step_budget == 0) throw InvalidArgument("step budget must be >= 1");
  if (decay_period_epochs == 0) throw InvalidArgument("decay period must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw InvalidArgument("decay factor must lie in (0, 1]");
  }
}

namespace {

// Every step frees and reallocates the same multi-megabyte activation
// buffers. glibc would otherwise hand them back to the kernel and fault the
// pages in again on the next step.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)done;
#endif
}

void apply_update(ParameterSet& params, const ad::Gradients& grads, OptimizerState& state,
                  const TrainConfig& config, const RateFn& lr) {
  if (config.optimizer == OptimizerKind::momentum) {
    momentum_step(params, grads, state, lr, config.momentum);
  } else {
    adam_step(params, grads, state, lr, config.beta1, config.beta2, config.epsilon);
  }
}

// Sums `parts` in index order and divides by their count.
ad::Gradients average(std::vector<ad::Gradients>& parts) {
  ad::Gradients total = std::move(parts.front());
  for (std::size_t k = 1; k < parts.size(); ++k) {
    for (auto& [name, g] : total) {
      const Tensor& add = parts[k].at(name);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += add[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  if (parts.size() > 1) {
    for (auto& [name, g] : total)
      for (double& v : g.values()) v *= inv;
  }
  return total;
}

}  // namespace

NimaTrainResult train_nima(std::span<const RatedExample> dataset, const TrainConfig& config,
                           quality::NimaModel start) {
  config.validate();
  start.config.validate();
  keep_large_blocks_on_heap();
  if (dataset.empty()) throw InvalidArgument("train_nima: empty dataset");
  for (const auto& ex : dataset) {
    quality::check_image(start.config, ex.image);
    if (ex.rating.size() != start.config.buckets) {
      throw InvalidArgument("rating has " + std::to_string(ex.rating.size()) + " buckets");
    }
  }

  NimaTrainResult result;
  result.model = std::move(start);
  quality::NimaModel& model = result.model;

  const ad::Expr probs = quality::nima_graph(model.config, ad::input("image"), true);
  const ad::Expr loss = quality::emd_train_loss_expr(probs, ad::input("target_cdf"));

  std::vector<Tensor> targets;
  for (const auto& ex : dataset) targets.push_back(Tensor::vector(ex.rating.cdf()));

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  OptimizerState state;

  for (std::size_t epoch = 0; result.steps < config.step_budget; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr_body =
        lr_schedule(epoch, config.learning_rate, config.decay_factor, config.decay_period_epochs);
    const double lr_head = lr_schedule(epoch, config.head_learning_rate, config.decay_factor,
                                       config.decay_period_epochs);
    const RateFn rate = [&](const std::string& name) {
      return quality::is_head_parameter(name) ? lr_head : lr_body;
    };

    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t first = 0; first < order.size() && result.steps < config.step_budget;
         first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      std::vector<double> losses(count);
      std::vector<ad::Gradients> grads(count);
      const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t k = 0; k < n; ++k) {
        const std::size_t idx = order[first + static_cast<std::size_t>(k)];
        ad::Bindings b(model.params.begin(), model.params.end());
        b["image"] = dataset[idx].image;
        b["target_cdf"] = targets[idx];
        const ad::Evaluation ev(loss, b);
        losses[static_cast<std::size_t>(k)] = ev.value().item();
        grads[static_cast<std::size_t>(k)] = ev.backward();
      }
      for (double l : losses) {
        if (!std::isfinite(l)) {
          throw DivergenceError("predictor training diverged at step " +
                                std::to_string(result.steps));
        }
        epoch_sum += l;
      }
      epoch_count += count;
      if (!model.frozen) {
        apply_update(model.params, average(grads), state, config, rate);
      }
      ++result.steps;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
  }
  for (const auto& [name, p] : model.params) {
    if (!p.all_finite()) throw DivergenceError("predictor parameter " + name + " is not finite");
  }
  return result;
}

NimaTrainResult train_nima(std::span<const RatedExample> dataset, const TrainConfig& config,
                           const quality::NimaConfig& arch) {
  return train_nima(dataset, config, quality::build_tiny_nima(arch, config.seed));
}

CanTrainResult train_can(std::span<const ImagePair> pairs, const quality::NimaModel& nima,
                         const TrainConfig& config, can::CanModel start,
                         const StepCallback& on_step) {
  config.validate();
  keep_large_blocks_on_heap();
  if (pairs.empty()) throw InvalidArgument("train_can: empty dataset");
  if (!nima.frozen) throw InvalidArgument("train_can: the quality predictor must be frozen");
  for (const auto& p : pairs) {
    if (p.input.shape() != p.reference.shape()) {
      throw ShapeError("training pair input " + to_string(p.input.shape()) + " and reference " +
                       to_string(p.reference.shape()) + " differ in shape");
    }
    can::check_image(start.config, p.input);
    if (config.gamma > 0.0) quality::check_image(nima.config, p.input);
  }

  CanTrainResult result;
  result.model = std::move(start);
  can::CanModel& model = result.model;

  const ad::Expr enhanced = can::can_graph(model.config, ad::input("x"), true);
  const auto loss = can::perceptual_loss_expr(ad::input("x_r"), enhanced, nima.config, config.gamma,
                                              config.fidelity, config.huber_delta);

  ad::Bindings bindings(nima.params.begin(), nima.params.end());
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  OptimizerState state;
  result.history.reserve(config.step_budget);

  std::size_t step = 0;
  for (std::size_t epoch = 0; step < config.step_budget; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr =
        lr_schedule(epoch, config.learning_rate, config.decay_factor, config.decay_period_epochs);
    const RateFn rate = [lr](const std::string&) { return lr; };

    for (std::size_t first = 0; first < order.size() && step < config.step_budget;
         first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      for (const auto& [name, p] : model.params) bindings[name] = p;
      CanStepRecord rec;
      rec.step = step;
      std::vector<ad::Gradients> grads;
      for (std::size_t k = 0; k < count; ++k) {
        const ImagePair& pair = pairs[order[first + k]];
        bindings["x"] = pair.input;
        bindings["x_r"] = pair.reference;
        const ad::Evaluation ev(loss.total, bindings);
        rec.total += ev.value().item();
        rec.fidelity += ev.value_of(loss.fidelity).item();
        if (loss.weighted_penalty) rec.gamma_q += ev.value_of(*loss.weighted_penalty).item();
        grads.push_back(ev.backward());
      }
      if (count > 1) {
        const double inv = 1.0 / static_cast<double>(count);
        rec.total *= inv;
        rec.fidelity *= inv;
        rec.gamma_q *= inv;
      }
      if (!std::isfinite(rec.total)) {
        throw DivergenceError("enhancement training diverged at step " + std::to_string(step));
      }
      apply_update(model.params, average(grads), state, config, rate);
      result.history.push_back(rec);
      ++step;
      if (on_step && !on_step(rec)) return result;
    }
  }
  for (const auto& [name, p] : model.params) {
    if (!p.all_finite()) throw DivergenceError("enhancement parameter " + name + " is not finite");
  }
  return result;
}

CanTrainResult train_can(std::span<const ImagePair> pairs, const quality::NimaModel& nima,
                         const TrainConfig& config, const can::CanConfig& arch,
                         const StepCallback& on_step) {
  return train_can(pairs, nima, config, can::build_can(arch, config.seed), on_step);
}

}  // namespace nimaenh::train
