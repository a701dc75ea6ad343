#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "nimaenh/autodiff.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::train {

// Momentum buffers (momentum) or first/second moment estimates (adam),
// keyed like the parameters they track.
struct OptimizerState {
  ParameterSet first;
  ParameterSet second;
  std::uint64_t step = 0;
};

// Learning rate for a named parameter; lets one optimizer serve several
// parameter groups.
using RateFn = std::function<double(const std::string& name)>;

// v <- mu * v + g;  w <- w - lr * v
void momentum_step(std::span<double> w, std::span<const double> g, std::span<double> v, double lr,
                   double mu);

// Bias-corrected Adam update for step number `t` (1-based).
void adam_step(std::span<double> w, std::span<const double> g, std::span<double> m,
               std::span<double> v, std::uint64_t t, double lr, double beta1, double beta2,
               double epsilon);

// Whole-parameter-set forms. Every parameter must have a gradient of the same
// shape; state buffers are created on first use.
void momentum_step(ParameterSet& params, const ad::Gradients& grads, OptimizerState& state,
                   const RateFn& lr, double mu);
void adam_step(ParameterSet& params, const ad::Gradients& grads, OptimizerState& state,
               const RateFn& lr, double beta1, double beta2, double epsilon);

// base_lr * decay_factor ^ floor(epoch / period)
double lr_schedule(std::size_t epoch, double base_lr, double decay_factor, std::size_t period);

}  // namespace nimaenh::train
