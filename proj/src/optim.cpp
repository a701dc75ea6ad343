#include "nimaenh/optim.hpp"

#include <cmath>

#include "nimaenh/error.hpp"

namespace nimaenh::train {

void momentum_step(std::span<double> w, std::span<const double> g, std::span<double> v, double lr,
                   double mu) {
  if (w.size() != g.size() || w.size() != v.size()) {
    throw ShapeError("momentum_step: parameter, gradient and buffer sizes differ");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = mu * v[i] + g[i];
    w[i] -= lr * v[i];
  }
}

void adam_step(std::span<double> w, std::span<const double> g, std::span<double> m,
               std::span<double> v, std::uint64_t t, double lr, double beta1, double beta2,
               double epsilon) {
  if (w.size() != g.size() || w.size() != m.size() || w.size() != v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw InvalidArgument("adam_step: step counter starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

namespace {

const Tensor& gradient_for(const ad::Gradients& grads, const std::string& name, const Tensor& param) {
  auto it = grads.find(name);
  if (it == grads.end()) throw InvalidArgument("no gradient for parameter " + name);
  if (it->second.shape() != param.shape()) {
    throw ShapeError("gradient for " + name + " has shape " + to_string(it->second.shape()) +
                     ", parameter has " + to_string(param.shape()));
  }
  return it->second;
}

Tensor& buffer_for(ParameterSet& buffers, const std::string& name, const Tensor& param) {
  auto [it, inserted] = buffers.try_emplace(name, param.shape());
  if (it->second.shape() != param.shape()) {
    throw ShapeError("optimizer state for " + name + " does not match the parameter shape");
  }
  return it->second;
}

}  // namespace

void momentum_step(ParameterSet& params, const ad::Gradients& grads, OptimizerState& state,
                   const RateFn& lr, double mu) {
  for (auto& [name, w] : params) {
    const Tensor& g = gradient_for(grads, name, w);
    momentum_step(w.values(), g.values(), buffer_for(state.first, name, w).values(), lr(name), mu);
  }
  ++state.step;
}

void adam_step(ParameterSet& params, const ad::Gradients& grads, OptimizerState& state,
               const RateFn& lr, double beta1, double beta2, double epsilon) {
  const std::uint64_t t = state.step + 1;
  for (auto& [name, w] : params) {
    const Tensor& g = gradient_for(grads, name, w);
    adam_step(w.values(), g.values(), buffer_for(state.first, name, w).values(),
              buffer_for(state.second, name, w).values(), t, lr(name), beta1, beta2, epsilon);
  }
  state.step = t;
}

double lr_schedule(std::size_t epoch, double base_lr, double decay_factor, std::size_t period) {
  if (period == 0) throw InvalidArgument("decay period must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw InvalidArgument("decay factor must lie in (0, 1]");
  }
  return base_lr * std::pow(decay_factor, static_cast<double>(epoch / period));
}

}  // namespace nimaenh::train
