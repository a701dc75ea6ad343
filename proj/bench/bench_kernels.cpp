// Parallel vs serial reference convolution kernels at the desk training shape
// (48x64, 32 -> 32 channels, 3x3) across the dilations of the default schedule.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "nimaenh/kernels.hpp"

namespace {

using nimaenh::kernels::ConvGeometry;
using nimaenh::kernels::Padding;

struct Fixture {
  ConvGeometry g;
  std::vector<double> padded, weights, bias, out, grad_out, grad_padded, grad_w, grad_b;

  explicit Fixture(std::size_t dilation, std::size_t cin = 32, std::size_t cout = 32) {
    g = nimaenh::kernels::make_geometry(48, 64, cin, cout, 3, 3, dilation, 1, Padding::symmetric);
    std::mt19937_64 rng(dilation);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto fill = [&](std::vector<double>& v, std::size_t n) {
      v.resize(n);
      for (double& x : v) x = u(rng);
    };
    fill(padded, g.padded_size());
    fill(weights, g.weight_size());
    fill(bias, cout);
    fill(grad_out, g.output_size());
    out.assign(g.output_size(), 0.0);
    grad_padded.assign(g.padded_size(), 0.0);
    grad_w.assign(g.weight_size(), 0.0);
    grad_b.assign(cout, 0.0);
  }

  double macs() const {
    return static_cast<double>(g.out_h * g.out_w * g.weight_size());
  }
};

template <bool Fast>
void BM_Forward(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    if constexpr (Fast) {
      nimaenh::kernels::conv_forward(f.g, f.padded, f.weights, f.bias, f.out);
    } else {
      nimaenh::kernels::reference::conv_forward(f.g, f.padded, f.weights, f.bias, f.out);
    }
    benchmark::DoNotOptimize(f.out.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(f.macs(), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Fast>
void BM_BackwardInput(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    if constexpr (Fast) {
      nimaenh::kernels::conv_backward_input(f.g, f.grad_out, f.weights, f.grad_padded);
    } else {
      nimaenh::kernels::reference::conv_backward_input(f.g, f.grad_out, f.weights, f.grad_padded);
    }
    benchmark::DoNotOptimize(f.grad_padded.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(f.macs(), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Fast>
void BM_BackwardParams(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    if constexpr (Fast) {
      nimaenh::kernels::conv_backward_params(f.g, f.padded, f.grad_out, f.grad_w, f.grad_b);
    } else {
      nimaenh::kernels::reference::conv_backward_params(f.g, f.padded, f.grad_out, f.grad_w,
                                                        f.grad_b);
    }
    benchmark::DoNotOptimize(f.grad_w.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(f.macs(), benchmark::Counter::kIsIterationInvariantRate);
}

BENCHMARK(BM_Forward<true>)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward<false>)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardInput<true>)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardInput<false>)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardParams<true>)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardParams<false>)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
