#include "nimaenh/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "nimaenh/error.hpp"

namespace nimaenh::kernels {

ConvGeometry make_geometry(std::size_t height, std::size_t width, std::size_t in_channels,
                           std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                           std::size_t dilation, std::size_t stride, Padding padding) {
  if (height == 0 || width == 0 || in_channels == 0 || out_channels == 0) {
    throw InvalidArgument("convolution extents must be positive");
  }
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw InvalidArgument("convolution kernels must have odd extents, got " +
                          std::to_string(kernel_h) + "x" + std::to_string(kernel_w));
  }
  if (dilation == 0 || stride == 0) throw InvalidArgument("dilation and stride must be >= 1");

  ConvGeometry g;
  g.height = height;
  g.width = width;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.dilation = dilation;
  g.stride = stride;
  g.padding = padding;
  g.margin_h = dilation * (kernel_h - 1) / 2;
  g.margin_w = dilation * (kernel_w - 1) / 2;
  if (padding == Padding::symmetric && (g.margin_h > height || g.margin_w > width)) {
    throw InvalidArgument("symmetric padding margin " + std::to_string(g.margin_h) + "x" +
                          std::to_string(g.margin_w) + " exceeds image extent " +
                          std::to_string(height) + "x" + std::to_string(width) +
                          " (dilation " + std::to_string(dilation) + ")");
  }
  g.padded_h = height + 2 * g.margin_h;
  g.padded_w = width + 2 * g.margin_w;
  g.out_h = (g.padded_h - dilation * (kernel_h - 1) - 1) / stride + 1;
  g.out_w = (g.padded_w - dilation * (kernel_w - 1) - 1) / stride + 1;
  return g;
}

void pad(const ConvGeometry& g, std::span<const double> x, std::span<double> padded) {
  const std::size_t c = g.in_channels;
  const auto mh = static_cast<std::ptrdiff_t>(g.margin_h);
  const auto mw = static_cast<std::ptrdiff_t>(g.margin_w);
  for (std::size_t u = 0; u < g.padded_h; ++u) {
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(u) - mh;
    const bool row_inside = r >= 0 && r < static_cast<std::ptrdiff_t>(g.height);
    for (std::size_t v = 0; v < g.padded_w; ++v) {
      const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(v) - mw;
      double* dst = padded.data() + (u * g.padded_w + v) * c;
      const bool inside = row_inside && s >= 0 && s < static_cast<std::ptrdiff_t>(g.width);
      if (!inside && g.padding == Padding::zero) {
        std::fill(dst, dst + c, 0.0);
        continue;
      }
      const std::size_t sr = reflect_index(r, g.height);
      const std::size_t sc = reflect_index(s, g.width);
      const double* src = x.data() + (sr * g.width + sc) * c;
      std::copy(src, src + c, dst);
    }
  }
}

void fold_padded_grad(const ConvGeometry& g, std::span<const double> grad_padded,
                      std::span<double> grad_x) {
  const std::size_t c = g.in_channels;
  const auto mh = static_cast<std::ptrdiff_t>(g.margin_h);
  const auto mw = static_cast<std::ptrdiff_t>(g.margin_w);
  for (std::size_t u = 0; u < g.padded_h; ++u) {
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(u) - mh;
    const bool row_inside = r >= 0 && r < static_cast<std::ptrdiff_t>(g.height);
    for (std::size_t v = 0; v < g.padded_w; ++v) {
      const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(v) - mw;
      const bool inside = row_inside && s >= 0 && s < static_cast<std::ptrdiff_t>(g.width);
      if (!inside && g.padding == Padding::zero) continue;
      const std::size_t sr = reflect_index(r, g.height);
      const std::size_t sc = reflect_index(s, g.width);
      const double* src = grad_padded.data() + (u * g.padded_w + v) * c;
      double* dst = grad_x.data() + (sr * g.width + sc) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
    }
  }
}

namespace {

constexpr std::size_t kPixelBlock = 4;

// Region of the padded input that may hold nonzero values. Taps whose reads
// fall entirely outside it are skipped; that only drops exact zero terms.
struct Window {
  std::size_t row_lo, row_hi, col_lo, col_hi;
};

Window full_window(const ConvGeometry& g) { return {0, g.padded_h, 0, g.padded_w}; }

// Eight doubles; lowers to one AVX-512 register or two AVX registers.
using Vec8 = double __attribute__((vector_size(64)));

inline Vec8 load8(const double* p) {
  Vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, Vec8 v) { std::memcpy(p, &v, sizeof v); }

// acc[p] += sum_c x[p * pixel_stride + c] * w[c * CO .. + 8 * NV]. The
// accumulators are copied into locals so they live in registers across the
// channel loop.
template <std::size_t CO, std::size_t NV, std::size_t P>
[[gnu::always_inline]] inline void tap_block(Vec8 (&acc)[P][NV], const double* x,
                                             const double* w, std::size_t ci,
                                             std::size_t pixel_stride) {
  Vec8 r[P][NV];
#pragma GCC unroll 8
  for (std::size_t p = 0; p < P; ++p)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < NV; ++v) r[p][v] = acc[p][v];
  for (std::size_t c = 0; c < ci; ++c) {
    Vec8 wv[NV];
#pragma GCC unroll 4
    for (std::size_t v = 0; v < NV; ++v) wv[v] = load8(w + c * CO + 8 * v);
#pragma GCC unroll 8
    for (std::size_t p = 0; p < P; ++p) {
      const double a = x[p * pixel_stride + c];
#pragma GCC unroll 4
      for (std::size_t v = 0; v < NV; ++v) r[p][v] += a * wv[v];
    }
  }
#pragma GCC unroll 8
  for (std::size_t p = 0; p < P; ++p)
#pragma GCC unroll 4
    for (std::size_t v = 0; v < NV; ++v) acc[p][v] = r[p][v];
}

// Forward correlation for output channel counts that are multiples of 8.
// Output channels are split into slabs of at most 16 so that a slab's weights
// stay in L1 while a row of pixel blocks streams past; each block of 8 pixels
// keeps its accumulators in vector registers. Every accumulator starts at the
// bias and adds taps in (ki, kj, c) order.
template <std::size_t CO>
void forward_fixed(const ConvGeometry& g, const Window& win, const double* padded,
                   const double* weights, const double* bias, double* out) {
  static_assert(CO % 8 == 0);
  constexpr std::size_t NV = CO > 16 ? 2 : CO / 8;  // vectors per slab
  constexpr std::size_t OB = NV * 8;
  constexpr std::size_t P = 8;
  const std::size_t ci = g.in_channels;
  const std::size_t kh = g.kernel_h, kw = g.kernel_w;
  const std::size_t d = g.dilation, s = g.stride;
  const std::size_t pw = g.padded_w, ow = g.out_w;
  const auto oh = static_cast<std::ptrdiff_t>(g.out_h);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < oh; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t ob = 0; ob < CO; ob += OB) {
      Vec8 b0[NV];
      for (std::size_t v = 0; v < NV; ++v) b0[v] = load8(bias + ob + 8 * v);
      std::size_t j = 0;
      for (; j + P <= ow; j += P) {
        Vec8 acc[P][NV];
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t v = 0; v < NV; ++v) acc[p][v] = b0[v];
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::size_t r = i * s + ki * d;
          if (r < win.row_lo || r >= win.row_hi) continue;
          const double* row = padded + r * pw * ci;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::size_t col = j * s + kj * d;
            if (col + (P - 1) * s < win.col_lo || col >= win.col_hi) continue;
            tap_block<CO, NV, P>(acc, row + col * ci, weights + (ki * kw + kj) * ci * CO + ob,
                                 ci, s * ci);
          }
        }
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t v = 0; v < NV; ++v)
            store8(out + (i * ow + j + p) * CO + ob + 8 * v, acc[p][v]);
      }
      for (; j < ow; ++j) {
        Vec8 acc[NV];
        for (std::size_t v = 0; v < NV; ++v) acc[v] = b0[v];
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::size_t r = i * s + ki * d;
          if (r < win.row_lo || r >= win.row_hi) continue;
          const double* row = padded + r * pw * ci;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::size_t col = j * s + kj * d;
            if (col < win.col_lo || col >= win.col_hi) continue;
            const double* x0 = row + col * ci;
            const double* wt = weights + (ki * kw + kj) * ci * CO + ob;
            for (std::size_t c = 0; c < ci; ++c) {
              const double a = x0[c];
              for (std::size_t v = 0; v < NV; ++v) acc[v] += a * load8(wt + c * CO + 8 * v);
            }
          }
        }
        for (std::size_t v = 0; v < NV; ++v) store8(out + (i * ow + j) * CO + ob + 8 * v, acc[v]);
      }
    }
  }
}

void forward_generic(const ConvGeometry& g, const Window& win, const double* padded,
                     const double* weights, const double* bias, double* out) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  const std::size_t kh = g.kernel_h, kw = g.kernel_w;
  const std::size_t d = g.dilation, s = g.stride;
  const std::size_t pw = g.padded_w, ow = g.out_w;
  const auto oh = static_cast<std::ptrdiff_t>(g.out_h);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < oh; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < ow; ++j) {
      double* acc = out + (i * ow + j) * co;
      for (std::size_t o = 0; o < co; ++o) acc[o] = bias[o];
      for (std::size_t ki = 0; ki < kh; ++ki) {
        const std::size_t r = i * s + ki * d;
        if (r < win.row_lo || r >= win.row_hi) continue;
        const double* row = padded + r * pw * ci;
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const std::size_t col = j * s + kj * d;
          if (col < win.col_lo || col >= win.col_hi) continue;
          const double* x0 = row + col * ci;
          const double* wt = weights + (ki * kw + kj) * ci * co;
          for (std::size_t c = 0; c < ci; ++c) {
            const double a = x0[c];
            const double* wc = wt + c * co;
            for (std::size_t o = 0; o < co; ++o) acc[o] += a * wc[o];
          }
        }
      }
    }
  }
}

void forward_dispatch(const ConvGeometry& g, const Window& win, const double* padded,
                      const double* weights, const double* bias, double* out) {
  switch (g.out_channels) {
    case 8: return forward_fixed<8>(g, win, padded, weights, bias, out);
    case 16: return forward_fixed<16>(g, win, padded, weights, bias, out);
    case 32: return forward_fixed<32>(g, win, padded, weights, bias, out);
    default: return forward_generic(g, win, padded, weights, bias, out);
  }
}

// Gradient of the padded input by direct gather. Used for strided
// convolutions; the order (ki descending, kj descending, o ascending) matches
// the stride-1 path below, which reuses the forward kernel.
void backward_input_gather(const ConvGeometry& g, const double* grad_out, const double* weights,
                           double* grad_padded) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  const std::size_t kh = g.kernel_h, kw = g.kernel_w;
  const auto d = static_cast<std::ptrdiff_t>(g.dilation);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto oh = static_cast<std::ptrdiff_t>(g.out_h);
  const auto ow = static_cast<std::ptrdiff_t>(g.out_w);
  const auto ph = static_cast<std::ptrdiff_t>(g.padded_h);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t u = 0; u < ph; ++u) {
    for (std::size_t v = 0; v < g.padded_w; ++v) {
      double* acc = grad_padded + (static_cast<std::size_t>(u) * g.padded_w + v) * ci;
      std::fill(acc, acc + ci, 0.0);
      for (std::size_t kr = 0; kr < kh; ++kr) {
        const auto ki = static_cast<std::ptrdiff_t>(kh - 1 - kr);
        const std::ptrdiff_t iu = u - ki * d;
        if (iu < 0 || iu % s != 0 || iu / s >= oh) continue;
        const std::ptrdiff_t i = iu / s;
        for (std::size_t kc = 0; kc < kw; ++kc) {
          const auto kj = static_cast<std::ptrdiff_t>(kw - 1 - kc);
          const std::ptrdiff_t jv = static_cast<std::ptrdiff_t>(v) - kj * d;
          if (jv < 0 || jv % s != 0 || jv / s >= ow) continue;
          const std::ptrdiff_t j = jv / s;
          const double* go = grad_out + (static_cast<std::size_t>(i * ow + j)) * co;
          const double* wt = weights + static_cast<std::size_t>(ki * static_cast<std::ptrdiff_t>(kw) + kj) * ci * co;
          for (std::size_t o = 0; o < co; ++o) {
            const double gval = go[o];
            for (std::size_t c = 0; c < ci; ++c) acc[c] += gval * wt[c * co + o];
          }
        }
      }
    }
  }
}

template <std::size_t CI>
void backward_params_fixed(const ConvGeometry& g, const double* padded, const double* grad_out,
                           double* grad_weights) {
  // Here CI is the block of input channels per task; CO is runtime but the
  // inner loop runs over it contiguously.
  const std::size_t ci = g.in_channels, co = g.out_channels;
  const std::size_t kw = g.kernel_w;
  const std::size_t d = g.dilation, s = g.stride;
  const std::size_t pw = g.padded_w, oh = g.out_h, ow = g.out_w;
  const std::size_t taps = g.kernel_h * g.kernel_w;
  const std::size_t blocks = (ci + CI - 1) / CI;
  const auto tasks = static_cast<std::ptrdiff_t>(taps * blocks);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const std::size_t t = static_cast<std::size_t>(task) / blocks;
    const std::size_t c0 = (static_cast<std::size_t>(task) % blocks) * CI;
    const std::size_t nc = std::min(CI, ci - c0);
    const std::size_t ki = t / kw, kj = t % kw;
    double* gw = grad_weights + (t * ci + c0) * co;
    for (std::size_t i = 0; i < oh; ++i) {
      const double* row = padded + ((i * s + ki * d) * pw + kj * d) * ci + c0;
      const double* grow = grad_out + i * ow * co;
      for (std::size_t j = 0; j < ow; ++j) {
        const double* xp = row + j * s * ci;
        const double* gp = grow + j * co;
        for (std::size_t q = 0; q < nc; ++q) {
          const double a = xp[q];
          double* dst = gw + q * co;
          for (std::size_t o = 0; o < co; ++o) dst[o] += a * gp[o];
        }
      }
    }
  }
}

// Weight gradient for output channel counts that are multiples of 8. One task
// per (tap, block of 4 input channels); its 4 x CO accumulators stay in
// registers while every output pixel is visited in row-major order.
template <std::size_t CO>
void backward_params_register(const ConvGeometry& g, const double* padded, const double* grad_out,
                              double* grad_weights) {
  static_assert(CO % 8 == 0);
  constexpr std::size_t NV = CO / 8;
  constexpr std::size_t kBlock = 4;
  const std::size_t ci = g.in_channels;
  const std::size_t kw = g.kernel_w;
  const std::size_t d = g.dilation, s = g.stride;
  const std::size_t pw = g.padded_w, oh = g.out_h, ow = g.out_w;
  const std::size_t taps = g.kernel_h * g.kernel_w;
  const std::size_t blocks = (ci + kBlock - 1) / kBlock;
  const auto tasks = static_cast<std::ptrdiff_t>(taps * blocks);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const std::size_t t = static_cast<std::size_t>(task) / blocks;
    const std::size_t c0 = (static_cast<std::size_t>(task) % blocks) * kBlock;
    const std::size_t ki = t / kw, kj = t % kw;
    double* gw = grad_weights + (t * ci + c0) * CO;
    if (c0 + kBlock <= ci) {
      Vec8 acc[kBlock][NV];
#pragma GCC unroll 4
      for (std::size_t q = 0; q < kBlock; ++q)
#pragma GCC unroll 4
        for (std::size_t v = 0; v < NV; ++v) acc[q][v] = load8(gw + q * CO + 8 * v);
      for (std::size_t i = 0; i < oh; ++i) {
        const double* row = padded + ((i * s + ki * d) * pw + kj * d) * ci + c0;
        const double* grow = grad_out + i * ow * CO;
        for (std::size_t j = 0; j < ow; ++j) {
          const double* xp = row + j * s * ci;
          Vec8 gv[NV];
#pragma GCC unroll 4
          for (std::size_t v = 0; v < NV; ++v) gv[v] = load8(grow + j * CO + 8 * v);
#pragma GCC unroll 4
          for (std::size_t q = 0; q < kBlock; ++q) {
            const double a = xp[q];
#pragma GCC unroll 4
            for (std::size_t v = 0; v < NV; ++v) acc[q][v] += a * gv[v];
          }
        }
      }
#pragma GCC unroll 4
      for (std::size_t q = 0; q < kBlock; ++q)
#pragma GCC unroll 4
        for (std::size_t v = 0; v < NV; ++v) store8(gw + q * CO + 8 * v, acc[q][v]);
    } else {
      for (std::size_t q = 0; c0 + q < ci; ++q) {
        Vec8 acc[NV];
        for (std::size_t v = 0; v < NV; ++v) acc[v] = load8(gw + q * CO + 8 * v);
        for (std::size_t i = 0; i < oh; ++i) {
          const double* row = padded + ((i * s + ki * d) * pw + kj * d) * ci + c0 + q;
          const double* grow = grad_out + i * ow * CO;
          for (std::size_t j = 0; j < ow; ++j) {
            const double a = row[j * s * ci];
            for (std::size_t v = 0; v < NV; ++v) acc[v] += a * load8(grow + j * CO + 8 * v);
          }
        }
        for (std::size_t v = 0; v < NV; ++v) store8(gw + q * CO + 8 * v, acc[v]);
      }
    }
  }
}

void backward_bias(const ConvGeometry& g, const double* grad_out, double* grad_bias) {
  const std::size_t co = g.out_channels;
  const std::size_t pixels = g.out_h * g.out_w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* gp = grad_out + p * co;
    for (std::size_t o = 0; o < co; ++o) grad_bias[o] += gp[o];
  }
}

}  // namespace

void conv_forward(const ConvGeometry& g, std::span<const double> padded,
                  std::span<const double> weights, std::span<const double> bias,
                  std::span<double> out) {
  forward_dispatch(g, full_window(g), padded.data(), weights.data(), bias.data(), out.data());
}

void conv_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                         std::span<const double> weights, std::span<double> grad_padded) {
  if (g.stride != 1) {
    backward_input_gather(g, grad_out.data(), weights.data(), grad_padded.data());
    return;
  }
  // Stride 1: the padded-input gradient is a correlation of the zero-extended
  // output gradient with the flipped, channel-transposed kernel.
  const std::size_t ci = g.in_channels, co = g.out_channels;
  const std::size_t kh = g.kernel_h, kw = g.kernel_w;
  ConvGeometry t;
  t.in_channels = co;
  t.out_channels = ci;
  t.kernel_h = kh;
  t.kernel_w = kw;
  t.dilation = g.dilation;
  t.stride = 1;
  t.padding = Padding::zero;
  t.margin_h = g.dilation * (kh - 1);
  t.margin_w = g.dilation * (kw - 1);
  t.height = g.out_h;
  t.width = g.out_w;
  t.padded_h = g.out_h + 2 * t.margin_h;
  t.padded_w = g.out_w + 2 * t.margin_w;
  t.out_h = g.padded_h;
  t.out_w = g.padded_w;

  // Per-thread scratch: these buffers are rebuilt on every call and would
  // otherwise cost a fresh multi-megabyte allocation each time.
  thread_local std::vector<double> flipped, extended, zero_bias;
  flipped.resize(g.weight_size());
  for (std::size_t ki = 0; ki < kh; ++ki)
    for (std::size_t kj = 0; kj < kw; ++kj)
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t o = 0; o < co; ++o)
          flipped[(((kh - 1 - ki) * kw + (kw - 1 - kj)) * co + o) * ci + c] =
              weights[((ki * kw + kj) * ci + c) * co + o];

  extended.resize(t.padded_size());
  const std::size_t row_len = t.padded_w * co;
  std::fill_n(extended.begin(), t.margin_h * row_len, 0.0);
  std::fill(extended.begin() + static_cast<std::ptrdiff_t>((t.margin_h + g.out_h) * row_len),
            extended.begin() + static_cast<std::ptrdiff_t>(t.padded_size()), 0.0);
  for (std::size_t i = 0; i < g.out_h; ++i) {
    double* dst = extended.data() + (i + t.margin_h) * row_len;
    std::fill_n(dst, t.margin_w * co, 0.0);
    const double* src = grad_out.data() + i * g.out_w * co;
    std::copy(src, src + g.out_w * co, dst + t.margin_w * co);
    std::fill_n(dst + (t.margin_w + g.out_w) * co, t.margin_w * co, 0.0);
  }
  zero_bias.assign(ci, 0.0);
  const Window live{t.margin_h, t.margin_h + g.out_h, t.margin_w, t.margin_w + g.out_w};
  forward_dispatch(t, live, extended.data(), flipped.data(), zero_bias.data(), grad_padded.data());
}

void conv_backward_input_folded(const ConvGeometry& g, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_x) {
  thread_local std::vector<double> grad_padded;
  grad_padded.resize(g.padded_size());
  conv_backward_input(g, grad_out, weights, grad_padded);
  fold_padded_grad(g, grad_padded, grad_x);
}

void conv_backward_params(const ConvGeometry& g, std::span<const double> padded,
                          std::span<const double> grad_out, std::span<double> grad_weights,
                          std::span<double> grad_bias) {
  switch (g.out_channels) {
    case 8: backward_params_register<8>(g, padded.data(), grad_out.data(), grad_weights.data()); break;
    case 16: backward_params_register<16>(g, padded.data(), grad_out.data(), grad_weights.data()); break;
    case 32: backward_params_register<32>(g, padded.data(), grad_out.data(), grad_weights.data()); break;
    default: backward_params_fixed<4>(g, padded.data(), grad_out.data(), grad_weights.data()); break;
  }
  backward_bias(g, grad_out.data(), grad_bias.data());
}

namespace reference {

void conv_forward(const ConvGeometry& g, std::span<const double> padded,
                  std::span<const double> weights, std::span<const double> bias,
                  std::span<double> out) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  for (std::size_t i = 0; i < g.out_h; ++i) {
    for (std::size_t j = 0; j < g.out_w; ++j) {
      for (std::size_t o = 0; o < co; ++o) {
        double acc = bias[o];
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
          for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
            const std::size_t u = i * g.stride + ki * g.dilation;
            const std::size_t v = j * g.stride + kj * g.dilation;
            for (std::size_t c = 0; c < ci; ++c) {
              acc += padded[(u * g.padded_w + v) * ci + c] *
                     weights[((ki * g.kernel_w + kj) * ci + c) * co + o];
            }
          }
        }
        out[(i * g.out_w + j) * co + o] = acc;
      }
    }
  }
}

void conv_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                         std::span<const double> weights, std::span<double> grad_padded) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  const auto d = static_cast<std::ptrdiff_t>(g.dilation);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t u = 0; u < g.padded_h; ++u) {
    for (std::size_t v = 0; v < g.padded_w; ++v) {
      for (std::size_t c = 0; c < ci; ++c) {
        double acc = 0.0;
        for (std::size_t kr = 0; kr < g.kernel_h; ++kr) {
          const auto ki = static_cast<std::ptrdiff_t>(g.kernel_h - 1 - kr);
          const std::ptrdiff_t iu = static_cast<std::ptrdiff_t>(u) - ki * d;
          if (iu < 0 || iu % s != 0 || iu / s >= static_cast<std::ptrdiff_t>(g.out_h)) continue;
          for (std::size_t kc = 0; kc < g.kernel_w; ++kc) {
            const auto kj = static_cast<std::ptrdiff_t>(g.kernel_w - 1 - kc);
            const std::ptrdiff_t jv = static_cast<std::ptrdiff_t>(v) - kj * d;
            if (jv < 0 || jv % s != 0 || jv / s >= static_cast<std::ptrdiff_t>(g.out_w)) continue;
            const auto i = static_cast<std::size_t>(iu / s);
            const auto j = static_cast<std::size_t>(jv / s);
            const auto tap = static_cast<std::size_t>(ki) * g.kernel_w + static_cast<std::size_t>(kj);
            for (std::size_t o = 0; o < co; ++o) {
              acc += grad_out[(i * g.out_w + j) * co + o] * weights[(tap * ci + c) * co + o];
            }
          }
        }
        grad_padded[(u * g.padded_w + v) * ci + c] = acc;
      }
    }
  }
}

void conv_backward_params(const ConvGeometry& g, std::span<const double> padded,
                          std::span<const double> grad_out, std::span<double> grad_weights,
                          std::span<double> grad_bias) {
  const std::size_t ci = g.in_channels, co = g.out_channels;
  for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
    for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
      for (std::size_t c = 0; c < ci; ++c) {
        for (std::size_t o = 0; o < co; ++o) {
          double acc = grad_weights[((ki * g.kernel_w + kj) * ci + c) * co + o];
          for (std::size_t i = 0; i < g.out_h; ++i) {
            for (std::size_t j = 0; j < g.out_w; ++j) {
              const std::size_t u = i * g.stride + ki * g.dilation;
              const std::size_t v = j * g.stride + kj * g.dilation;
              acc += padded[(u * g.padded_w + v) * ci + c] * grad_out[(i * g.out_w + j) * co + o];
            }
          }
          grad_weights[((ki * g.kernel_w + kj) * ci + c) * co + o] = acc;
        }
      }
    }
  }
  for (std::size_t p = 0; p < g.out_h * g.out_w; ++p)
    for (std::size_t o = 0; o < co; ++o) grad_bias[o] += grad_out[p * co + o];
}

}  // namespace reference

}  // namespace nimaenh::kernels
