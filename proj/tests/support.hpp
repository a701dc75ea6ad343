#pragma once

// Hand-rolled generators and independent oracles shared by the test suites.
// Nothing here calls into the library's numerical code paths, so a test can
// compare library output against these without circularity.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "nimaenh/quality.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  double normal(double stddev = 1.0) { return std::normal_distribution<double>(0.0, stddev)(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin() { return index(0, 1) == 1; }

  Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = uniform(lo, hi);
    return t;
  }

  Tensor image(std::size_t h, std::size_t w) { return tensor({h, w, 3}, 0.0, 1.0); }

  // Random point of the simplex; `sparsity` of the buckets are zeroed so
  // boundary cases show up too.
  quality::RatingDistribution distribution(std::size_t n = quality::kBuckets, double sparsity = 0.0) {
    std::vector<double> p(n);
    double total = 0.0;
    for (double& v : p) {
      v = uniform() < sparsity ? 0.0 : -std::log(uniform(1e-12, 1.0));
      total += v;
    }
    if (total == 0.0) {
      p[index(0, n - 1)] = 1.0;
      total = 1.0;
    }
    for (double& v : p) v /= total;
    return quality::RatingDistribution(std::move(p));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Direct quadruple loop, padding handled per tap: mirrored (edge-inclusive)
// or zero. x: [H, W, Cin]; w: [k, k, Cin, Cout]; output [Ho, Wo, Cout].
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t dilation,
                         std::size_t stride, bool symmetric) {
  const auto H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const std::size_t cin = x.dim(2), kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const long mh = kh == 1 ? 0 : static_cast<long>(dilation * (kh - 1) / 2);
  const long mw = kw == 1 ? 0 : static_cast<long>(dilation * (kw - 1) / 2);
  const std::size_t ho = (static_cast<std::size_t>(H) - 1) / stride + 1;
  const std::size_t wo = (static_cast<std::size_t>(W) - 1) / stride + 1;
  auto mirror = [](long p, long n) { return p < 0 ? -p - 1 : (p >= n ? 2 * n - p - 1 : p); };
  Tensor out({ho, wo, cout});
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = b[o];
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t c = 0; c < kw; ++c) {
            long y = static_cast<long>(i * stride) - mh + static_cast<long>(a * (kh == 1 ? 1 : dilation));
            long z = static_cast<long>(j * stride) - mw + static_cast<long>(c * (kw == 1 ? 1 : dilation));
            const bool outside = y < 0 || y >= H || z < 0 || z >= W;
            if (outside && !symmetric) continue;
            y = mirror(y, H);
            z = mirror(z, W);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              acc += w[((a * kw + c) * cin + ci) * cout + o] *
                     x[(static_cast<std::size_t>(y) * static_cast<std::size_t>(W) + static_cast<std::size_t>(z)) * cin + ci];
            }
          }
        out[(i * wo + j) * cout + o] = acc;
      }
  return out;
}

// Normalized EMD straight from the definition with explicit CDF loops.
inline double oracle_emd(const std::vector<double>& p, const std::vector<double>& q, double order) {
  double cp = 0.0, cq = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    cp += p[k];
    cq += q[k];
    acc += std::pow(std::abs(cp - cq), order);
  }
  return std::pow(acc / static_cast<double>(p.size()), 1.0 / order);
}

inline double oracle_mean_score(const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += static_cast<double>(k + 1) * p[k];
  return s;
}

inline std::vector<double> probs_of(const quality::RatingDistribution& d) {
  return {d.probs().begin(), d.probs().end()};
}

// Eval metrics from the definitions: stable-sort ranks with tie averaging,
// two-pass Pearson, accuracy at cutoff 5.
inline std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline quality::EvalReport brute_metrics(const std::vector<quality::RatingDistribution>& pred,
                                  const std::vector<quality::RatingDistribution>& truth) {
  std::vector<double> mp, mt;
  double hits = 0, emd_total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp.push_back(oracle_mean_score(probs_of(pred[i])));
    mt.push_back(oracle_mean_score(probs_of(truth[i])));
    hits += (mp.back() > 5.0) == (mt.back() > 5.0) ? 1 : 0;
    emd_total += oracle_emd(probs_of(pred[i]), probs_of(truth[i]), 1.0);
  }
  quality::EvalReport r;
  r.two_class_accuracy = hits / pred.size();
  r.lcc = brute_pearson(mp, mt);
  r.srcc = brute_pearson(brute_ranks(mp), brute_ranks(mt));
  r.mean_emd = emd_total / pred.size();
  return r;
}

}  // namespace nimaenh::testing
