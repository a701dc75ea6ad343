#include "nimaenh/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nimaenh/error.hpp"
#include "nimaenh/image.hpp"

namespace nimaenh::synth {

namespace {

void require_unit(double value, const char* what) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw InvalidArgument(std::string(what) + " must lie in [0, 1], got " + std::to_string(value));
  }
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Edge-inclusive mirror: -1 -> 0, n -> n - 1, periodic beyond one reflection.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

Tensor gaussian_blur(const Tensor& image, double stddev) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * stddev));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * (k * k) / (stddev * stddev));
    taps[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (double& v : taps) v /= total;

  Tensor rows = Tensor::uninitialized(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::size_t xs = reflect(static_cast<std::ptrdiff_t>(x) + k, w);
          acc += taps[static_cast<std::size_t>(k + radius)] * image[(y * w + xs) * 3 + c];
        }
        rows[(y * w + x) * 3 + c] = acc;
      }
  Tensor out = Tensor::uninitialized(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::size_t ys = reflect(static_cast<std::ptrdiff_t>(y) + k, h);
          acc += taps[static_cast<std::size_t>(k + radius)] * rows[(ys * w + x) * 3 + c];
        }
        out[(y * w + x) * 3 + c] = std::clamp(acc, 0.0, 1.0);
      }
  return out;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, const double (&range)[2]) {
  return uniform(rng, range[0], range[1]);
}

}  // namespace

Tensor tone_operator(const Tensor& image, double gamma_lift, double s_curve_strength) {
  if (!(gamma_lift > 0.0) || !std::isfinite(gamma_lift)) {
    throw InvalidArgument("gamma_lift must be positive, got " + std::to_string(gamma_lift));
  }
  require_unit(s_curve_strength, "s_curve_strength");
  image::check_image(image);
  Tensor out = Tensor::uninitialized(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double x = image[i];
    const double lifted = gamma_lift == 1.0 ? x : std::pow(x, gamma_lift);
    const double s = x * x * (3.0 - 2.0 * x);
    out[i] = std::clamp((1.0 - s_curve_strength) * lifted + s_curve_strength * s, 0.0, 1.0);
  }
  return out;
}

HazePair haze_pair(const Tensor& clean, double transmission, double airlight) {
  if (!(transmission > 0.0 && transmission <= 1.0)) {
    throw InvalidArgument("transmission must lie in (0, 1], got " + std::to_string(transmission));
  }
  require_unit(airlight, "airlight");
  image::check_image(clean);
  HazePair pair{Tensor::uninitialized(clean.shape()), clean};
  const double veil = airlight * (1.0 - transmission);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    pair.hazy[i] = std::min(clean[i] * transmission + veil, 1.0);
  }
  return pair;
}

std::string to_string(Degradation kind) {
  switch (kind) {
    case Degradation::blur: return "blur";
    case Degradation::noise: return "noise";
    case Degradation::contrast: return "contrast";
  }
  return "?";
}

Degradation parse_degradation(const std::string& text) {
  if (text == "blur") return Degradation::blur;
  if (text == "noise") return Degradation::noise;
  if (text == "contrast") return Degradation::contrast;
  throw InvalidArgument("unknown degradation '" + text + "' (expected blur|noise|contrast)");
}

Tensor degrade(const Tensor& image, double sigma, Degradation kind, std::uint64_t seed) {
  require_unit(sigma, "severity");
  image::check_image(image);
  if (sigma == 0.0) return image;
  switch (kind) {
    case Degradation::blur:
      return gaussian_blur(image, 2.0 * sigma);
    case Degradation::noise: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> noise(0.0, 0.15 * sigma);
      Tensor out = image;
      for (double& v : out.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
      return out;
    }
    case Degradation::contrast: {
      const double keep = 1.0 - 0.8 * sigma;
      Tensor out = image;
      for (double& v : out.values()) v = 0.5 + (v - 0.5) * keep;
      return out;
    }
  }
  throw InvalidArgument("unknown degradation kind");
}

Tensor degrade_all(const Tensor& image, double sigma, std::uint64_t seed) {
  return degrade(degrade(degrade(image, sigma, Degradation::blur), sigma, Degradation::contrast),
                 sigma, Degradation::noise, seed);
}

double rating_mean_for(double sigma) { return 9.0 - 7.0 * sigma; }

quality::RatingDistribution synth_rating(double sigma) {
  require_unit(sigma, "severity");
  const double mean = rating_mean_for(sigma);
  const std::size_t n = quality::kBuckets;
  std::vector<double> probs(n);
  // Bucket k covers [k - 0.5, k + 0.5); the outer edges extend to infinity.
  for (std::size_t k = 1; k <= n; ++k) {
    const double lo = k == 1 ? 0.0 : normal_cdf((k - 0.5 - mean) / kRatingStd);
    const double hi = k == n ? 1.0 : normal_cdf((k + 0.5 - mean) / kRatingStd);
    probs[k - 1] = hi - lo;
  }
  double total = 0.0;
  for (double p : probs) total += p;
  for (double& p : probs) p /= total;
  return quality::RatingDistribution(std::move(probs));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tensor procedural_image(std::uint64_t seed, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw InvalidArgument("image extents must be positive");
  std::mt19937_64 rng(seed);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  double c0[3], c1[3];
  for (double& c : c0) c = uniform(rng, 0.1, 0.9);
  for (double& c : c1) c = uniform(rng, 0.1, 0.9);
  const double angle = uniform(rng, 0.0, kTwoPi);

  struct Wave {
    double amp, freq, phase, cos_a, sin_a, weight[3];
  };
  Wave waves[2];
  for (Wave& wave : waves) {
    wave.amp = uniform(rng, 0.05, 0.15);
    wave.freq = uniform(rng, 1.0, 3.0);
    wave.phase = uniform(rng, 0.0, kTwoPi);
    const double a = uniform(rng, 0.0, kTwoPi);
    wave.cos_a = std::cos(a);
    wave.sin_a = std::sin(a);
    for (double& wt : wave.weight) wt = uniform(rng, 0.5, 1.0);
  }

  struct Shape2d {
    bool disc;
    double cx, cy, rx, ry, opacity, color[3];
  };
  Shape2d shapes[3];
  for (Shape2d& s : shapes) {
    s.disc = uniform(rng, 0.0, 1.0) < 0.5;
    s.cx = uniform(rng, 0.1, 0.9);
    s.cy = uniform(rng, 0.1, 0.9);
    s.rx = uniform(rng, 0.08, 0.25);
    s.ry = uniform(rng, 0.08, 0.25);
    s.opacity = uniform(rng, 0.6, 1.0);
    for (double& c : s.color) c = uniform(rng, 0.0, 1.0);
  }

  const double grating_period = uniform(rng, 3.0, 5.0);
  const double grating_angle = uniform(rng, 0.0, kTwoPi);
  const double gx = std::cos(grating_angle) * kTwoPi / grating_period;
  const double gy = std::sin(grating_angle) * kTwoPi / grating_period;

  Tensor out = Tensor::uninitialized({height, width, 3});
  for (std::size_t y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double t =
          std::clamp(0.5 + 1.4 * ((u - 0.5) * std::cos(angle) + (v - 0.5) * std::sin(angle)), 0.0, 1.0);
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = c0[c] + (c1[c] - c0[c]) * t;
      for (const Wave& wave : waves) {
        const double s = wave.amp * std::sin(kTwoPi * wave.freq * (u * wave.cos_a + v * wave.sin_a) + wave.phase);
        for (int c = 0; c < 3; ++c) rgb[c] += wave.weight[c] * s;
      }
      for (const Shape2d& s : shapes) {
        const double dx = (u - s.cx) / s.rx, dy = (v - s.cy) / s.ry;
        const bool inside = s.disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) rgb[c] += s.opacity * (s.color[c] - rgb[c]);
      }
      const double grating = 0.04 * std::sin(gx * x + gy * y);
      for (std::size_t c = 0; c < 3; ++c) {
        out[(y * width + x) * 3 + c] = std::clamp(rgb[c] + grating, 0.0, 1.0);
      }
    }
  }
  return out;
}

std::string to_string(Operator op) { return op == Operator::tone ? "tone" : "haze"; }

std::string to_string(OperatorChoice choice) {
  switch (choice) {
    case OperatorChoice::tone: return "tone";
    case OperatorChoice::haze: return "haze";
    case OperatorChoice::mixed: return "mixed";
  }
  return "?";
}

OperatorChoice parse_operator_choice(const std::string& text) {
  if (text == "tone") return OperatorChoice::tone;
  if (text == "haze") return OperatorChoice::haze;
  if (text == "mixed") return OperatorChoice::mixed;
  throw InvalidArgument("unknown operator '" + text + "' (expected tone|haze|mixed)");
}

Datasets make_datasets(std::uint64_t seed, std::size_t n_images, std::size_t height,
                       std::size_t width, OperatorChoice choice, std::size_t min_extent) {
  if (n_images < kMinImages) {
    throw InvalidArgument("need at least " + std::to_string(kMinImages) + " images, got " +
                          std::to_string(n_images));
  }
  if (height < min_extent || width < min_extent) {
    throw InvalidArgument("image size " + std::to_string(height) + "x" + std::to_string(width) +
                          " is below the minimum extent " + std::to_string(min_extent));
  }
  std::vector<RatedImage> rated(n_images);
  std::vector<DatasetPair> pairs(n_images);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::uint64_t image_seed = splitmix64(seed + i);
    const Tensor base = procedural_image(image_seed, height, width);
    // Independent streams for the rated copy and the pair parameters.
    std::mt19937_64 rng(splitmix64(image_seed));

    RatedImage& r = rated[i];
    r.severity = uniform(rng, 0.0, 1.0);
    r.image = degrade_all(base, r.severity, splitmix64(image_seed ^ 0x5eedULL));
    r.rating = synth_rating(r.severity);
    r.base_index = i;

    DatasetPair& p = pairs[i];
    p.base_index = i;
    const bool tone = choice == OperatorChoice::tone || (choice == OperatorChoice::mixed && i % 2 == 0);
    if (tone) {
      p.op = Operator::tone;
      p.param_a = uniform(rng, kGammaLiftRange);
      p.param_b = uniform(rng, kSCurveRange);
      p.input = base;
      p.reference = tone_operator(base, p.param_a, p.param_b);
    } else {
      p.op = Operator::haze;
      p.param_a = uniform(rng, kTransmissionRange);
      p.param_b = uniform(rng, kAirlightRange);
      auto haze = haze_pair(base, p.param_a, p.param_b);
      p.input = std::move(haze.hazy);
      p.reference = std::move(haze.reference);
    }
  }

  Datasets out;
  const std::size_t rated_cut = n_images * 4 / 5;
  const std::size_t pair_cut = n_images / 2;
  out.rated_train.assign(std::make_move_iterator(rated.begin()),
                         std::make_move_iterator(rated.begin() + static_cast<std::ptrdiff_t>(rated_cut)));
  out.rated_test.assign(std::make_move_iterator(rated.begin() + static_cast<std::ptrdiff_t>(rated_cut)),
                        std::make_move_iterator(rated.end()));
  out.pairs_train.assign(std::make_move_iterator(pairs.begin()),
                         std::make_move_iterator(pairs.begin() + static_cast<std::ptrdiff_t>(pair_cut)));
  out.pairs_test.assign(std::make_move_iterator(pairs.begin() + static_cast<std::ptrdiff_t>(pair_cut)),
                        std::make_move_iterator(pairs.end()));
  return out;
}

}  // namespace nimaenh::synth
