#pragma once

// Synthetic stand-ins for rated photographs and enhancement pairs: seeded
// procedural base images, parametric degradations whose severity sets a
// rating distribution, and two analytic reference operators (a tone curve and
// the single-scattering haze model). Everything here is a pure function of
// its arguments.

#include <cstdint>
#include <string>
#include <vector>

#include "nimaenh/quality.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::synth {

// y = (1 - s) x^gamma_lift + s (3x^2 - 2x^3), per value.
Tensor tone_operator(const Tensor& image, double gamma_lift, double s_curve_strength);

struct HazePair {
  Tensor hazy;
  Tensor reference;
};

// hazy = clean t + airlight (1 - t); the reference is the clean image.
HazePair haze_pair(const Tensor& clean, double transmission, double airlight);

enum class Degradation { blur, noise, contrast };

std::string to_string(Degradation kind);
Degradation parse_degradation(const std::string& text);

// Blur: Gaussian with std 2 sigma pixels, mirrored borders. Noise: additive
// Gaussian with std 0.15 sigma from `seed`, clamped. Contrast: values pulled
// toward 0.5 by the factor 1 - 0.8 sigma. sigma == 0 returns the input
// unchanged.
Tensor degrade(const Tensor& image, double sigma, Degradation kind, std::uint64_t seed = 0);

// Blur, then contrast loss, then noise, all at the same severity.
Tensor degrade_all(const Tensor& image, double sigma, std::uint64_t seed);

inline constexpr double kRatingStd = 1.4;

double rating_mean_for(double sigma);  // 9 - 7 sigma

// Gaussian with mean rating_mean_for(sigma) and std 1.4 integrated over unit
// bucket intervals; the first and last buckets absorb the tails.
quality::RatingDistribution synth_rating(double sigma);

// Gradients, low-frequency waves, a few hard-edged shapes and a fine grating.
Tensor procedural_image(std::uint64_t seed, std::size_t height, std::size_t width);

std::uint64_t splitmix64(std::uint64_t x);

enum class Operator { tone, haze };
enum class OperatorChoice { tone, haze, mixed };

std::string to_string(Operator op);
std::string to_string(OperatorChoice choice);
OperatorChoice parse_operator_choice(const std::string& text);

// Per-image operator parameters are drawn uniformly from these ranges.
inline constexpr double kGammaLiftRange[2] = {0.7, 0.8};
inline constexpr double kSCurveRange[2] = {0.3, 0.5};
inline constexpr double kTransmissionRange[2] = {0.6, 0.9};
inline constexpr double kAirlightRange[2] = {0.8, 1.0};

struct RatedImage {
  Tensor image;
  quality::RatingDistribution rating = quality::RatingDistribution::uniform();
  double severity = 0.0;
  std::size_t base_index = 0;
};

struct DatasetPair {
  Tensor input;
  Tensor reference;
  Operator op = Operator::tone;
  // (gamma_lift, s_curve_strength) for tone, (transmission, airlight) for haze.
  double param_a = 0.0;
  double param_b = 0.0;
  std::size_t base_index = 0;
};

struct Datasets {
  std::vector<RatedImage> rated_train;   // first 4/5 of the base images
  std::vector<RatedImage> rated_test;
  std::vector<DatasetPair> pairs_train;  // first half of the base images
  std::vector<DatasetPair> pairs_test;
};

inline constexpr std::size_t kMinImages = 10;

// Base image i uses seed splitmix64(seed + i). Throws InvalidArgument for
// fewer than kMinImages images or extents below `min_extent`.
Datasets make_datasets(std::uint64_t seed, std::size_t n_images, std::size_t height,
                       std::size_t width, OperatorChoice choice = OperatorChoice::tone,
                       std::size_t min_extent = 16);

}  // namespace nimaenh::synth
