#pragma once

// On-disk datasets: one PPM per image under images/ plus manifest.csv with
// columns path, role, operator, sigma, split, pair, param_a, param_b.
// Rated images have role "rated" and operator "degrade"; enhancement pairs
// contribute an "input" and a "reference" row sharing the pair index.
// Ratings are not stored; they are recomputed from sigma on load.

#include <filesystem>
#include <vector>

#include "nimaenh/synth.hpp"

namespace nimaenh::dataset {

inline constexpr const char* kManifestName = "manifest.csv";

// Returns the number of manifest rows (= image files) written.
std::size_t write_dataset(const std::filesystem::path& dir, const synth::Datasets& data);

// Images come back quantized to 8 bits. Throws IoError for a missing or
// malformed manifest and for unreadable images.
synth::Datasets read_dataset(const std::filesystem::path& dir);

}  // namespace nimaenh::dataset
