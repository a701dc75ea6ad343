#pragma once

// RGB images as [H, W, 3] tensors with values in [0, 1]. Files are binary
// PPM (P6) or PNG, 8 bits per channel; values are scaled by 1/255 on read and
// clamped then rounded to the nearest code point on write.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nimaenh/tensor.hpp"

namespace nimaenh::image {

inline constexpr double kPsnrCap = 99.0;

Tensor blank(std::size_t height, std::size_t width, double value = 0.0);

// Throws InvalidArgument unless `image` is [H, W, 3], H, W >= 1, and every
// value is finite and within [0, 1].
void check_image(const Tensor& image);

// Copy with every value clamped into [0, 1]; NaN becomes 0.
Tensor clamp01(const Tensor& image);

std::uint8_t to_byte(double value);

std::vector<std::uint8_t> encode_ppm(const Tensor& image);
// Throws ParseError with the offending byte offset for malformed or
// truncated data and UnsupportedFormatError for other PNM variants or maxval.
Tensor decode_ppm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Tensor& image);
Tensor decode_png(std::span<const std::uint8_t> bytes);

// Format follows the file signature on read and the extension (.ppm, .png)
// on write. I/O failures throw IoError.
Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image);

double mse(const Tensor& a, const Tensor& b);
// 10 log10(1 / MSE) on [0, 1] pixels, kPsnrCap when MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b);

}  // namespace nimaenh::image
