#include "nimaenh/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "nimaenh/error.hpp"

namespace nimaenh::image {

namespace {

void check_shape(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) == 0 || image.dim(1) == 0) {
    throw InvalidArgument("expected an [H, W, 3] image, got " + to_string(image.shape()));
  }
}

// Cursor over a PNM header. Whitespace and '#' comments separate tokens.
class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space();
    if (pos_ >= bytes_.size()) throw ParseError(std::string("PPM header ends before ") + what, pos_);
    if (!std::isdigit(bytes_[pos_])) {
      throw ParseError(std::string("PPM header expects a number for ") + what, pos_);
    }
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(std::string("PPM ") + what + " is too large", pos_);
      ++pos_;
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_space() {
    if (pos_ >= bytes_.size()) throw ParseError("PPM header ends before the raster", pos_);
    if (!std::isspace(bytes_[pos_])) throw ParseError("PPM maxval must be followed by whitespace", pos_);
    ++pos_;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

Tensor blank(std::size_t height, std::size_t width, double value) {
  if (height == 0 || width == 0) throw InvalidArgument("image extents must be positive");
  return Tensor({height, width, 3}, value);
}

void check_image(const Tensor& image) {
  check_shape(image);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidArgument("pixel value " + std::to_string(v) + " at index " + std::to_string(i) +
                            " is outside [0, 1]");
    }
  }
}

Tensor clamp01(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.values()) v = v >= 0.0 ? std::min(v, 1.0) : 0.0;
  return out;
}

std::uint8_t to_byte(double value) {
  const double v = value >= 0.0 ? std::min(value, 1.0) : 0.0;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  check_shape(image);
  const std::string header =
      "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size());
  for (double v : image.values()) out.push_back(to_byte(v));
  return out;
}

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) throw ParseError("file too short for a PPM header", bytes.size());
  if (bytes[0] != 'P') throw UnsupportedFormatError("not a PNM file");
  if (bytes[1] != '6') {
    throw UnsupportedFormatError(std::string("PNM variant P") + static_cast<char>(bytes[1]) +
                                 " is not supported; only binary P6 is");
  }
  PnmReader reader(bytes.subspan(2));
  const std::size_t width = reader.number("width");
  const std::size_t height = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  reader.single_space();
  const std::size_t start = 2 + reader.pos();
  if (width == 0 || height == 0) throw ParseError("PPM extents must be positive", start);
  if (maxval == 0 || maxval > 255) {
    throw UnsupportedFormatError("PPM maxval " + std::to_string(maxval) +
                                 " is not supported; expected 1..255");
  }
  const std::size_t count = width * height * 3;
  if (bytes.size() - start < count) {
    throw ParseError("PPM raster is truncated: expected " + std::to_string(count) + " bytes",
                     bytes.size());
  }
  Tensor image = Tensor::uninitialized({height, width, 3});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    const auto v = bytes[start + i];
    if (v > maxval) throw ParseError("PPM sample exceeds maxval", start + i);
    image[i] = v * scale;
  }
  return image;
}

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  check_shape(image);
  std::vector<std::uint8_t> raster(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) raster[i] = to_byte(image[i]);

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.dim(1));
  png.height = static_cast<png_uint_32>(image.dim(0));
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, raster.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, raster.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

Tensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ParseError(std::string("PNG decoding failed: ") + png.message, 0);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw ParseError("PNG decoding failed: " + message, 0);
  }
  Tensor image = Tensor::uninitialized({png.height, png.width, 3});
  for (std::size_t i = 0; i < raster.size(); ++i) image[i] = raster[i] / 255.0;
  return image;
}

Tensor read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 1 && bytes[0] == 'P') return decode_ppm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.offset());
  }
  throw UnsupportedFormatError(path.string() + ": unrecognized image format (expected PPM or PNG)");
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") {
    write_file(path, encode_ppm(image));
  } else if (ext == ".png") {
    write_file(path, encode_png(image));
  } else {
    throw UnsupportedFormatError(path.string() + ": unsupported image extension '" + ext +
                                 "' (expected .ppm or .png)");
  }
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("image shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

}  // namespace nimaenh::image
