#include "nimaenh/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nimaenh/error.hpp"

namespace nimaenh {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_extents(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  check_extents(shape_);
  if (values_.size() != element_count(shape_)) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Tensor Tensor::uninitialized(Shape shape) {
  check_extents(shape);
  Tensor t;
  t.values_.resize(element_count(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got shape " + to_string(shape_));
  }
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && a.values_.size() == b.values_.size() &&
         (a.values_.empty() ||
          std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0);
}

std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params) n += tensor.size();
  return n;
}

}  // namespace nimaenh
