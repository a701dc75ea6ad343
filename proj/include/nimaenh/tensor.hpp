#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nimaenh {

using Shape = std::vector<std::size_t>;

// Allocator whose value-less construct leaves doubles uninitialized, so
// buffers that are about to be overwritten skip the zero fill.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar holding one value.
class Tensor {
 public:
  Tensor() : values_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  // Contents are unspecified until written.
  static Tensor uninitialized(Shape shape);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Value of a single-element tensor; throws ShapeError otherwise.
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool flag) noexcept {
    requires_grad_ = flag;
    return *this;
  }

  bool all_finite() const noexcept;
  void fill(double value);

  // Bitwise comparison of shape and values; the requires_grad flag is ignored.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<double, DefaultInitAllocator<double>> values_;
  bool requires_grad_ = false;
};

// Named tensors in lexicographic name order. Iteration order is the
// canonical order for checkpoints, hashing and optimizer updates.
using ParameterSet = std::map<std::string, Tensor>;

std::size_t parameter_count(const ParameterSet& params);

}  // namespace nimaenh
