#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "funmatch/error.hpp"

namespace funmatch {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

/// Dense row-major tensor. The dtype is the template argument and never changes.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(element_count(shape_), T{0}) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw ShapeError("tensor of shape " + to_string(shape_) + " cannot hold " +
                       std::to_string(values_.size()) + " elements");
    }
  }

  static Tensor filled(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  /// Scalar value of a single-element tensor.
  T item() const {
    if (values_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + to_string(shape_));
    }
    return values_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != values_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), values_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> values_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace funmatch
