#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hingeforest/errors.hpp"

namespace hingeforest {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major n-dimensional array. Every extent is positive and
/// size() == product(shape()) holds for the lifetime of the object.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    for (std::size_t extent : shape_) {
      if (extent == 0) throw ConfigError("tensor extents must be positive, got " + shape_string(shape_));
    }
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Contiguous slice along the leading axis.
  std::span<T> row(std::size_t i) noexcept {
    const std::size_t stride = data_.size() / shape_[0];
    return std::span<T>(data_).subspan(i * stride, stride);
  }
  std::span<const T> row(std::size_t i) const noexcept {
    const std::size_t stride = data_.size() / shape_[0];
    return std::span<const T>(data_).subspan(i * stride, stride);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Reshape without touching data; the element count must be preserved.
  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw ConfigError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  // Reallocates to a new shape if it differs, zero-filled.
  void resize(const Shape& shape) {
    if (shape != shape_) {
      shape_ = shape;
      data_.assign(shape_size(shape_), T{0});
    }
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Leading `count` rows starting at `first` as a new tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& source, std::size_t first, std::size_t count) {
  Shape shape = source.shape();
  shape[0] = count;
  const std::size_t stride = source.size() / source.extent(0);
  std::vector<T> data(source.data() + first * stride, source.data() + (first + count) * stride);
  return Tensor<T>(std::move(shape), std::move(data));
}

// Rows in the given order as a new tensor.
template <typename T, typename Index>
Tensor<T> gather_rows(const Tensor<T>& source, std::span<const Index> rows) {
  Shape shape = source.shape();
  shape[0] = rows.size();
  const std::size_t stride = source.size() / source.extent(0);
  std::vector<T> data;
  data.reserve(rows.size() * stride);
  for (Index r : rows) {
    const T* begin = source.data() + static_cast<std::size_t>(r) * stride;
    data.insert(data.end(), begin, begin + stride);
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace hingeforest
