#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evolrp/rng.hpp"

namespace evolrp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major n-dimensional array.
///
/// Storage type is the template parameter; every reduction offered here
/// accumulates in double regardless of T.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(checked_size(shape_), T{0}) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_to_string(shape_));
    }
  }

  static BasicTensor full(Shape shape, T value) {
    BasicTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  /// Same data, new shape of equal element count.
  BasicTensor reshaped(Shape shape) const {
    if (checked_size(shape) != data_.size()) {
      throw std::invalid_argument("cannot reshape " + shape_to_string(shape_) + " to " +
                                  shape_to_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  double sum() const noexcept {
    double s = 0.0;
    for (T v : data_) s += static_cast<double>(v);
    return s;
  }

  double l2_norm() const noexcept {
    double s = 0.0;
    for (T v : data_) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  std::uint64_t content_hash() const noexcept {
    std::uint64_t h = hash_bytes(std::as_bytes(std::span(shape_)));
    return hash_bytes(std::as_bytes(std::span(data_)), h);
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static std::size_t checked_size(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("tensor shape " + shape_to_string(shape) + " has a zero dimension");
    }
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("tensor shape mismatch in subtraction");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return out;
}

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("tensor shape mismatch in addition");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(a[i]) + static_cast<double>(b[i]));
  return out;
}

template <typename T>
BasicTensor<T> scaled(const BasicTensor<T>& a, double factor) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<T>(factor * static_cast<double>(a[i]));
  return out;
}

}  // namespace evolrp
