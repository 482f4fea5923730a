#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrnn/error.hpp"

namespace mrnn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major block of doubles with an explicit shape. A rank-0 shape
/// holds a single scalar.
class Array {
 public:
  Array() : data_(1, 0.0) {}

  explicit Array(Shape shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

  Array(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("array data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Array scalar(double v) { return Array(Shape{}, {v}); }
  static Array vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Array(Shape{n}, std::move(v));
  }
  static Array filled(Shape shape, double v) {
    Array a(std::move(shape));
    std::fill(a.data_.begin(), a.data_.end(), v);
    return a;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const& noexcept { return data_; }
  std::span<double> data() & noexcept { return data_; }
  // A span into a temporary would dangle at the end of the full expression.
  std::span<const double> data() const&& = delete;
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw UsageError("item() on non-scalar array " + shape_string(shape_));
    return data_[0];
  }

  // 2-D accessors (row-major).
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Array reshaped(Shape shape) const {
    return Array(std::move(shape), data_);
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace mrnn
