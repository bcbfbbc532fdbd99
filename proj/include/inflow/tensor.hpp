#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "inflow/error.hpp"

namespace inflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  return shape.empty() ? std::string("scalar") : os.str();
}

/// Dense row-major tensor with value semantics. Images are stored channel-major
/// (C, then H, then W), batches carry the sample index as the leading dimension.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor of shape " + shape_string(shape_) + " cannot hold " +
                           std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element (r, c) of a rank-2 tensor.
  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Number of leading-dimension entries (samples in a batch).
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }

  /// Number of values per leading-dimension entry.
  std::size_t row_size() const { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * row_size(), row_size()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * row_size(), row_size());
  }

  Tensor reshaped(Shape shape) const& {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  Tensor reshaped(Shape shape) && {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
  }

  /// Rank-2 view [rows, row_size].
  Tensor flattened() const { return reshaped({rows(), row_size()}); }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Rows `indices` of a batch, in the given order.
template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& batch, std::span<const std::size_t> indices) {
  Shape shape = batch.shape();
  shape.at(0) = indices.size();
  Tensor<T> out(shape);
  const std::size_t width = batch.row_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= batch.rows()) throw DimensionError("row index out of range");
    std::copy_n(batch.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return out;
}

/// Rows [begin, end) of a batch.
template <std::floating_point T>
Tensor<T> slice_rows(const Tensor<T>& batch, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(batch, idx);
}

/// Sample shape of a batch (everything but the leading dimension).
template <std::floating_point T>
Shape sample_shape(const Tensor<T>& batch) {
  return Shape(batch.shape().begin() + (batch.rank() ? 1 : 0), batch.shape().end());
}

}  // namespace inflow
