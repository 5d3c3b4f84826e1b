#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "recapd/error.hpp"

namespace recapd {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with rank 1 to 3 and positive extents.
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 3;

  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    const std::size_t n = checked_size(shape_);
    if (n != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("from_rows: empty input");
    const std::size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }
  /// Rows of a rank-2 tensor.
  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  /// Columns of a rank-2 tensor.
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> row(std::size_t i) { return {data_.data() + i * shape_.back(), shape_.back()}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * shape_.back(), shape_.back()};
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  Tensor transposed() const {
    require_rank(2);
    Tensor out({shape_[1], shape_[0]});
    for (std::size_t i = 0; i < shape_[0]; ++i)
      for (std::size_t j = 0; j < shape_[1]; ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  void require_same_shape(const Tensor& other, const char* op) const {
    if (!same_shape(other)) {
      throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(shape_) + " vs " +
                           shape_string(other.shape_));
    }
  }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw DimensionError("expected rank " + std::to_string(r) + " tensor, got " + shape_string(shape_));
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static std::size_t checked_size(const Shape& shape) {
    if (shape.empty() || shape.size() > kMaxRank) {
      throw DimensionError("tensor rank must be 1..3, got shape " + shape_string(shape));
    }
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
      n *= e;
    }
    return n;
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace recapd
