#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eedvit/errors.hpp"

namespace eedvit {

/// Row-major dense matrix used for every 2-D computation in the library.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T> using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

inline std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense N-d array with row-major layout. Precision is a template parameter:
/// the training path uses float, the analysis path double.
template <typename T> class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), T{0}) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeMismatch("tensor shape " + shape_string(shape_) + " needs " +
                          std::to_string(element_count(shape_)) +
                          " values, got " + std::to_string(data_.size()));
    }
  }

  /// Construction from untrusted data: additionally rejects NaN/Inf.
  static Tensor from_external(std::vector<std::size_t> shape,
                              std::vector<T> data) {
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) {
      throw DegenerateInput("tensor contains non-finite values");
    }
    return t;
  }

  static Tensor from_matrix(const Matrix<T>& m) {
    std::vector<T> data(m.data(), m.data() + m.size());
    return Tensor({static_cast<std::size_t>(m.rows()),
                   static_cast<std::size_t>(m.cols())},
                  std::move(data));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
    return true;
  }

  /// View a rank-2 tensor as a matrix without copying.
  Eigen::Map<const Matrix<T>> as_matrix() const {
    require_rank2();
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]),
            static_cast<Eigen::Index>(shape_[1])};
  }
  Eigen::Map<Matrix<T>> as_matrix() {
    require_rank2();
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]),
            static_cast<Eigen::Index>(shape_[1])};
  }

  template <typename U> Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
      return 0;
    }
    for (std::size_t e : shape) {
      if (e == 0) {
        throw ShapeMismatch("tensor extents must be positive, got " +
                            shape_string(shape));
      }
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  void require_rank2() const {
    if (shape_.size() != 2) {
      throw ShapeMismatch("expected a rank-2 tensor, got " +
                          shape_string(shape_));
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

} // namespace eedvit
