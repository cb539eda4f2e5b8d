#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rclnet/errors.hpp"

namespace rclnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor (last index fastest). Carrier for activations,
/// parameters and gradients. Scalar is float for training/inference and
/// double for verification runs.
template <typename Scalar>
class Tensor {
 public:
  using VecMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ArrMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<RowMajorMatrix>;
  using ConstMatMap = Eigen::Map<const RowMajorMatrix>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_size(shape_), Scalar(0)) {}

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != checked_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
  }

  Tensor(std::initializer_list<Index> shape, std::initializer_list<Scalar> data)
      : Tensor(Shape(shape), std::vector<Scalar>(data)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  Index rank() const { return static_cast<Index>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  Scalar& operator()(Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator()(Index i) const { return data_[static_cast<std::size_t>(i)]; }
  Scalar& operator()(Index i, Index j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  Scalar operator()(Index i, Index j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
  Scalar& operator()(Index i, Index j, Index k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  Scalar& operator()(Index i, Index j, Index k, Index l) {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  Scalar operator()(Index i, Index j, Index k, Index l) const {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  void fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }
  void set_zero() { fill(Scalar(0)); }

  // Eigen views over the flat buffer.
  VecMap vec() { return VecMap(data_.data(), size()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), size()); }
  ArrMap array() { return ArrMap(data_.data(), size()); }
  ConstArrMap array() const { return ConstArrMap(data_.data(), size()); }

  /// Row-major matrix view; rows*cols must equal size().
  MatMap matrix(Index rows, Index cols) {
    require_view(rows, cols);
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap matrix(Index rows, Index cols) const {
    require_view(rows, cols);
    return ConstMatMap(data_.data(), rows, cols);
  }

  /// Same buffer under a new shape of equal size.
  Tensor reshaped(Shape shape) const {
    if (checked_size(shape) != size())
      throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return Tensor<Other>(shape_, std::move(out));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static Index checked_size(const Shape& shape) {
    if (shape.empty()) return 0;
    Index n = 1;
    for (Index e : shape) {
      if (e < 1) throw DimensionError("tensor extent must be >= 1, got shape " + shape_to_string(shape));
      n *= e;
    }
    return n;
  }

 private:
  void require_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " does not cover tensor of size " + std::to_string(size()));
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return t.array().isFinite().all();
}

}  // namespace rclnet
