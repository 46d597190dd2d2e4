#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "embvos/errors.hpp"

namespace embvos {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<double>() { return "f64"; }

/// Dense row-major n-dimensional array over an Eigen buffer.
///
/// The element count always equals the product of the extents; a rank-0
/// tensor holds exactly one scalar. Element access through operator() and
/// at() is bounds-checked and throws ContractError on violation. Kernels
/// that need raw speed go through data() or the Eigen maps.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() : shape_{0}, data_(0) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Vector::Constant(checked_size(shape_), fill)) {}

  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != checked_size(shape_))
      throw ShapeError("tensor initializer has " + std::to_string(values.size()) +
                       " values for shape " + shape_string(shape_));
    data_.resize(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), data_.data());
  }

  Tensor(Shape shape, const std::vector<Scalar>& values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != checked_size(shape_))
      throw ShapeError("tensor buffer has " + std::to_string(values.size()) +
                       " values for shape " + shape_string(shape_));
    data_ = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank())
      throw ContractError("axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(rank()));
    return shape_[static_cast<std::size_t>(axis)];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar* begin() { return data(); }
  Scalar* end() { return data() + size(); }
  const Scalar* begin() const { return data(); }
  const Scalar* end() const { return data() + size(); }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Eigen::Map<RowMatrix> matrix(Index rows, Index cols) {
    require_split(rows, cols);
    return {data(), rows, cols};
  }
  Eigen::Map<const RowMatrix> matrix(Index rows, Index cols) const {
    require_split(rows, cols);
    return {data(), rows, cols};
  }
  /// View as (prod of leading extents) x (last extent).
  Eigen::Map<RowMatrix> rows_by_last() { return matrix(size() / std::max<Index>(1, last()), last()); }
  Eigen::Map<const RowMatrix> rows_by_last() const {
    return matrix(size() / std::max<Index>(1, last()), last());
  }

  Scalar& operator[](Index flat) { return data_[check_flat(flat)]; }
  const Scalar& operator[](Index flat) const { return data_[check_flat(flat)]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... I>
  const Scalar& operator()(I... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  Scalar& at(const Shape& idx) { return data_[offset(idx)]; }
  const Scalar& at(const Shape& idx) const { return data_[offset(idx)]; }

  /// Row-major flat offset of a full multi-index.
  Index offset(const Shape& idx) const {
    if (idx.size() != shape_.size())
      throw ContractError("index rank " + std::to_string(idx.size()) + " for tensor of shape " +
                          shape_string(shape_));
    Index flat = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      if (idx[a] < 0 || idx[a] >= shape_[a])
        throw ContractError("index " + shape_string(idx) + " out of range for shape " +
                            shape_string(shape_));
      flat = flat * shape_[a] + idx[a];
    }
    return flat;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    out.vec() = data_.template cast<U>();
    return out;
  }

  void fill(Scalar v) { data_.setConstant(v); }

  bool all_finite() const { return data_.allFinite(); }

  /// Bitwise equality of shape and contents.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index e : shape)
      if (e < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    return shape_size(shape);
  }
  Index last() const { return shape_.empty() ? 1 : shape_.back(); }
  Index check_flat(Index flat) const {
    if (flat < 0 || flat >= size())
      throw ContractError("flat index " + std::to_string(flat) + " out of range for size " +
                          std::to_string(size()));
    return flat;
  }
  void require_split(Index rows, Index cols) const {
    if (rows * cols != size())
      throw ShapeError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) + "x" +
                       std::to_string(cols));
  }

  Shape shape_;
  Vector data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want)
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(want) + ", got " +
                     shape_string(got));
}

inline void require_rank(const Shape& got, std::size_t rank, const char* what) {
  if (got.size() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(got));
}

}  // namespace embvos
