#ifndef MTCN_TENSOR_HPP
#define MTCN_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mtcn/errors.hpp"

namespace mtcn {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Extents of a tensor, outermost first. 4-D activations are [N, C, H, W].
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index operator[](Index i) const { return dims_[static_cast<std::size_t>(i)]; }
  Index& operator[](Index i) { return dims_[static_cast<std::size_t>(i)]; }
  Index numel() const;
  const std::vector<Index>& dims() const { return dims_; }

  bool operator==(const Shape&) const = default;
  std::string str() const;

 private:
  std::vector<Index> dims_;
};

/// Dense row-major array (W fastest) backed by an Eigen vector.
///
/// Float tensors carry training state; double tensors exist so that
/// finite-difference checks have enough precision.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Vector<Scalar>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(shape_.numel())) {}
  Tensor(Shape shape, Storage data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value);

  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  // 4-D accessors; only meaningful for rank-4 tensors.
  Index n() const { return shape_[0]; }
  Index c() const { return shape_[1]; }
  Index h() const { return shape_[2]; }
  Index w() const { return shape_[3]; }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  /// Row-major matrix view over the whole buffer; rows * cols must equal size().
  Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols);
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const;

  /// Same data, different extents.
  Tensor reshaped(Shape shape) const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws NumericError naming `what` if any element is NaN or infinite.
template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what);

}  // namespace mtcn

#endif  // MTCN_TENSOR_HPP
