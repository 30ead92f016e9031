#include "mtcn/tensor.hpp"

#include <sstream>

namespace mtcn {

Index Shape::numel() const {
  if (dims_.empty()) return 0;
  Index n = 1;
  for (Index d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.numel() != data_.size())
    throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_.str());
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> Tensor<Scalar>::matrix(Index rows, Index cols) {
  if (rows * cols != size()) throw ConfigError("matrix view does not cover tensor " + shape_.str());
  return {data_.data(), rows, cols};
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ConfigError("matrix view does not cover tensor " + shape_.str());
  return {data_.data(), rows, cols};
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

template class Tensor<float>;
template class Tensor<double>;
template void require_finite(const Tensor<float>&, const char*);
template void require_finite(const Tensor<double>&, const char*);

}  // namespace mtcn
