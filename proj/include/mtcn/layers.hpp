#ifndef MTCN_LAYERS_HPP
#define MTCN_LAYERS_HPP

#include <span>
#include <vector>

#include "mtcn/rng.hpp"
#include "mtcn/tensor.hpp"

namespace mtcn {

enum class Mode { Train, Eval };

struct Extent2 {
  Index h = 1;
  Index w = 1;
};

/// Valid-padding output extent: floor((in - k) / s) + 1.
constexpr Index output_extent(Index in, Index kernel, Index stride) { return (in - kernel) / stride + 1; }

// ---------------------------------------------------------------------------
// Convolution (valid padding, im2col + GEMM)

template <typename Scalar>
struct ConvCache {
  RowMatrix<Scalar> columns;  // [C*kh*kw, N*H'*W']
  Shape input_shape;
  Extent2 kernel;
  Extent2 stride;
  bool valid = false;
};

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;  // empty when not requested
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
};

/// weights [K, C, kh, kw], bias [K]; input [N, C, H, W] -> [N, K, H', W'].
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                              const Tensor<Scalar>& bias, Extent2 stride, ConvCache<Scalar>* cache = nullptr);

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const ConvCache<Scalar>& cache, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& grad_output, bool want_input_grad = true);

// ---------------------------------------------------------------------------
// Max pooling

struct PoolCache {
  std::vector<Index> argmax;  // flat input offset per output element
  Shape input_shape;
  bool valid = false;
};

/// Ties resolve to the first maximum in row-major scan order of the window.
template <typename Scalar>
Tensor<Scalar> maxpool_forward(const Tensor<Scalar>& input, Extent2 kernel, Extent2 stride,
                               PoolCache* cache = nullptr);

template <typename Scalar>
Tensor<Scalar> maxpool_backward(const PoolCache& cache, const Tensor<Scalar>& grad_output);

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar epsilon = Scalar(1e-5);
  Scalar momentum = Scalar(0.9);  // running <- momentum * running + (1 - momentum) * batch

  static BatchNormParams make(Index channels);
  bool has_running_stats() const { return !running_mean.empty() && !running_var.empty(); }
};

template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;
  Vector<Scalar> inv_std;
  Mode mode = Mode::Eval;
  bool valid = false;
};

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

/// Train mode normalizes with the biased batch variance and updates the
/// running statistics in place; eval mode reads them.
template <typename Scalar>
Tensor<Scalar> batchnorm_forward(const Tensor<Scalar>& input, BatchNormParams<Scalar>& params, Mode mode,
                                 BatchNormCache<Scalar>* cache = nullptr);

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const BatchNormCache<Scalar>& cache, const BatchNormParams<Scalar>& params,
                                          const Tensor<Scalar>& grad_output);

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& input);

/// `input` is the tensor that was fed to relu_forward.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output);

template <typename Scalar>
struct DropoutCache {
  Tensor<Scalar> mask;  // 0 or 1/keep_prob
  bool valid = false;
};

/// Inverted dropout. Eval mode is the identity and consumes no randomness.
template <typename Scalar>
Tensor<Scalar> dropout_forward(const Tensor<Scalar>& input, double keep_prob, Rng& rng, Mode mode,
                               DropoutCache<Scalar>* cache = nullptr);

template <typename Scalar>
Tensor<Scalar> dropout_backward(const DropoutCache<Scalar>& cache, const Tensor<Scalar>& grad_output);

// ---------------------------------------------------------------------------
// Fully connected: input flattened to [N, F], weights [out, F], bias [out].

template <typename Scalar>
struct DenseCache {
  Tensor<Scalar> input;
  bool valid = false;
};

template <typename Scalar>
struct DenseGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
};

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias,
                             DenseCache<Scalar>* cache = nullptr);

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const DenseCache<Scalar>& cache, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& grad_output);

// ---------------------------------------------------------------------------
// Softmax cross-entropy

template <typename Scalar>
struct SoftmaxLoss {
  Scalar loss = 0;                // mean over the batch
  Tensor<Scalar> probabilities;   // [N, K]
};

template <typename Scalar>
SoftmaxLoss<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Row-wise softmax with max subtraction; logits [N, K].
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

/// d(mean loss)/d(logits) = (p - onehot) / N.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy_backward(const Tensor<Scalar>& probabilities, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Initialization

/// Zero-mean normal with stddev sqrt(2 / fan_in).
template <typename Scalar>
void he_normal_init(Tensor<Scalar>& weights, Index fan_in, Rng& rng);

}  // namespace mtcn

#endif  // MTCN_LAYERS_HPP
