#include "mtcn/layers.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mtcn {

namespace {

void require_rank4(const Shape& s, const char* what) {
  if (s.rank() != 4) throw ConfigError(std::string(what) + " expects a 4-D tensor, got " + s.str());
}

template <typename Scalar>
void im2col(const Tensor<Scalar>& in, Extent2 k, Extent2 s, Index oh, Index ow, RowMatrix<Scalar>& cols) {
  const Index n = in.n(), c = in.c(), h = in.h(), w = in.w();
  const Index plane = oh * ow;
  cols.resize(c * k.h * k.w, n * plane);
  for (Index ch = 0; ch < c; ++ch) {
    for (Index ky = 0; ky < k.h; ++ky) {
      for (Index kx = 0; kx < k.w; ++kx) {
        Scalar* row = cols.row((ch * k.h + ky) * k.w + kx).data();
        for (Index b = 0; b < n; ++b) {
          const Scalar* src = in.data() + (b * c + ch) * h * w;
          Scalar* dst = row + b * plane;
          for (Index y = 0; y < oh; ++y) {
            const Scalar* srow = src + (y * s.h + ky) * w + kx;
            for (Index x = 0; x < ow; ++x) dst[y * ow + x] = srow[x * s.w];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Extent2 k, Extent2 s, Index oh, Index ow, Tensor<Scalar>& out) {
  const Index n = out.n(), c = out.c(), h = out.h(), w = out.w();
  const Index plane = oh * ow;
  for (Index ch = 0; ch < c; ++ch) {
    for (Index ky = 0; ky < k.h; ++ky) {
      for (Index kx = 0; kx < k.w; ++kx) {
        const Scalar* row = cols.row((ch * k.h + ky) * k.w + kx).data();
        for (Index b = 0; b < n; ++b) {
          Scalar* dst = out.data() + (b * c + ch) * h * w;
          const Scalar* src = row + b * plane;
          for (Index y = 0; y < oh; ++y) {
            Scalar* drow = dst + (y * s.h + ky) * w + kx;
            for (Index x = 0; x < ow; ++x) drow[x * s.w] += src[y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                              const Tensor<Scalar>& bias, Extent2 stride, ConvCache<Scalar>* cache) {
  require_rank4(input.shape(), "conv2d_forward input");
  require_rank4(weights.shape(), "conv2d_forward weights");
  const Index k = weights.n();
  const Extent2 kernel{weights.h(), weights.w()};
  if (weights.c() != input.c())
    throw ConfigError("conv2d: input has " + std::to_string(input.c()) + " channels, weights expect " +
                      std::to_string(weights.c()));
  if (bias.size() != k) throw ConfigError("conv2d: bias length does not match filter count");
  if (stride.h < 1 || stride.w < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (input.h() < kernel.h || input.w() < kernel.w)
    throw ConfigError("conv2d: kernel " + weights.shape().str() + " larger than input " + input.shape().str());

  const Index oh = output_extent(input.h(), kernel.h, stride.h);
  const Index ow = output_extent(input.w(), kernel.w, stride.w);
  const Index n = input.n(), plane = oh * ow;

  RowMatrix<Scalar> local;
  RowMatrix<Scalar>& cols = cache ? cache->columns : local;
  im2col(input, kernel, stride, oh, ow, cols);

  const auto wmat = weights.matrix(k, weights.size() / k);
  RowMatrix<Scalar> y = wmat * cols;  // [K, N*plane]

  Tensor<Scalar> out(Shape{n, k, oh, ow});
  for (Index b = 0; b < n; ++b)
    for (Index f = 0; f < k; ++f) {
      Scalar* dst = out.data() + (b * k + f) * plane;
      const Scalar* src = y.data() + f * y.cols() + b * plane;
      const Scalar bf = bias[f];
      for (Index i = 0; i < plane; ++i) dst[i] = src[i] + bf;
    }
  require_finite(out, "conv2d output");

  if (cache) {
    cache->input_shape = input.shape();
    cache->kernel = kernel;
    cache->stride = stride;
    cache->valid = true;
  }
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const ConvCache<Scalar>& cache, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& grad_output, bool want_input_grad) {
  if (!cache.valid) throw StateError("conv2d_backward called without a forward cache");
  const Index n = grad_output.n(), k = grad_output.c(), oh = grad_output.h(), ow = grad_output.w();
  const Index plane = oh * ow;
  if (weights.n() != k || cache.input_shape[0] != n)
    throw ConfigError("conv2d_backward: gradient shape " + grad_output.shape().str() + " does not match cache");

  RowMatrix<Scalar> dy(k, n * plane);
  for (Index b = 0; b < n; ++b)
    for (Index f = 0; f < k; ++f) {
      const Scalar* src = grad_output.data() + (b * k + f) * plane;
      Scalar* dst = dy.data() + f * dy.cols() + b * plane;
      std::copy(src, src + plane, dst);
    }

  ConvGrads<Scalar> g;
  g.weights = Tensor<Scalar>(weights.shape());
  g.weights.matrix(k, weights.size() / k).noalias() = dy * cache.columns.transpose();
  g.bias = Tensor<Scalar>(Shape{k});
  g.bias.vec() = dy.rowwise().sum();

  if (want_input_grad) {
    const auto wmat = weights.matrix(k, weights.size() / k);
    RowMatrix<Scalar> dcols = wmat.transpose() * dy;
    g.input = Tensor<Scalar>(cache.input_shape);
    col2im(dcols, cache.kernel, cache.stride, oh, ow, g.input);
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> maxpool_forward(const Tensor<Scalar>& input, Extent2 kernel, Extent2 stride, PoolCache* cache) {
  require_rank4(input.shape(), "maxpool_forward");
  if (kernel.h < 1 || kernel.w < 1 || stride.h < 1 || stride.w < 1)
    throw ConfigError("maxpool: kernel and stride must be >= 1");
  if (input.h() < kernel.h || input.w() < kernel.w)
    throw ConfigError("maxpool: window larger than input " + input.shape().str());

  const Index n = input.n(), c = input.c(), h = input.h(), w = input.w();
  const Index oh = output_extent(h, kernel.h, stride.h);
  const Index ow = output_extent(w, kernel.w, stride.w);
  Tensor<Scalar> out(Shape{n, c, oh, ow});
  if (cache) cache->argmax.assign(static_cast<std::size_t>(out.size()), 0);

  Index o = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index base = plane * h * w;
    for (Index y = 0; y < oh; ++y)
      for (Index x = 0; x < ow; ++x, ++o) {
        Index best = base + (y * stride.h) * w + x * stride.w;
        Scalar best_value = input[best];
        for (Index ky = 0; ky < kernel.h; ++ky)
          for (Index kx = 0; kx < kernel.w; ++kx) {
            const Index idx = base + (y * stride.h + ky) * w + x * stride.w + kx;
            if (input[idx] > best_value) {
              best_value = input[idx];
              best = idx;
            }
          }
        out[o] = best_value;
        if (cache) cache->argmax[static_cast<std::size_t>(o)] = best;
      }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->valid = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool_backward(const PoolCache& cache, const Tensor<Scalar>& grad_output) {
  if (!cache.valid) throw StateError("maxpool_backward called without a forward cache");
  if (static_cast<std::size_t>(grad_output.size()) != cache.argmax.size())
    throw ConfigError("maxpool_backward: gradient size does not match cache");
  Tensor<Scalar> g(cache.input_shape);
  for (Index i = 0; i < grad_output.size(); ++i) g[cache.argmax[static_cast<std::size_t>(i)]] += grad_output[i];
  return g;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
BatchNormParams<Scalar> BatchNormParams<Scalar>::make(Index channels) {
  BatchNormParams p;
  p.gamma = Tensor<Scalar>::constant(Shape{channels}, Scalar(1));
  p.beta = Tensor<Scalar>(Shape{channels});
  p.running_mean = Tensor<Scalar>(Shape{channels});
  p.running_var = Tensor<Scalar>::constant(Shape{channels}, Scalar(1));
  return p;
}

template <typename Scalar>
Tensor<Scalar> batchnorm_forward(const Tensor<Scalar>& input, BatchNormParams<Scalar>& params, Mode mode,
                                 BatchNormCache<Scalar>* cache) {
  require_rank4(input.shape(), "batchnorm_forward");
  const Index n = input.n(), c = input.c(), plane = input.h() * input.w();
  if (params.gamma.size() != c || params.beta.size() != c)
    throw ConfigError("batchnorm: parameter length does not match channel count");

  Vector<Scalar> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    const Index count = n * plane;
    if (count < 2) throw InputError("batchnorm: train mode needs at least 2 samples per channel");
    for (Index ch = 0; ch < c; ++ch) {
      Scalar sum = 0;
      for (Index b = 0; b < n; ++b)
        sum += Eigen::Map<const Vector<Scalar>>(input.data() + (b * c + ch) * plane, plane).sum();
      const Scalar mu = sum / Scalar(count);
      Scalar sq = 0;
      for (Index b = 0; b < n; ++b)
        sq += (Eigen::Map<const Vector<Scalar>>(input.data() + (b * c + ch) * plane, plane).array() - mu)
                  .square()
                  .sum();
      const Scalar var = sq / Scalar(count);
      mean[ch] = mu;
      inv_std[ch] = Scalar(1) / std::sqrt(var + params.epsilon);
      if (params.has_running_stats()) {
        params.running_mean[ch] = params.momentum * params.running_mean[ch] + (Scalar(1) - params.momentum) * mu;
        params.running_var[ch] = params.momentum * params.running_var[ch] + (Scalar(1) - params.momentum) * var;
      }
    }
  } else {
    if (!params.has_running_stats()) throw StateError("batchnorm: eval mode without running statistics");
    for (Index ch = 0; ch < c; ++ch) {
      mean[ch] = params.running_mean[ch];
      inv_std[ch] = Scalar(1) / std::sqrt(params.running_var[ch] + params.epsilon);
    }
  }

  Tensor<Scalar> normalized(input.shape());
  Tensor<Scalar> out(input.shape());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * plane;
      auto x = Eigen::Map<const Vector<Scalar>>(input.data() + off, plane).array();
      auto xh = Eigen::Map<Vector<Scalar>>(normalized.data() + off, plane).array();
      xh = (x - mean[ch]) * inv_std[ch];
      Eigen::Map<Vector<Scalar>>(out.data() + off, plane).array() = xh * params.gamma[ch] + params.beta[ch];
    }
  require_finite(out, "batchnorm output");

  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
    cache->mode = mode;
    cache->valid = true;
  }
  return out;
}

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const BatchNormCache<Scalar>& cache, const BatchNormParams<Scalar>& params,
                                          const Tensor<Scalar>& grad_output) {
  if (!cache.valid) throw StateError("batchnorm_backward called without a forward cache");
  const Tensor<Scalar>& xh = cache.normalized;
  if (xh.shape() != grad_output.shape()) throw ConfigError("batchnorm_backward: gradient shape mismatch");
  const Index n = xh.n(), c = xh.c(), plane = xh.h() * xh.w();
  const Scalar count = Scalar(n * plane);

  BatchNormGrads<Scalar> g;
  g.gamma = Tensor<Scalar>(Shape{c});
  g.beta = Tensor<Scalar>(Shape{c});
  g.input = Tensor<Scalar>(xh.shape());
  for (Index ch = 0; ch < c; ++ch) {
    Scalar sum_dy = 0, sum_dy_xh = 0;
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * plane;
      auto dy = Eigen::Map<const Vector<Scalar>>(grad_output.data() + off, plane);
      auto x = Eigen::Map<const Vector<Scalar>>(xh.data() + off, plane);
      sum_dy += dy.sum();
      sum_dy_xh += dy.dot(x);
    }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xh;
    const Scalar scale = params.gamma[ch] * cache.inv_std[ch];
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * plane;
      auto dy = Eigen::Map<const Vector<Scalar>>(grad_output.data() + off, plane).array();
      auto dx = Eigen::Map<Vector<Scalar>>(g.input.data() + off, plane).array();
      if (cache.mode == Mode::Train) {
        auto x = Eigen::Map<const Vector<Scalar>>(xh.data() + off, plane).array();
        dx = scale * (dy - sum_dy / count - x * (sum_dy_xh / count));
      } else {
        dx = scale * dy;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& input) {
  Tensor<Scalar> out = input;
  out.vec() = out.vec().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_output) {
  if (input.shape() != grad_output.shape()) throw ConfigError("relu_backward: shape mismatch");
  Tensor<Scalar> g(input.shape());
  g.vec() = (input.vec().array() > Scalar(0)).select(grad_output.vec(), Scalar(0));
  return g;
}

template <typename Scalar>
Tensor<Scalar> dropout_forward(const Tensor<Scalar>& input, double keep_prob, Rng& rng, Mode mode,
                               DropoutCache<Scalar>* cache) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) throw ConfigError("dropout: keep_prob must lie in (0, 1]");
  Tensor<Scalar> mask = Tensor<Scalar>::constant(input.shape(), Scalar(1));
  if (mode == Mode::Train && keep_prob < 1.0) {
    const Scalar kept = Scalar(1.0 / keep_prob);
    for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < keep_prob ? kept : Scalar(0);
  }
  Tensor<Scalar> out(input.shape());
  out.vec() = input.vec().cwiseProduct(mask.vec());
  if (cache) {
    cache->mask = std::move(mask);
    cache->valid = true;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> dropout_backward(const DropoutCache<Scalar>& cache, const Tensor<Scalar>& grad_output) {
  if (!cache.valid) throw StateError("dropout_backward called without a forward cache");
  if (cache.mask.shape() != grad_output.shape()) throw ConfigError("dropout_backward: shape mismatch");
  Tensor<Scalar> g(grad_output.shape());
  g.vec() = grad_output.vec().cwiseProduct(cache.mask.vec());
  return g;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias,
                             DenseCache<Scalar>* cache) {
  if (input.rank() < 1 || weights.rank() != 2) throw ConfigError("dense: expects rank-2 weights");
  const Index n = input.shape()[0];
  const Index features = n > 0 ? input.size() / n : 0;
  const Index out_dim = weights.shape()[0];
  if (weights.shape()[1] != features)
    throw ConfigError("dense: input has " + std::to_string(features) + " features, weights expect " +
                      std::to_string(weights.shape()[1]));
  if (bias.size() != out_dim) throw ConfigError("dense: bias length mismatch");

  Tensor<Scalar> out(Shape{n, out_dim});
  auto y = out.matrix(n, out_dim);
  y.noalias() = input.matrix(n, features) * weights.matrix(out_dim, features).transpose();
  y.rowwise() += bias.vec().transpose();
  require_finite(out, "dense output");
  if (cache) {
    cache->input = input.reshaped(Shape{n, features});
    cache->valid = true;
  }
  return out;
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const DenseCache<Scalar>& cache, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& grad_output) {
  if (!cache.valid) throw StateError("dense_backward called without a forward cache");
  const Index n = cache.input.shape()[0], features = cache.input.shape()[1];
  const Index out_dim = weights.shape()[0];
  if (grad_output.size() != n * out_dim) throw ConfigError("dense_backward: gradient shape mismatch");
  const auto dy = grad_output.matrix(n, out_dim);

  DenseGrads<Scalar> g;
  g.weights = Tensor<Scalar>(weights.shape());
  g.weights.matrix(out_dim, features).noalias() = dy.transpose() * cache.input.matrix(n, features);
  g.bias = Tensor<Scalar>(Shape{out_dim});
  g.bias.vec() = dy.colwise().sum().transpose();
  g.input = Tensor<Scalar>(Shape{n, features});
  g.input.matrix(n, features).noalias() = dy * weights.matrix(out_dim, features);
  return g;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw ConfigError("softmax expects [N, K] logits");
  const Index n = logits.shape()[0], k = logits.shape()[1];
  Tensor<Scalar> p(logits.shape());
  auto in = logits.matrix(n, k);
  auto out = p.matrix(n, k);
  for (Index i = 0; i < n; ++i) {
    const Scalar m = in.row(i).maxCoeff();
    out.row(i) = (in.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return p;
}

template <typename Scalar>
SoftmaxLoss<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ConfigError("softmax_cross_entropy expects [N, K] logits");
  const Index n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<Index>(labels.size()) != n) throw InputError("softmax_cross_entropy: label count mismatch");
  if (!logits.all_finite()) throw NumericError("non-finite logits");

  SoftmaxLoss<Scalar> r;
  r.probabilities = Tensor<Scalar>(logits.shape());
  auto in = logits.matrix(n, k);
  auto out = r.probabilities.matrix(n, k);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw InputError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    const Scalar m = in.row(i).maxCoeff();
    auto shifted = (in.row(i).array() - m).eval();
    const Scalar log_z = std::log(shifted.exp().sum());
    out.row(i) = (shifted - log_z).exp().matrix();
    total += log_z - shifted(y);
  }
  r.loss = n > 0 ? total / Scalar(n) : Scalar(0);
  return r;
}

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy_backward(const Tensor<Scalar>& probabilities, std::span<const int> labels) {
  const Index n = probabilities.shape()[0], k = probabilities.shape()[1];
  if (static_cast<Index>(labels.size()) != n) throw InputError("softmax_cross_entropy_backward: label count mismatch");
  Tensor<Scalar> g = probabilities;
  auto m = g.matrix(n, k);
  for (Index i = 0; i < n; ++i) m(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
  m /= Scalar(n);
  return g;
}

template <typename Scalar>
void he_normal_init(Tensor<Scalar>& weights, Index fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < weights.size(); ++i) weights[i] = Scalar(stddev * standard_normal(rng));
}

// ---------------------------------------------------------------------------

std::string save_rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void load_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw DataError("corrupt generator state");
}

#define MTCN_INSTANTIATE_LAYERS(S)                                                                              \
  template Tensor<S> conv2d_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Extent2, ConvCache<S>*); \
  template ConvGrads<S> conv2d_backward(const ConvCache<S>&, const Tensor<S>&, const Tensor<S>&, bool);           \
  template Tensor<S> maxpool_forward(const Tensor<S>&, Extent2, Extent2, PoolCache*);                             \
  template Tensor<S> maxpool_backward(const PoolCache&, const Tensor<S>&);                                        \
  template struct BatchNormParams<S>;                                                                             \
  template Tensor<S> batchnorm_forward(const Tensor<S>&, BatchNormParams<S>&, Mode, BatchNormCache<S>*);          \
  template BatchNormGrads<S> batchnorm_backward(const BatchNormCache<S>&, const BatchNormParams<S>&,              \
                                                const Tensor<S>&);                                                \
  template Tensor<S> relu_forward(const Tensor<S>&);                                                              \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);                                           \
  template Tensor<S> dropout_forward(const Tensor<S>&, double, Rng&, Mode, DropoutCache<S>*);                     \
  template Tensor<S> dropout_backward(const DropoutCache<S>&, const Tensor<S>&);                                  \
  template Tensor<S> dense_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, DenseCache<S>*);         \
  template DenseGrads<S> dense_backward(const DenseCache<S>&, const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> softmax(const Tensor<S>&);                                                                   \
  template SoftmaxLoss<S> softmax_cross_entropy(const Tensor<S>&, std::span<const int>);                          \
  template Tensor<S> softmax_cross_entropy_backward(const Tensor<S>&, std::span<const int>);                      \
  template void he_normal_init(Tensor<S>&, Index, Rng&);

MTCN_INSTANTIATE_LAYERS(float)
MTCN_INSTANTIATE_LAYERS(double)

}  // namespace mtcn
