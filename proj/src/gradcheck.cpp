#include "mtcn/gradcheck.hpp"

#include <cmath>

namespace mtcn {

double relative_error(const TensorD& analytic, const TensorD& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) throw InputError("gradient shapes differ");
  if (analytic.size() == 0) return 0;
  const double diff = (analytic.vec() - numeric.vec()).cwiseAbs().maxCoeff();
  const double scale = std::max({analytic.vec().cwiseAbs().maxCoeff(), numeric.vec().cwiseAbs().maxCoeff(), floor});
  return diff / scale;
}

TensorD numeric_gradient(const std::function<double()>& loss, TensorD& x, double h) {
  TensorD g(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

NetworkSpec gradcheck_network_spec() {
  NetworkSpec s;
  s.timestamps = 2;
  s.channels_per_branch = 2;
  s.num_classes = 3;
  s.window_size = 9;
  s.branch = {3, {2, 2}, {2, 2}, {2, 2}};                       // 9 -> 8 -> 4
  s.trunk = {{4, {2, 2}, {2, 2}, {1, 1}}, {5, {2, 2}, {1, 1}, {1, 1}}};  // 4 -> 3 -> 2 -> 1 -> 1
  s.fc_units = {6};
  return s;
}

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * standard_normal(rng);
  return t;
}

double weighted_sum(const TensorD& out, const TensorD& r) { return out.vec().dot(r.vec()); }

struct Collector {
  std::vector<GradCheckResult> results;

  void add(std::string name, const TensorD& analytic, const TensorD& numeric, double tol, double floor = 1e-300) {
    const double e = relative_error(analytic, numeric, floor);
    results.push_back({std::move(name), e, tol, e < tol});
  }
};

void check_conv(Collector& c, Rng& rng, Extent2 stride, const std::string& tag) {
  TensorD x = random_tensor({2, 3, 8, 8}, rng);
  TensorD w = random_tensor({4, 3, 4, 4}, rng, 0.3);
  TensorD b = random_tensor({4}, rng);
  ConvCache<double> cache;
  const TensorD out = conv2d_forward(x, w, b, stride, &cache);
  const TensorD r = random_tensor(out.shape(), rng);
  const auto g = conv2d_backward(cache, w, r);
  auto loss = [&] { return weighted_sum(conv2d_forward(x, w, b, stride), r); };
  c.add("conv" + tag + "/input", g.input, numeric_gradient(loss, x), 1e-5);
  c.add("conv" + tag + "/weights", g.weights, numeric_gradient(loss, w), 1e-5);
  c.add("conv" + tag + "/bias", g.bias, numeric_gradient(loss, b), 1e-5);
}

void check_pool(Collector& c, Rng& rng, Extent2 kernel, Extent2 stride, const std::string& tag) {
  TensorD x = random_tensor({2, 2, 7, 7}, rng);
  PoolCache cache;
  const TensorD out = maxpool_forward(x, kernel, stride, &cache);
  const TensorD r = random_tensor(out.shape(), rng);
  const TensorD g = maxpool_backward(cache, r);
  auto loss = [&] { return weighted_sum(maxpool_forward(x, kernel, stride), r); };
  c.add("maxpool" + tag + "/input", g, numeric_gradient(loss, x), 1e-5);
}

void check_batchnorm(Collector& c, Rng& rng) {
  TensorD x = random_tensor({4, 3, 3, 3}, rng);
  auto p = BatchNormParams<double>::make(3);
  p.gamma = random_tensor({3}, rng);
  p.beta = random_tensor({3}, rng);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const std::string tag = mode == Mode::Train ? "batchnorm_train" : "batchnorm_eval";
    if (mode == Mode::Eval) {
      p.running_mean = random_tensor({3}, rng, 0.5);
      p.running_var = TensorD::constant({3}, 0.7);
    }
    BatchNormCache<double> cache;
    const TensorD out = batchnorm_forward(x, p, mode, &cache);
    const TensorD r = random_tensor(out.shape(), rng);
    const auto g = batchnorm_backward(cache, p, r);
    auto loss = [&] { return weighted_sum(batchnorm_forward(x, p, mode), r); };
    c.add(tag + "/input", g.input, numeric_gradient(loss, x), 1e-5);
    c.add(tag + "/gamma", g.gamma, numeric_gradient(loss, p.gamma), 1e-5);
    c.add(tag + "/beta", g.beta, numeric_gradient(loss, p.beta), 1e-5);
  }
}

void check_elementwise(Collector& c, Rng& rng) {
  TensorD x = random_tensor({3, 2, 4, 4}, rng);
  for (Index i = 0; i < x.size(); ++i) x[i] += x[i] >= 0 ? 0.1 : -0.1;  // keep clear of the kink
  {
    const TensorD r = random_tensor(x.shape(), rng);
    const TensorD g = relu_backward(x, r);
    auto loss = [&] { return weighted_sum(relu_forward(x), r); };
    c.add("relu/input", g, numeric_gradient(loss, x), 1e-5);
  }
  {
    const Rng saved = rng;
    DropoutCache<double> cache;
    Rng first = saved;
    const TensorD out = dropout_forward(x, 0.6, first, Mode::Train, &cache);
    const TensorD r = random_tensor(out.shape(), rng);
    const TensorD g = dropout_backward(cache, r);
    auto loss = [&] {
      Rng copy = saved;
      return weighted_sum(dropout_forward(x, 0.6, copy, Mode::Train), r);
    };
    c.add("dropout/input", g, numeric_gradient(loss, x), 1e-5);
  }
}

void check_dense(Collector& c, Rng& rng) {
  TensorD x = random_tensor({3, 4}, rng);
  TensorD w = random_tensor({5, 4}, rng);
  TensorD b = random_tensor({5}, rng);
  DenseCache<double> cache;
  const TensorD out = dense_forward(x, w, b, &cache);
  const TensorD r = random_tensor(out.shape(), rng);
  const auto g = dense_backward(cache, w, r);
  auto loss = [&] { return weighted_sum(dense_forward(x, w, b), r); };
  c.add("dense/input", g.input, numeric_gradient(loss, x), 1e-6);
  c.add("dense/weights", g.weights, numeric_gradient(loss, w), 1e-6);
  c.add("dense/bias", g.bias, numeric_gradient(loss, b), 1e-6);
}

void check_softmax(Collector& c, Rng& rng) {
  TensorD z = random_tensor({4, 5}, rng, 2.0);
  const std::vector<int> labels{0, 3, 4, 1};
  const auto sm = softmax_cross_entropy(z, labels);
  const TensorD g = softmax_cross_entropy_backward(sm.probabilities, labels);
  auto loss = [&] { return softmax_cross_entropy(z, labels).loss; };
  c.add("softmax_cross_entropy/logits", g, numeric_gradient(loss, z), 1e-5);
}

void check_network(Collector& c, Rng& rng, std::vector<double> gates, const std::string& tag) {
  const NetworkSpec spec = gradcheck_network_spec();
  auto params = build<double>(spec, rng);
  // Non-trivial batch-norm affine parameters.
  params.for_each([&](const std::string&, TensorD& t, ParamKind kind) {
    if (kind == ParamKind::BnScale || kind == ParamKind::BnShift || kind == ParamKind::Bias)
      for (Index i = 0; i < t.size(); ++i) t[i] += 0.2 * standard_normal(rng);
  });
  const Index n = 4;
  std::vector<TensorD> windows;
  for (Index j = 0; j < spec.timestamps; ++j)
    windows.push_back(random_tensor({n, spec.channels_per_branch, spec.window_size, spec.window_size}, rng));
  const std::vector<int> labels{0, 1, 2, 1};
  const Rng saved = rng;

  auto run = [&](ForwardCache<double>* cache) {
    Rng copy = saved;
    const TensorD logits = forward_gated(spec, params, std::span<const TensorD>(windows),
                                         std::span<const double>(gates), Mode::Train, copy, cache);
    return softmax_cross_entropy(logits, labels);
  };
  ForwardCache<double> cache;
  const auto sm = run(&cache);
  const auto grads = backward(spec, params, cache, softmax_cross_entropy_backward(sm.probabilities, labels));

  std::vector<std::pair<std::string, TensorD*>> values;
  std::vector<const TensorD*> analytic;
  params.for_each([&](const std::string& name, TensorD& t, ParamKind kind) {
    if (is_learnable(kind)) values.emplace_back(name, &t);
  });
  grads.for_each([&](const std::string&, const TensorD& t, ParamKind kind) {
    if (is_learnable(kind)) analytic.push_back(&t);
  });
  // Per-tensor floor at 1e-3 of the largest gradient anywhere in the network.
  double scale = 0;
  for (const TensorD* g : analytic)
    if (g->size() > 0) scale = std::max(scale, g->vec().cwiseAbs().maxCoeff());
  auto loss = [&] { return run(nullptr).loss; };
  for (std::size_t i = 0; i < values.size(); ++i)
    c.add("network" + tag + "/" + values[i].first, *analytic[i], numeric_gradient(loss, *values[i].second), 1e-4,
          1e-3 * scale);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  Collector c;
  check_conv(c, rng, {1, 1}, "");
  check_conv(c, rng, {2, 1}, "_stride2x1");
  check_pool(c, rng, {2, 2}, {2, 2}, "");
  check_pool(c, rng, {3, 3}, {1, 1}, "_overlap");
  check_batchnorm(c, rng);
  check_elementwise(c, rng);
  check_dense(c, rng);
  check_softmax(c, rng);
  check_network(c, rng, {1.0, 1.0}, "");
  check_network(c, rng, {2.0, 0.0}, "_gated");
  return c.results;
}

}  // namespace mtcn
