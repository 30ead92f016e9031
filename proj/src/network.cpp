#include "mtcn/network.hpp"

#include <algorithm>

namespace mtcn {

// ---------------------------------------------------------------------------
// Spec

namespace {

void check_extent(Index in, Index k, const std::string& what) {
  if (k < 1) throw ConfigError(what + ": kernel extent must be >= 1");
  if (in < k) throw ConfigError(what + ": extent " + std::to_string(in) + " smaller than kernel " + std::to_string(k));
}

nlohmann::json stage_json(const ConvStage& s) {
  return {{"filters", s.filters},
          {"kernel", {s.kernel.h, s.kernel.w}},
          {"pool_kernel", {s.pool_kernel.h, s.pool_kernel.w}},
          {"pool_stride", {s.pool_stride.h, s.pool_stride.w}}};
}

ConvStage stage_from_json(const nlohmann::json& j) {
  ConvStage s;
  s.filters = j.at("filters").get<Index>();
  s.kernel = {j.at("kernel")[0].get<Index>(), j.at("kernel")[1].get<Index>()};
  s.pool_kernel = {j.at("pool_kernel")[0].get<Index>(), j.at("pool_kernel")[1].get<Index>()};
  s.pool_stride = {j.at("pool_stride")[0].get<Index>(), j.at("pool_stride")[1].get<Index>()};
  return s;
}

}  // namespace

ShapeChain shape_chain(const NetworkSpec& spec) {
  ShapeChain chain;
  Index c = spec.branch_input_channels(), h = spec.window_size, w = spec.window_size;
  if (h < 1) throw ConfigError("window size must be >= 1");
  chain.stages.push_back({"input", c, h, w});

  auto push_stage = [&](const std::string& name, const ConvStage& s) {
    if (s.filters < 1) throw ConfigError(name + ": filter count must be >= 1");
    check_extent(h, s.kernel.h, name + " conv");
    check_extent(w, s.kernel.w, name + " conv");
    h = output_extent(h, s.kernel.h, 1);
    w = output_extent(w, s.kernel.w, 1);
    c = s.filters;
    chain.stages.push_back({name + "_conv", c, h, w});
    if (s.pool_stride.h < 1 || s.pool_stride.w < 1) throw ConfigError(name + ": pool stride must be >= 1");
    check_extent(h, s.pool_kernel.h, name + " pool");
    check_extent(w, s.pool_kernel.w, name + " pool");
    h = output_extent(h, s.pool_kernel.h, s.pool_stride.h);
    w = output_extent(w, s.pool_kernel.w, s.pool_stride.w);
    chain.stages.push_back({name + "_pool", c, h, w});
  };

  push_stage("branch", spec.branch);
  c *= spec.branch_count();
  chain.stages.push_back({"concat", c, h, w});
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) push_stage("trunk" + std::to_string(i), spec.trunk[i]);
  chain.feature_dim = c * h * w;
  return chain;
}

const StageShape& ShapeChain::at(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s;
  throw ConfigError("no stage named " + name);
}

void NetworkSpec::validate() const {
  if (timestamps < 1) throw ConfigError("timestamps must be >= 1");
  if (channels_per_branch < 1) throw ConfigError("channels per branch must be >= 1");
  if (num_classes < 2) throw ConfigError("at least two classes are required");
  if (!(fc_keep_prob > 0.0) || fc_keep_prob > 1.0) throw ConfigError("fc keep probability must lie in (0, 1]");
  for (Index u : fc_units)
    if (u < 1) throw ConfigError("fully connected layer sizes must be >= 1");
  shape_chain(*this);
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  nlohmann::json trunk = nlohmann::json::array();
  for (const auto& s : spec.trunk) trunk.push_back(stage_json(s));
  j = {{"architecture", spec.architecture == Architecture::MultiBranch ? "multi_branch" : "early_fusion"},
       {"timestamps", spec.timestamps},
       {"channels_per_branch", spec.channels_per_branch},
       {"num_classes", spec.num_classes},
       {"window_size", spec.window_size},
       {"branch", stage_json(spec.branch)},
       {"trunk", trunk},
       {"fc_units", spec.fc_units},
       {"fc_keep_prob", spec.fc_keep_prob},
       {"missing_data", spec.missing_data},
       {"share_branch_params", spec.share_branch_params}};
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  const auto arch = j.at("architecture").get<std::string>();
  if (arch == "multi_branch")
    spec.architecture = Architecture::MultiBranch;
  else if (arch == "early_fusion")
    spec.architecture = Architecture::EarlyFusion;
  else
    throw ConfigError("unknown architecture " + arch);
  spec.timestamps = j.at("timestamps").get<Index>();
  spec.channels_per_branch = j.at("channels_per_branch").get<Index>();
  spec.num_classes = j.at("num_classes").get<Index>();
  spec.window_size = j.at("window_size").get<Index>();
  spec.branch = stage_from_json(j.at("branch"));
  spec.trunk.clear();
  for (const auto& s : j.at("trunk")) spec.trunk.push_back(stage_from_json(s));
  spec.fc_units = j.at("fc_units").get<std::vector<Index>>();
  spec.fc_keep_prob = j.at("fc_keep_prob").get<double>();
  spec.missing_data = j.at("missing_data").get<bool>();
  spec.share_branch_params = j.at("share_branch_params").get<bool>();
}

NetworkSpec two_d_cnn_spec(Index timestamps, Index channels, Index classes) {
  NetworkSpec spec;
  spec.architecture = Architecture::EarlyFusion;
  spec.timestamps = timestamps;
  spec.channels_per_branch = channels;
  spec.num_classes = classes;
  return spec;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename Scalar>
ConvLayerParams<Scalar> make_conv(Index in_channels, const ConvStage& s, Rng& rng) {
  ConvLayerParams<Scalar> p;
  p.weights = Tensor<Scalar>(Shape{s.filters, in_channels, s.kernel.h, s.kernel.w});
  he_normal_init(p.weights, in_channels * s.kernel.h * s.kernel.w, rng);
  p.bias = Tensor<Scalar>(Shape{s.filters});
  p.bn = BatchNormParams<Scalar>::make(s.filters);
  return p;
}

template <typename Scalar>
DenseLayerParams<Scalar> make_dense(Index in, Index out, Rng& rng) {
  DenseLayerParams<Scalar> p;
  p.weights = Tensor<Scalar>(Shape{out, in});
  he_normal_init(p.weights, in, rng);
  p.bias = Tensor<Scalar>(Shape{out});
  return p;
}

template <typename Other, typename Scalar>
ConvLayerParams<Other> cast_conv(const ConvLayerParams<Scalar>& p) {
  ConvLayerParams<Other> r;
  r.weights = p.weights.template cast<Other>();
  r.bias = p.bias.template cast<Other>();
  r.bn.gamma = p.bn.gamma.template cast<Other>();
  r.bn.beta = p.bn.beta.template cast<Other>();
  r.bn.running_mean = p.bn.running_mean.template cast<Other>();
  r.bn.running_var = p.bn.running_var.template cast<Other>();
  r.bn.epsilon = Other(p.bn.epsilon);
  r.bn.momentum = Other(p.bn.momentum);
  return r;
}

}  // namespace

template <typename Scalar>
Index NetworkParams<Scalar>::learnable_count() const {
  Index n = 0;
  for_each([&n](const std::string&, const Tensor<Scalar>& t, ParamKind k) {
    if (is_learnable(k)) n += t.size();
  });
  return n;
}

template <typename Scalar>
template <typename Other>
NetworkParams<Other> NetworkParams<Scalar>::cast() const {
  NetworkParams<Other> r;
  for (const auto& b : branches) r.branches.push_back(cast_conv<Other>(b));
  for (const auto& t : trunk) r.trunk.push_back(cast_conv<Other>(t));
  for (const auto& d : dense) r.dense.push_back({d.weights.template cast<Other>(), d.bias.template cast<Other>()});
  return r;
}

template <typename Scalar>
NetworkParams<Scalar> build(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  const ShapeChain chain = shape_chain(spec);
  NetworkParams<Scalar> p;
  const Index branch_params = spec.share_branch_params ? 1 : spec.branch_count();
  for (Index j = 0; j < branch_params; ++j)
    p.branches.push_back(make_conv<Scalar>(spec.branch_input_channels(), spec.branch, rng));
  Index c = chain.at("concat").channels;
  for (const auto& s : spec.trunk) {
    p.trunk.push_back(make_conv<Scalar>(c, s, rng));
    c = s.filters;
  }
  Index in = chain.feature_dim;
  for (Index units : spec.fc_units) {
    p.dense.push_back(make_dense<Scalar>(in, units, rng));
    in = units;
  }
  p.dense.push_back(make_dense<Scalar>(in, spec.num_classes, rng));
  return p;
}

template <typename Scalar>
NetworkParams<Scalar> build_2dcnn(Index timestamps, Index channels, Index classes, Rng& rng) {
  return build<Scalar>(two_d_cnn_spec(timestamps, channels, classes), rng);
}

template <typename Scalar>
NetworkParams<Scalar> zeros_like(const NetworkParams<Scalar>& params) {
  NetworkParams<Scalar> z = params;
  z.for_each([](const std::string&, Tensor<Scalar>& t, ParamKind) { t.vec().setZero(); });
  return z;
}

// ---------------------------------------------------------------------------
// Branch gating

Index AvailabilityMask::count() const { return static_cast<Index>(std::count(flags.begin(), flags.end(), true)); }

std::vector<bool> branch_dropout_mask(Index t, double keep_prob, Rng& rng, const AvailabilityMask* eligible) {
  if (t < 1) throw ConfigError("branch dropout needs t >= 1");
  if (!(keep_prob > 0.0) || keep_prob > 1.0) throw ConfigError("branch keep probability must lie in (0, 1]");
  if (eligible && (eligible->size() != t || eligible->count() == 0))
    throw InputError("branch dropout: no eligible branch");
  std::vector<bool> keep(static_cast<std::size_t>(t));
  for (;;) {
    bool any = false;
    for (Index j = 0; j < t; ++j) {
      const bool k = uniform01(rng) < keep_prob && (!eligible || (*eligible)[j]);
      keep[static_cast<std::size_t>(j)] = k;
      any = any || k;
    }
    if (any) return keep;
  }
}

std::vector<double> branch_gates(const NetworkSpec& spec, const AvailabilityMask& mask, Mode mode, Rng& rng) {
  const Index t = spec.timestamps;
  if (mask.size() != t)
    throw InputError("availability mask has " + std::to_string(mask.size()) + " flags, network expects " +
                     std::to_string(t));
  const Index k = mask.count();
  if (k == 0) throw InputError("no available timestamp");
  if (spec.architecture == Architecture::EarlyFusion) return {1.0};

  std::vector<double> gates(static_cast<std::size_t>(t), 0.0);
  if (mode == Mode::Train && spec.missing_data) {
    const double keep = spec.branch_keep_prob();
    const auto kept = branch_dropout_mask(t, keep, rng, &mask);
    for (Index j = 0; j < t; ++j)
      if (kept[static_cast<std::size_t>(j)]) gates[static_cast<std::size_t>(j)] = 1.0 / keep;
  } else {
    const double scale = static_cast<double>(t) / static_cast<double>(k);
    for (Index j = 0; j < t; ++j)
      if (mask[j]) gates[static_cast<std::size_t>(j)] = scale;
  }
  return gates;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Scalar>
Tensor<Scalar> run_stage(const ConvStage& stage, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias,
                         BatchNormParams<Scalar>& bn, const Tensor<Scalar>& input, Mode mode, StageCache<Scalar>* cache) {
  Tensor<Scalar> y = conv2d_forward(input, weights, bias, Extent2{1, 1}, cache ? &cache->conv : nullptr);
  y = batchnorm_forward(y, bn, mode, cache ? &cache->bn : nullptr);
  if (cache) cache->pre_relu = y;
  y = relu_forward(y);
  return maxpool_forward(y, stage.pool_kernel, stage.pool_stride, cache ? &cache->pool : nullptr);
}


template <typename Scalar>
Tensor<Scalar> stage_backward(const StageCache<Scalar>& cache, const Tensor<Scalar>& weights,
                              const BatchNormParams<Scalar>& bn, const Tensor<Scalar>& grad_output,
                              bool want_input_grad, Tensor<Scalar>& dweights, ConvLayerParams<Scalar>& acc) {
  Tensor<Scalar> g = maxpool_backward(cache.pool, grad_output);
  g = relu_backward(cache.pre_relu, g);
  auto bng = batchnorm_backward(cache.bn, bn, g);
  acc.bn.gamma.vec() += bng.gamma.vec();
  acc.bn.beta.vec() += bng.beta.vec();
  auto cg = conv2d_backward(cache.conv, weights, bng.input, want_input_grad);
  dweights.vec() += cg.weights.vec();
  acc.bias.vec() += cg.bias.vec();
  return std::move(cg.input);
}

// Picks the channel blocks of `active` branches out of the first trunk conv.
template <typename Scalar>
Tensor<Scalar> gather_blocks(const Tensor<Scalar>& weights, Index block, const std::vector<Index>& active) {
  const Index k = weights.n(), kk = weights.h() * weights.w();
  const Index span = block * kk;
  Tensor<Scalar> out(Shape{k, block * static_cast<Index>(active.size()), weights.h(), weights.w()});
  for (Index f = 0; f < k; ++f)
    for (std::size_t i = 0; i < active.size(); ++i) {
      const Scalar* src = weights.data() + f * weights.c() * kk + active[i] * span;
      std::copy(src, src + span, out.data() + f * out.c() * kk + static_cast<Index>(i) * span);
    }
  return out;
}

template <typename Scalar>
void scatter_blocks(const Tensor<Scalar>& compact, Index block, const std::vector<Index>& active, Tensor<Scalar>& full) {
  const Index k = full.n(), kk = full.h() * full.w();
  const Index span = block * kk;
  for (Index f = 0; f < k; ++f)
    for (std::size_t i = 0; i < active.size(); ++i) {
      const Scalar* src = compact.data() + f * compact.c() * kk + static_cast<Index>(i) * span;
      Scalar* dst = full.data() + f * full.c() * kk + active[i] * span;
      for (Index e = 0; e < span; ++e) dst[e] += src[e];
    }
}

template <typename Scalar>
Tensor<Scalar> run_trunk(const NetworkSpec& spec, NetworkParams<Scalar>& params, const Tensor<Scalar>& concat,
                         const Tensor<Scalar>* first_weights, Mode mode, Rng& rng, ForwardCache<Scalar>* cache) {
  if (cache) {
    cache->trunk.assign(spec.trunk.size(), {});
    cache->dense.assign(params.dense.size(), {});
    cache->dense_pre_relu.assign(spec.fc_units.size(), {});
    cache->dropout.assign(spec.fc_units.size(), {});
  }
  Tensor<Scalar> x = concat;
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    auto& layer = params.trunk[i];
    const Tensor<Scalar>& w = (i == 0 && first_weights) ? *first_weights : layer.weights;
    x = run_stage(spec.trunk[i], w, layer.bias, layer.bn, x, mode, cache ? &cache->trunk[i] : nullptr);
  }
  if (cache) cache->trunk_output_shape = x.shape();
  const Index n = x.n();
  x = x.reshaped(Shape{n, x.size() / n});
  for (std::size_t i = 0; i < spec.fc_units.size(); ++i) {
    x = dense_forward(x, params.dense[i].weights, params.dense[i].bias, cache ? &cache->dense[i] : nullptr);
    if (cache) cache->dense_pre_relu[i] = x;
    x = relu_forward(x);
    x = dropout_forward(x, spec.fc_keep_prob, rng, mode, cache ? &cache->dropout[i] : nullptr);
  }
  return dense_forward(x, params.dense.back().weights, params.dense.back().bias,
                       cache ? &cache->dense.back() : nullptr);
}

template <typename Scalar>
void check_window(const Tensor<Scalar>& w, Index n, Index ch, Index size, Index j) {
  if (w.rank() != 4 || w.c() != ch || w.h() != size || w.w() != size)
    throw InputError("window batch for timestamp " + std::to_string(j) + " has shape " + w.shape().str());
  if (w.n() != n) throw InputError("batch size differs across timestamps");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> stage_forward(const ConvStage& stage, ConvLayerParams<Scalar>& layer, const Tensor<Scalar>& input,
                             Mode mode, StageCache<Scalar>* cache) {
  return run_stage(stage, layer.weights, layer.bias, layer.bn, input, mode, cache);
}

template <typename Scalar>
Tensor<Scalar> trunk_forward(const NetworkSpec& spec, NetworkParams<Scalar>& params, const Tensor<Scalar>& concat,
                             Mode mode, Rng& rng, ForwardCache<Scalar>* cache) {
  return run_trunk(spec, params, concat, static_cast<const Tensor<Scalar>*>(nullptr), mode, rng, cache);
}

template <typename Scalar>
Tensor<Scalar> forward_gated(const NetworkSpec& spec, NetworkParams<Scalar>& params,
                             std::span<const Tensor<Scalar>> windows, std::span<const double> gates, Mode mode,
                             Rng& rng, ForwardCache<Scalar>* cache) {
  const Index t = spec.timestamps, branches = spec.branch_count();
  if (static_cast<Index>(windows.size()) != t)
    throw InputError("expected " + std::to_string(t) + " window batches, got " + std::to_string(windows.size()));
  if (static_cast<Index>(gates.size()) != branches) throw InputError("gate count does not match branch count");

  std::vector<Index> active;
  for (Index j = 0; j < branches; ++j)
    if (gates[static_cast<std::size_t>(j)] != 0.0) active.push_back(j);
  if (active.empty()) throw InputError("every branch is dropped");

  const Index ch = spec.channels_per_branch, size = spec.window_size;
  Index n = -1;
  for (Index j = 0; j < t; ++j) {
    const auto& w = windows[static_cast<std::size_t>(j)];
    const bool needed = spec.architecture == Architecture::EarlyFusion || gates[static_cast<std::size_t>(j)] != 0.0;
    if (w.empty()) {
      if (needed && spec.architecture == Architecture::MultiBranch)
        throw InputError("missing window batch for active timestamp " + std::to_string(j));
      continue;
    }
    if (n < 0) n = w.n();
    check_window(w, n, ch, size, j);
  }
  if (n < 1) throw InputError("empty batch");

  Tensor<Scalar> fused;
  if (spec.architecture == Architecture::EarlyFusion) {
    fused = Tensor<Scalar>(Shape{n, t * ch, size, size});
    const Index plane = ch * size * size;
    for (Index j = 0; j < t; ++j) {
      const auto& w = windows[static_cast<std::size_t>(j)];
      if (w.empty()) continue;
      for (Index b = 0; b < n; ++b)
        std::copy(w.data() + b * plane, w.data() + (b + 1) * plane, fused.data() + (b * t + j) * plane);
    }
  }

  const bool compact = mode == Mode::Train && static_cast<Index>(active.size()) < branches;
  std::vector<Index> trunk_inputs = active;
  if (!compact) {
    trunk_inputs.resize(static_cast<std::size_t>(branches));
    for (Index j = 0; j < branches; ++j) trunk_inputs[static_cast<std::size_t>(j)] = j;
  }

  if (cache) {
    cache->gates.assign(gates.begin(), gates.end());
    cache->branches.assign(static_cast<std::size_t>(branches), {});
    cache->trunk_inputs = trunk_inputs;
    cache->compacted = compact;
  }

  const ShapeChain chain = shape_chain(spec);
  const StageShape& bshape = chain.at("branch_pool");
  const Index block = bshape.channels, bplane = bshape.height * bshape.width;
  Tensor<Scalar> concat(Shape{n, block * static_cast<Index>(trunk_inputs.size()), bshape.height, bshape.width});
  for (std::size_t slot = 0; slot < trunk_inputs.size(); ++slot) {
    const Index j = trunk_inputs[slot];
    const double gate = gates[static_cast<std::size_t>(j)];
    if (gate == 0.0) continue;
    auto& layer = params.branches[spec.share_branch_params ? 0 : static_cast<std::size_t>(j)];
    const Tensor<Scalar>& in = spec.architecture == Architecture::EarlyFusion ? fused : windows[static_cast<std::size_t>(j)];
    Tensor<Scalar> y = stage_forward(spec.branch, layer, in, mode,
                                     cache ? &cache->branches[static_cast<std::size_t>(j)] : nullptr);
    const Scalar g = static_cast<Scalar>(gate);
    const Index cstride = concat.c() * bplane;
    for (Index b = 0; b < n; ++b) {
      const Scalar* src = y.data() + b * block * bplane;
      Scalar* dst = concat.data() + b * cstride + static_cast<Index>(slot) * block * bplane;
      if (gate == 1.0)
        std::copy(src, src + block * bplane, dst);
      else
        for (Index e = 0; e < block * bplane; ++e) dst[e] = g * src[e];
    }
  }

  Tensor<Scalar> gathered;
  if (compact && !spec.trunk.empty()) gathered = gather_blocks(params.trunk[0].weights, block, trunk_inputs);
  Tensor<Scalar> logits =
      run_trunk(spec, params, concat, compact && !spec.trunk.empty() ? &gathered : nullptr, mode, rng, cache);
  if (cache) cache->valid = true;
  return logits;
}

template <typename Scalar>
Tensor<Scalar> forward(const NetworkSpec& spec, NetworkParams<Scalar>& params, std::span<const Tensor<Scalar>> windows,
                       const AvailabilityMask& mask, Mode mode, Rng& rng, ForwardCache<Scalar>* cache) {
  const auto gates = branch_gates(spec, mask, mode, rng);
  return forward_gated(spec, params, windows, std::span<const double>(gates), mode, rng, cache);
}

template <typename Scalar>
Tensor<Scalar> inference_branch_drop(const NetworkSpec& spec, NetworkParams<Scalar>& params,
                                     std::span<const Tensor<Scalar>> windows, const AvailabilityMask& mask) {
  Rng unused(0);
  return forward(spec, params, windows, mask, Mode::Eval, unused);
}

// ---------------------------------------------------------------------------
// Backward

template <typename Scalar>
NetworkParams<Scalar> backward(const NetworkSpec& spec, const NetworkParams<Scalar>& params,
                               const ForwardCache<Scalar>& cache, const Tensor<Scalar>& grad_logits) {
  if (!cache.valid) throw StateError("network backward called without a forward cache");
  NetworkParams<Scalar> grads = zeros_like(params);

  Tensor<Scalar> g = grad_logits;
  {
    auto dg = dense_backward(cache.dense.back(), params.dense.back().weights, g);
    grads.dense.back().weights = std::move(dg.weights);
    grads.dense.back().bias = std::move(dg.bias);
    g = std::move(dg.input);
  }
  for (std::size_t i = spec.fc_units.size(); i-- > 0;) {
    g = dropout_backward(cache.dropout[i], g);
    g = relu_backward(cache.dense_pre_relu[i], g);
    auto dg = dense_backward(cache.dense[i], params.dense[i].weights, g);
    grads.dense[i].weights = std::move(dg.weights);
    grads.dense[i].bias = std::move(dg.bias);
    g = std::move(dg.input);
  }
  g = g.reshaped(cache.trunk_output_shape);

  const ShapeChain chain = shape_chain(spec);
  const Index block = chain.at("branch_pool").channels;
  for (std::size_t i = spec.trunk.size(); i-- > 0;) {
    const auto& layer = params.trunk[i];
    if (i == 0 && cache.compacted) {
      const Tensor<Scalar> w = gather_blocks(layer.weights, block, cache.trunk_inputs);
      Tensor<Scalar> dw(w.shape());
      g = stage_backward(cache.trunk[i], w, layer.bn, g, true, dw, grads.trunk[i]);
      scatter_blocks(dw, block, cache.trunk_inputs, grads.trunk[i].weights);
    } else {
      g = stage_backward(cache.trunk[i], layer.weights, layer.bn, g, true, grads.trunk[i].weights, grads.trunk[i]);
    }
  }

  const Index n = g.n(), bplane = g.h() * g.w();
  for (std::size_t slot = 0; slot < cache.trunk_inputs.size(); ++slot) {
    const Index j = cache.trunk_inputs[slot];
    const double gate = cache.gates[static_cast<std::size_t>(j)];
    if (gate == 0.0) continue;
    Tensor<Scalar> gb(Shape{n, block, g.h(), g.w()});
    const Scalar s = static_cast<Scalar>(gate);
    for (Index b = 0; b < n; ++b) {
      const Scalar* src = g.data() + b * g.c() * bplane + static_cast<Index>(slot) * block * bplane;
      Scalar* dst = gb.data() + b * block * bplane;
      for (Index e = 0; e < block * bplane; ++e) dst[e] = s * src[e];
    }
    const std::size_t pi = spec.share_branch_params ? 0 : static_cast<std::size_t>(j);
    stage_backward(cache.branches[static_cast<std::size_t>(j)], params.branches[pi].weights, params.branches[pi].bn, gb,
                   false, grads.branches[pi].weights, grads.branches[pi]);
  }
  return grads;
}

// ---------------------------------------------------------------------------

#define MTCN_INSTANTIATE_NETWORK(S)                                                                                 \
  template struct NetworkParams<S>;                                                                                  \
  template NetworkParams<S> build(const NetworkSpec&, Rng&);                                                         \
  template NetworkParams<S> build_2dcnn(Index, Index, Index, Rng&);                                                  \
  template NetworkParams<S> zeros_like(const NetworkParams<S>&);                                                     \
  template Tensor<S> stage_forward(const ConvStage&, ConvLayerParams<S>&, const Tensor<S>&, Mode, StageCache<S>*);   \
  template Tensor<S> trunk_forward(const NetworkSpec&, NetworkParams<S>&, const Tensor<S>&, Mode, Rng&,              \
                                   ForwardCache<S>*);                                                                \
  template Tensor<S> forward_gated(const NetworkSpec&, NetworkParams<S>&, std::span<const Tensor<S>>,                \
                                   std::span<const double>, Mode, Rng&, ForwardCache<S>*);                           \
  template Tensor<S> forward(const NetworkSpec&, NetworkParams<S>&, std::span<const Tensor<S>>,                      \
                             const AvailabilityMask&, Mode, Rng&, ForwardCache<S>*);                                 \
  template Tensor<S> inference_branch_drop(const NetworkSpec&, NetworkParams<S>&, std::span<const Tensor<S>>,        \
                                           const AvailabilityMask&);                                                 \
  template NetworkParams<S> backward(const NetworkSpec&, const NetworkParams<S>&, const ForwardCache<S>&,            \
                                     const Tensor<S>&);

MTCN_INSTANTIATE_NETWORK(float)
MTCN_INSTANTIATE_NETWORK(double)

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;

}  // namespace mtcn
