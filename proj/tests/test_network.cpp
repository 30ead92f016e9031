#include "doctest.h"

#include <cmath>

#include "mtcn/gradcheck.hpp"
#include "mtcn/network.hpp"

using namespace mtcn;

namespace {

NetworkSpec small_spec(Index t, bool missing = false) {
  NetworkSpec s = gradcheck_network_spec();
  s.timestamps = t;
  s.missing_data = missing;
  return s;
}

template <typename S>
std::vector<Tensor<S>> random_windows(const NetworkSpec& spec, Index n, Rng& rng) {
  std::vector<Tensor<S>> out;
  for (Index j = 0; j < spec.timestamps; ++j) {
    Tensor<S> w(Shape{n, spec.channels_per_branch, spec.window_size, spec.window_size});
    for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<S>(uniform01(rng));
    out.push_back(std::move(w));
  }
  return out;
}

template <typename S>
void perturb_bn(NetworkParams<S>& p, Rng& rng) {
  p.for_each([&](const std::string&, Tensor<S>& t, ParamKind kind) {
    if (kind == ParamKind::BnShift || kind == ParamKind::BnScale || kind == ParamKind::Bias)
      for (Index i = 0; i < t.size(); ++i) t[i] += static_cast<S>(0.3 * standard_normal(rng));
    if (kind == ParamKind::BnStatistic)
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(0.5 + uniform01(rng));
  });
}

// Eval forward with explicit post-branch gating, assembled by hand.
template <typename S>
Tensor<S> manual_forward(const NetworkSpec& spec, NetworkParams<S>& params, const std::vector<Tensor<S>>& windows,
                         const std::vector<double>& gates, Mode mode, Rng& rng) {
  const auto chain = shape_chain(spec);
  const auto& b = chain.at("branch_pool");
  const Index n = windows[0].n(), plane = b.channels * b.height * b.width;
  Tensor<S> concat(Shape{n, b.channels * spec.timestamps, b.height, b.width});
  for (Index j = 0; j < spec.timestamps; ++j) {
    if (gates[static_cast<std::size_t>(j)] == 0.0) continue;
    const Tensor<S> y = stage_forward(spec.branch, params.branches[static_cast<std::size_t>(j)],
                                      windows[static_cast<std::size_t>(j)], mode);
    const S g = static_cast<S>(gates[static_cast<std::size_t>(j)]);
    for (Index i = 0; i < n; ++i)
      for (Index e = 0; e < plane; ++e)
        concat[(i * spec.timestamps + j) * plane + e] = g == S(1) ? y[i * plane + e] : g * y[i * plane + e];
  }
  return trunk_forward(spec, params, concat, mode, rng);
}

}  // namespace

TEST_CASE("default spec shape chain is 22-11-8-4-2-1 with a 256-d feature") {
  NetworkSpec spec;
  spec.timestamps = 12;
  const auto chain = shape_chain(spec);
  CHECK(chain.at("branch_conv").height == 22);
  CHECK(chain.at("branch_pool").height == 11);
  CHECK(chain.at("trunk0_conv").height == 8);
  CHECK(chain.at("trunk0_pool").height == 4);
  CHECK(chain.at("trunk1_conv").height == 2);
  CHECK(chain.at("trunk1_pool").height == 1);
  CHECK(chain.at("trunk1_pool").width == 1);
  CHECK(chain.feature_dim == 256);
}

TEST_CASE("t=15 network concatenates to 960x11x11") {
  NetworkSpec spec;
  spec.timestamps = 15;
  spec.num_classes = 4;
  const auto chain = shape_chain(spec);
  CHECK(chain.at("branch_pool").channels == 64);
  CHECK(chain.at("concat").channels == 960);
  CHECK(chain.at("concat").height == 11);
  CHECK(chain.at("trunk0_conv").channels == 128);
  CHECK(chain.at("trunk0_conv").height == 8);
  CHECK(chain.at("trunk0_pool").height == 4);
  CHECK(chain.at("trunk1_conv").channels == 256);
  CHECK(chain.at("trunk1_conv").height == 2);
}

TEST_CASE("t=36 with 39-channel branches and the t=1 degenerate case") {
  NetworkSpec spec;
  spec.timestamps = 36;
  spec.channels_per_branch = 39;
  Rng rng(0);
  const auto p = build<float>(spec, rng);
  CHECK(p.branches.size() == 36);
  CHECK(p.branches[0].weights.shape() == Shape{64, 39, 4, 4});
  CHECK(p.trunk[0].weights.shape() == Shape{128, 64 * 36, 4, 4});

  spec.timestamps = 1;
  spec.channels_per_branch = 3;
  CHECK_NOTHROW(spec.validate());
  CHECK(build<float>(spec, rng).branches.size() == 1);
}

TEST_CASE("collapsed shape chain is a configuration error") {
  NetworkSpec spec;
  spec.window_size = 12;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.window_size = 25;
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("initialization follows the stated scheme") {
  NetworkSpec spec;
  spec.timestamps = 2;
  Rng rng(1);
  const auto p = build<double>(spec, rng);
  CHECK(p.branches[0].bias.vec().isZero());
  CHECK((p.branches[0].bn.gamma.vec().array() == 1.0).all());
  CHECK(p.branches[0].bn.beta.vec().isZero());
  CHECK(p.trunk[1].bn.running_mean.vec().isZero());
  CHECK((p.trunk[1].bn.running_var.vec().array() == 1.0).all());
  // He normal: stddev sqrt(2 / fan_in), fan_in = 128 * 16.
  const auto& w = p.trunk[1].weights.vec();
  const double sd = std::sqrt(w.array().square().mean());
  CHECK(sd == doctest::Approx(std::sqrt(2.0 / (128 * 9))).epsilon(0.02));
}

TEST_CASE("2-D CNN stacks t*ch channels and has fewer branch-stage parameters") {
  Rng rng(2);
  const auto p2d = build_2dcnn<float>(15, 3, 4, rng);
  REQUIRE(p2d.branches.size() == 1);
  CHECK(p2d.branches[0].weights.shape() == Shape{64, 45, 4, 4});
  NetworkSpec spec;
  spec.timestamps = 15;
  spec.num_classes = 4;
  const auto pm = build<float>(spec, rng);
  auto branch_stage = [](const NetworkParams<float>& p) {
    Index n = 0;
    p.for_each([&](const std::string& name, const TensorF& t, ParamKind k) {
      if (name.rfind("branch", 0) == 0 && is_learnable(k)) n += t.size();
    });
    return n;
  };
  CHECK(branch_stage(p2d) < branch_stage(pm));
  CHECK(p2d.trunk[0].weights.shape() == Shape{128, 64, 4, 4});

  const auto p1 = build_2dcnn<float>(1, 3, 4, rng);
  spec.timestamps = 1;
  const auto q1 = build<float>(spec, rng);
  std::vector<Shape> a, b;
  p1.for_each([&](const std::string&, const TensorF& t, ParamKind) { a.push_back(t.shape()); });
  q1.for_each([&](const std::string&, const TensorF& t, ParamKind) { b.push_back(t.shape()); });
  CHECK(a == b);
}

TEST_CASE("identical branches on identical windows give identical blocks") {
  const NetworkSpec spec = small_spec(2);
  Rng rng(3);
  auto p = build<double>(spec, rng);
  perturb_bn(p, rng);
  p.branches[1] = p.branches[0];
  auto windows = random_windows<double>(spec, 3, rng);
  windows[1] = windows[0];
  const TensorD a = stage_forward(spec.branch, p.branches[0], windows[0], Mode::Eval);
  const TensorD b = stage_forward(spec.branch, p.branches[1], windows[1], Mode::Eval);
  CHECK(a.vec() == b.vec());
}

TEST_CASE("zero window batch of one gives finite logits") {
  NetworkSpec spec;
  spec.timestamps = 2;
  spec.num_classes = 4;
  Rng rng(4);
  auto p = build<float>(spec, rng);
  std::vector<TensorF> windows(2, TensorF(Shape{1, 3, 25, 25}));
  const TensorF logits = forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(2), Mode::Eval, rng);
  CHECK(logits.all_finite());
  CHECK(softmax(logits).vec().sum() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("forward input validation") {
  const NetworkSpec spec = small_spec(2);
  Rng rng(5);
  auto p = build<float>(spec, rng);
  auto windows = random_windows<float>(spec, 2, rng);
  CHECK_THROWS_AS(forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask{{false, false}}, Mode::Eval, rng),
                  InputError);
  windows[1] = TensorF(Shape{3, 2, 9, 9});
  CHECK_THROWS_AS(forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(2), Mode::Eval, rng),
                  InputError);
}

TEST_CASE("branch keep probability") {
  NetworkSpec spec;
  spec.timestamps = 12;
  spec.missing_data = true;
  CHECK(spec.branch_keep_prob() == doctest::Approx(1.0 / 12));
  spec.missing_data = false;
  CHECK(spec.branch_keep_prob() == 1.0);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) CHECK(branch_dropout_mask(1, 1.0, rng) == std::vector<bool>{true});
}

TEST_CASE("branch keep frequency matches the conditional-on-nonempty probability") {
  const Index t = 12;
  const double p = 1.0 / 12;
  const double expected = p / (1.0 - std::pow(1.0 - p, static_cast<double>(t)));
  Rng rng(7);
  std::vector<int> kept(t, 0);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) {
    const auto m = branch_dropout_mask(t, p, rng);
    int any = 0;
    for (Index j = 0; j < t; ++j) {
      kept[static_cast<std::size_t>(j)] += m[static_cast<std::size_t>(j)];
      any += m[static_cast<std::size_t>(j)];
    }
    REQUIRE(any > 0);
  }
  for (Index j = 0; j < t; ++j) CHECK(std::abs(kept[static_cast<std::size_t>(j)] / double(draws) - expected) < 0.01);
}

TEST_CASE("branch dropout never keeps an unavailable branch") {
  AvailabilityMask mask{{true, false, true, false}};
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const auto m = branch_dropout_mask(4, 0.25, rng, &mask);
    CHECK_FALSE(m[1]);
    CHECK_FALSE(m[3]);
    CHECK((m[0] || m[2]));
  }
}

TEST_CASE("inference gates scale survivors by t/k") {
  NetworkSpec spec;
  spec.timestamps = 12;
  AvailabilityMask mask{std::vector<bool>(12, false)};
  mask.flags[0] = mask.flags[5] = mask.flags[11] = true;
  Rng rng(9);
  const auto g = branch_gates(spec, mask, Mode::Eval, rng);
  for (Index j = 0; j < 12; ++j) CHECK(g[static_cast<std::size_t>(j)] == (mask[j] ? 4.0 : 0.0));
  const auto full = branch_gates(spec, AvailabilityMask::all(12), Mode::Eval, rng);
  for (double v : full) CHECK(v == 1.0);
  CHECK_THROWS_AS(branch_gates(spec, AvailabilityMask{std::vector<bool>(12, false)}, Mode::Eval, rng), InputError);
}

TEST_CASE("inference branch drop equals zeroing post-branch activations, bit for bit") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NetworkSpec spec = small_spec(4);
    Rng rng(100 + seed);
    auto p = build<float>(spec, rng);
    perturb_bn(p, rng);
    auto windows = random_windows<float>(spec, 3, rng);
    AvailabilityMask mask{{true, false, true, true}};
    if (seed % 2) mask.flags = {false, true, false, false};
    std::vector<double> gates(4, 0.0);
    for (Index j = 0; j < 4; ++j)
      if (mask[j]) gates[static_cast<std::size_t>(j)] = 4.0 / static_cast<double>(mask.count());
    auto q = p;
    const TensorF a = inference_branch_drop(spec, p, std::span<const TensorF>(windows), mask);
    Rng unused(0);
    const TensorF b = manual_forward(spec, q, windows, gates, Mode::Eval, unused);
    REQUIRE(a.shape() == b.shape());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0);
  }
}

TEST_CASE("full mask inference equals the plain eval forward") {
  const NetworkSpec spec = small_spec(3);
  Rng rng(10);
  auto p = build<float>(spec, rng);
  auto windows = random_windows<float>(spec, 2, rng);
  const TensorF a = inference_branch_drop(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(3));
  const TensorF b = forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(3), Mode::Eval, rng);
  CHECK(a.vec() == b.vec());
}

TEST_CASE("dropping a branch differs from feeding it a zero window") {
  const NetworkSpec spec = small_spec(2);
  Rng rng(11);
  auto p = build<double>(spec, rng);
  for (Index c = 0; c < p.branches[1].bn.beta.size(); ++c) p.branches[1].bn.beta[c] = 0.5;
  p.branches[1].bias.vec().setZero();
  auto windows = random_windows<double>(spec, 2, rng);
  const TensorD dropped = inference_branch_drop(spec, p, std::span<const TensorD>(windows), AvailabilityMask{{true, false}});
  auto zeroed = windows;
  zeroed[1] = TensorD(zeroed[1].shape());
  Rng unused(0);
  const TensorD fed_zero = manual_forward(spec, p, zeroed, {2.0, 2.0}, Mode::Eval, unused);
  CHECK((dropped.vec() - fed_zero.vec()).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("permuting branches with their trunk blocks leaves logits unchanged") {
  const NetworkSpec spec = small_spec(3);
  Rng rng(12);
  auto p = build<double>(spec, rng);
  perturb_bn(p, rng);
  auto windows = random_windows<double>(spec, 3, rng);
  const std::vector<Index> perm{2, 0, 1};
  auto q = p;
  auto pw = windows;
  const Index block = spec.branch.filters, kk = 4;
  for (Index j = 0; j < 3; ++j) {
    const auto src = static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]);
    q.branches[static_cast<std::size_t>(j)] = p.branches[src];
    pw[static_cast<std::size_t>(j)] = windows[src];
    auto& dst = q.trunk[0].weights;
    const auto& from = p.trunk[0].weights;
    for (Index f = 0; f < dst.n(); ++f)
      for (Index e = 0; e < block * kk; ++e)
        dst[(f * dst.c() + j * block) * kk + e] = from[(f * from.c() + perm[static_cast<std::size_t>(j)] * block) * kk + e];
  }
  const auto mask = AvailabilityMask::all(3);
  const TensorD a = forward(spec, p, std::span<const TensorD>(windows), mask, Mode::Eval, rng);
  const TensorD b = forward(spec, q, std::span<const TensorD>(pw), mask, Mode::Eval, rng);
  CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dropped branches receive zero gradients") {
  const NetworkSpec spec = small_spec(6, true);
  Rng rng(13);
  auto p = build<float>(spec, rng);
  auto windows = random_windows<float>(spec, 4, rng);
  const std::vector<int> labels{0, 1, 2, 0};
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    ForwardCache<float> cache;
    const TensorF logits = forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(6), Mode::Train, rng, &cache);
    const auto sm = softmax_cross_entropy(logits, labels);
    const auto g = backward(spec, p, cache, softmax_cross_entropy_backward(sm.probabilities, labels));
    for (Index j = 0; j < 6; ++j) {
      const auto& bg = g.branches[static_cast<std::size_t>(j)];
      if (cache.gates[static_cast<std::size_t>(j)] == 0.0) {
        ++checked;
        CHECK(bg.weights.vec().isZero());
        CHECK(bg.bias.vec().isZero());
        CHECK(bg.bn.gamma.vec().isZero());
        CHECK(bg.bn.beta.vec().isZero());
        // The matching trunk-conv input block gets no gradient either.
        const auto& tw = g.trunk[0].weights;
        const Index block = spec.branch.filters, kk = tw.h() * tw.w();
        for (Index f = 0; f < tw.n(); ++f)
          for (Index e = 0; e < block * kk; ++e) CHECK(tw[(f * tw.c() + j * block) * kk + e] == 0.0f);
      } else {
        CHECK_FALSE(bg.weights.vec().isZero());
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("eval forward consumes no randomness") {
  const NetworkSpec spec = small_spec(2, true);
  Rng rng(14);
  auto p = build<float>(spec, rng);
  auto windows = random_windows<float>(spec, 2, rng);
  Rng a(99), b(99);
  const TensorF x = forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(2), Mode::Eval, a);
  const TensorF y = forward(spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(2), Mode::Eval, a);
  CHECK(x.vec() == y.vec());
  CHECK(a() == b());
}

TEST_CASE("compacted train forward matches convolving zero blocks") {
  NetworkSpec spec = small_spec(4);
  spec.fc_keep_prob = 1.0;
  Rng rng(15);
  auto p = build<double>(spec, rng);
  perturb_bn(p, rng);
  auto windows = random_windows<double>(spec, 4, rng);
  const std::vector<double> gates{0.0, 3.0, 0.0, 1.5};
  auto q = p;
  Rng r1(1), r2(1);
  const TensorD a = forward_gated(spec, p, std::span<const TensorD>(windows), std::span<const double>(gates),
                                  Mode::Train, r1);
  const TensorD b = manual_forward(spec, q, windows, gates, Mode::Train, r2);
  CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("parameter names are stable and unique") {
  const NetworkSpec spec = small_spec(2);
  Rng rng(16);
  const auto p = build<float>(spec, rng);
  std::vector<std::string> names;
  p.for_each([&](const std::string& n, const TensorF&, ParamKind) { names.push_back(n); });
  CHECK(names.front() == "branch0/conv/weights");
  CHECK(names.back() == "classifier/bias");
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
}

TEST_CASE("spec json round trip") {
  NetworkSpec spec = small_spec(3, true);
  spec.share_branch_params = true;
  const nlohmann::json j = spec;
  const NetworkSpec back = j.get<NetworkSpec>();
  CHECK(nlohmann::json(back) == j);
}
