#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtcn/gradcheck.hpp"
#include "mtcn/synth.hpp"
#include "mtcn/trainer.hpp"

using namespace mtcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtcn_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Dataset tiny_dataset(Index timestamps = 2, Index classes = 2) {
  SynthConfig sc;
  sc.classes = classes;
  sc.segments_per_class = 3;
  sc.image_size = 24;
  sc.timestamps = timestamps;
  sc.seed = 5;
  return synth_dataset(sc);
}

NetworkSpec tiny_spec(Index t, Index classes = 2) {
  NetworkSpec s = gradcheck_network_spec();
  s.timestamps = t;
  s.channels_per_branch = 3;
  s.num_classes = classes;
  return s;
}

TrainingConfig quick_config(std::int64_t iters) {
  TrainingConfig c;
  c.max_iterations = iters;
  c.batch_size = 8;
  c.seed = 3;
  c.trace_interval = 5;
  c.checkpoint_interval = 0;
  return c;
}

std::vector<float> flatten(const NetworkParams<float>& p) {
  std::vector<float> out;
  p.for_each([&](const std::string&, const TensorF& t, ParamKind) { out.insert(out.end(), t.data(), t.data() + t.size()); });
  return out;
}

}  // namespace

TEST_CASE("staircase learning rate") {
  TrainingConfig c;
  CHECK(lr_schedule(0, c) == doctest::Approx(0.01));
  CHECK(lr_schedule(49999, c) == doctest::Approx(0.01));
  CHECK(lr_schedule(50000, c) == doctest::Approx(0.005));
  CHECK(lr_schedule(199999, c) == doctest::Approx(0.00125));
}

TEST_CASE("single sgd step closed form") {
  TrainingConfig c;
  TensorD w = TensorD::constant({1}, 1.0), g = TensorD::constant({1}, 0.1), v(Shape{1});
  const std::vector<ParamSlot<double>> slots{{"w", &w, &g, &v, true}};
  sgd_step(std::span<const ParamSlot<double>>(slots), 0.01, c);
  // v = 0.9 * 0 - 0.01 * (0.1 + 0.0005 * 1)
  CHECK(v[0] == doctest::Approx(-0.001005).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(0.998995).epsilon(1e-12));
}

TEST_CASE("zero gradient without decay coasts on momentum") {
  TrainingConfig c;
  c.weight_decay = 0;
  TensorD w = TensorD::constant({3}, 2.0), g(Shape{3}), v = TensorD::constant({3}, 0.5);
  const std::vector<ParamSlot<double>> slots{{"w", &w, &g, &v, true}};
  sgd_step(std::span<const ParamSlot<double>>(slots), 0.01, c);
  for (Index i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(2.0 + 0.9 * 0.5));
}

TEST_CASE("weight decay alone shrinks weight norms every step, never biases") {
  TrainingConfig c;
  Rng rng(1);
  TensorD w(Shape{10}), g(Shape{10}), v(Shape{10});
  for (Index i = 0; i < 10; ++i) w[i] = standard_normal(rng);
  TensorD b = TensorD::constant({4}, 1.0), gb(Shape{4}), vb(Shape{4});
  const std::vector<ParamSlot<double>> slots{{"w", &w, &g, &v, true}, {"b", &b, &gb, &vb, false}};
  double prev = w.vec().norm();
  for (int step = 0; step < 50; ++step) {
    sgd_step(std::span<const ParamSlot<double>>(slots), 0.01, c);
    CHECK(w.vec().norm() < prev);
    prev = w.vec().norm();
  }
  CHECK((b.vec().array() == 1.0).all());
}

TEST_CASE("non-finite update is rejected without touching any parameter") {
  TrainingConfig c;
  TensorD w1 = TensorD::constant({2}, 1.0), g1 = TensorD::constant({2}, 0.1), v1(Shape{2});
  TensorD w2 = TensorD::constant({2}, 1.0), g2 = TensorD::constant({2}, 0.1), v2(Shape{2});
  g2[1] = std::numeric_limits<double>::quiet_NaN();
  const std::vector<ParamSlot<double>> slots{{"a", &w1, &g1, &v1, true}, {"b", &w2, &g2, &v2, true}};
  CHECK_THROWS_AS(sgd_step(std::span<const ParamSlot<double>>(slots), 0.01, c), NumericError);
  CHECK((w1.vec().array() == 1.0).all());
  CHECK(v1.vec().isZero());
  CHECK((w2.vec().array() == 1.0).all());
}

TEST_CASE("weight decay applies to conv and dense weights only") {
  const NetworkSpec spec = tiny_spec(2);
  Rng rng(2);
  auto p = build<float>(spec, rng);
  const auto g = zeros_like(p);
  auto v = zeros_like(p);
  for (const auto& s : make_slots(p, g, v)) {
    const bool is_weight = s.name.ends_with("weights");
    CHECK(s.decay == is_weight);
    CHECK(s.name.find("running") == std::string::npos);
  }
}

TEST_CASE("a small step lowers the loss on a fixed batch") {
  NetworkSpec spec = tiny_spec(2);
  spec.fc_keep_prob = 1.0;
  Rng rng(3);
  auto p = build<double>(spec, rng);
  std::vector<TensorD> windows;
  for (int j = 0; j < 2; ++j) {
    TensorD w(Shape{8, 3, 9, 9});
    for (Index i = 0; i < w.size(); ++i) w[i] = uniform01(rng);
    windows.push_back(w);
  }
  const std::vector<int> labels{0, 1, 0, 1, 1, 0, 0, 1};
  auto loss_and_grad = [&](NetworkParams<double>& params, NetworkParams<double>* grads) {
    auto q = params;  // keep running statistics out of the comparison
    ForwardCache<double> cache;
    Rng r(0);
    const TensorD logits = forward(spec, q, std::span<const TensorD>(windows), AvailabilityMask::all(2), Mode::Train, r, &cache);
    const auto sm = softmax_cross_entropy(logits, labels);
    if (grads) *grads = backward(spec, q, cache, softmax_cross_entropy_backward(sm.probabilities, labels));
    return sm.loss;
  };
  NetworkParams<double> grads;
  const double before = loss_and_grad(p, &grads);
  auto v = zeros_like(p);
  TrainingConfig c;
  const auto slots = make_slots(p, grads, v);
  sgd_step(std::span<const ParamSlot<double>>(slots), 1e-4, c);
  CHECK(loss_and_grad(p, nullptr) < before);
}

TEST_CASE("zero iterations returns the initial parameters and an empty trace") {
  const Dataset ds = tiny_dataset();
  const auto r = train(tiny_spec(2), TrainingSet{&ds.stack, annotated_pixels(ds.labels)}, quick_config(0));
  CHECK(r.trace.empty());
  CHECK(r.checkpoint.iteration == 0);
  Rng rng(3);
  CHECK(flatten(r.checkpoint.params) == flatten(build<float>(tiny_spec(2), rng)));
}

TEST_CASE("training input validation") {
  const Dataset ds = tiny_dataset();
  CHECK_THROWS_AS(train(tiny_spec(2), TrainingSet{&ds.stack, {}}, quick_config(1)), InputError);
  auto px = annotated_pixels(ds.labels);
  std::erase_if(px, [](const LabeledPixel& p) { return p.label == 1; });
  CHECK_THROWS_AS(train(tiny_spec(2), TrainingSet{&ds.stack, px}, quick_config(1)), InputError);
  CHECK_THROWS_AS(train(tiny_spec(3), TrainingSet{&ds.stack, annotated_pixels(ds.labels)}, quick_config(1)), ConfigError);
  TrainingConfig bad = quick_config(1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(tiny_spec(2), TrainingSet{&ds.stack, annotated_pixels(ds.labels)}, bad), ConfigError);
}

TEST_CASE("identical seeds give byte-identical traces and checkpoints") {
  const Dataset ds = tiny_dataset();
  const TrainingSet data{&ds.stack, annotated_pixels(ds.labels)};
  auto c = quick_config(20);
  c.checkpoint_interval = 10;
  const auto a = scratch("det_a"), b = scratch("det_b");
  train(tiny_spec(2), data, c, {a});
  train(tiny_spec(2), data, c, {b});
  for (const char* f : {"trace.csv", "checkpoint_00000010.mtcn", "final.mtcn"}) {
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "trace.csv").starts_with("iteration,lr,loss,batch_accuracy\n"));
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const Dataset ds = tiny_dataset();
  const TrainingSet data{&ds.stack, annotated_pixels(ds.labels)};
  auto c = quick_config(30);
  c.missing_data_mode = true;
  const auto full = train(tiny_spec(2), data, c);
  auto half = c;
  half.max_iterations = 15;
  const auto dir = scratch("resume");
  train(tiny_spec(2), data, half, {dir});
  const Checkpoint mid = load_checkpoint(dir / "final.mtcn");
  CHECK(mid.iteration == 15);
  TrainOptions opts;
  opts.resume = &mid;
  const auto resumed = train(tiny_spec(2), data, c, opts);
  CHECK(flatten(resumed.checkpoint.params) == flatten(full.checkpoint.params));
  CHECK(flatten(resumed.checkpoint.velocity) == flatten(full.checkpoint.velocity));

  auto other = c;
  other.learning_rate = 0.02;
  CHECK_THROWS_AS(train(tiny_spec(2), data, other, opts), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
  const Dataset ds = tiny_dataset();
  const auto r = train(tiny_spec(2), TrainingSet{&ds.stack, annotated_pixels(ds.labels)}, quick_config(3));
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "a.mtcn", r.checkpoint);
  const Checkpoint back = load_checkpoint(dir / "a.mtcn");
  CHECK(back.iteration == 3);
  CHECK(back.config_hash == r.checkpoint.config_hash);
  CHECK(flatten(back.params) == flatten(r.checkpoint.params));
  CHECK(back.rng_state == r.checkpoint.rng_state);
  CHECK(slurp(dir / "a.mtcn").substr(0, 4) == "MTCN");

  std::string bytes = slurp(dir / "a.mtcn");
  bytes[0] = 'X';
  std::ofstream(dir / "bad.mtcn", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.mtcn"), DataError);
  std::ofstream(dir / "short.mtcn", std::ios::binary) << slurp(dir / "a.mtcn").substr(0, 100);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.mtcn"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.mtcn"), DataError);
}

TEST_CASE("diverging training stops with a numeric error and keeps the last good state") {
  const Dataset ds = tiny_dataset();
  auto c = quick_config(50);
  c.learning_rate = 1e30;
  const auto dir = scratch("nan");
  CHECK_THROWS_AS(train(tiny_spec(2), TrainingSet{&ds.stack, annotated_pixels(ds.labels)}, c, {dir}), NumericError);
  REQUIRE(fs::exists(dir / "last_good.mtcn"));
  const Checkpoint last = load_checkpoint(dir / "last_good.mtcn");
  CHECK(last.params.branches[0].weights.all_finite());
}

TEST_CASE("separable two-class data is fit almost perfectly") {
  SynthConfig sc;
  sc.classes = 2;
  sc.segments_per_class = 4;
  sc.image_size = 32;
  sc.timestamps = 2;
  sc.separable_timestamp = 0;
  const Dataset ds = synth_dataset(sc);
  const auto px = annotated_pixels(ds.labels);
  auto c = quick_config(2000);
  c.batch_size = 16;
  c.trace_interval = 2000;
  const auto r = train(tiny_spec(2), TrainingSet{&ds.stack, px}, c);
  NetworkParams<float> p = r.checkpoint.params;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < px.size(); start += 64) {
    const std::span<const LabeledPixel> chunk(px.data() + start, std::min<std::size_t>(64, px.size() - start));
    const auto windows = assemble_batch(ds.stack, chunk, 9);
    const TensorF logits = inference_branch_drop(r.checkpoint.spec, p, std::span<const TensorF>(windows), AvailabilityMask::all(2));
    const auto m = logits.matrix(static_cast<Index>(chunk.size()), 2);
    for (Index i = 0; i < m.rows(); ++i) {
      Index arg;
      m.row(i).maxCoeff(&arg);
      correct += arg == chunk[static_cast<std::size_t>(i)].label;
    }
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(px.size()) > 0.99);
}

TEST_CASE("training config json round trip and hash") {
  TrainingConfig c = quick_config(10);
  c.missing_data_mode = true;
  const nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<TrainingConfig>()) == j);
  auto longer = c;
  longer.max_iterations = 99;
  longer.trace_interval = 7;
  CHECK(config_hash(tiny_spec(2), c) == config_hash(tiny_spec(2), longer));
  auto other = c;
  other.seed = 4;
  CHECK(config_hash(tiny_spec(2), c) != config_hash(tiny_spec(2), other));
}
