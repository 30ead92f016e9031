#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtcn/ablation.hpp"
#include "mtcn/evaluate.hpp"
#include "mtcn/gradcheck.hpp"
#include "mtcn/synth.hpp"

using namespace mtcn;

namespace {

NetworkSpec tiny_spec(Index classes) {
  NetworkSpec s = gradcheck_network_spec();
  s.channels_per_branch = 3;
  s.num_classes = classes;
  return s;
}

RowMatrix<double> corr(std::initializer_list<std::initializer_list<double>> rows) {
  RowMatrix<double> m(static_cast<Index>(rows.size()), static_cast<Index>(rows.size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("subset selection") {
  const auto two = corr({{1, 0.4}, {0.4, 1}});
  CHECK(select_subset(two, 2) == std::vector<Index>{0, 1});

  const auto four = corr({{1, 0.9, 0.2, 0.5},   //
                          {0.9, 1, 0.3, 0.1},   //
                          {0.2, 0.3, 1, 0.8},   //
                          {0.5, 0.1, 0.8, 1}});
  CHECK(select_subset(four, 2) == std::vector<Index>{1, 3});
  CHECK(select_subset(four, 2, 0) == std::vector<Index>{1, 3});
  // {0,1,2}: 1.4, {0,1,3}: 1.5, {0,2,3}: 1.5, {1,2,3}: 1.2
  CHECK(select_subset(four, 3) == std::vector<Index>{1, 2, 3});
  CHECK(mean_pairwise(four, std::vector<Index>{1, 2, 3}) == doctest::Approx(0.4));

  // Ties resolve to the lexicographically first subset.
  const auto flat = corr({{1, 0.5, 0.5}, {0.5, 1, 0.5}, {0.5, 0.5, 1}});
  CHECK(select_subset(flat, 2) == std::vector<Index>{0, 1});
}

TEST_CASE("greedy selection never beats exhaustive search") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 6;
    RowMatrix<double> c = RowMatrix<double>::Ones(n, n);
    for (Index a = 0; a < n; ++a)
      for (Index b = a + 1; b < n; ++b) c(a, b) = c(b, a) = uniform01(rng);
    for (Index m = 2; m <= n; ++m) {
      const auto ex = select_subset(c, m);
      const auto gr = select_subset(c, m, 0);
      CHECK(static_cast<Index>(ex.size()) == m);
      CHECK(static_cast<Index>(gr.size()) == m);
      CHECK(mean_pairwise(c, ex) <= mean_pairwise(c, gr) + 1e-12);
    }
  }
}

TEST_CASE("ablation on a small scene") {
  SynthConfig sc;
  sc.classes = 3;
  sc.segments_per_class = 6;
  sc.image_size = 48;
  sc.timestamps = 4;
  sc.separable_timestamp = 2;
  sc.duplicates = {{0, 1}};
  const Dataset ds = synth_dataset(sc);
  const SplitAssignment split = split_segments(ds.labels, 0.8, 1);

  AblationConfig cfg;
  cfg.spec = tiny_spec(3);
  cfg.training.max_iterations = 1500;
  cfg.training.batch_size = 16;
  cfg.training.seed = 5;
  cfg.training.trace_interval = 1000;
  cfg.training.checkpoint_interval = 0;
  cfg.validation_fraction = 0.3;
  cfg.sizes = {2, 4};
  const AblationResult r = ablate(ds, split, cfg);

  REQUIRE(r.singles.size() == 4);
  CHECK(r.correlation.rows() == 4);
  CHECK(r.correlation == r.correlation.transpose());
  // Identical images and identical training give identical models.
  CHECK(r.correlation(0, 1) == 1.0);
  CHECK(r.singles[0].validation_predictions == r.singles[1].validation_predictions);
  CHECK(r.single_ranking.front() == 2);
  CHECK(r.singles[2].validation_accuracy >= 99.0);

  REQUIRE(r.subsets.size() == 2);
  const auto& pair = r.subsets[0].timestamps;
  CHECK_FALSE((pair == std::vector<Index>{0, 1}));
  CHECK(r.subsets[1].timestamps == std::vector<Index>{0, 1, 2, 3});

  // The full subset is exactly a regular training run on the training segments.
  NetworkSpec spec = cfg.spec;
  spec.timestamps = 4;
  const auto train_px = annotated_pixels(ds.labels, &split.train);
  const auto test_px = annotated_pixels(ds.labels, &split.test);
  const TrainResult full = train(spec, TrainingSet{&ds.stack, train_px}, cfg.training);
  NetworkParams<float> p = full.checkpoint.params;
  const auto report = evaluate_pixels(full.checkpoint.spec, p, ds.stack, ds.stack.availability(), test_px);
  REQUIRE(r.subsets[1].test_report.has_value());
  CHECK(r.subsets[1].test_report->confusion == report.confusion);

  const nlohmann::json j = r;
  CHECK(j["singles"].size() == 4);
  CHECK(ranking_table(r).rfind("size\t", 0) == 0);

  cfg.sizes = {5};
  CHECK_THROWS_AS(ablate(ds, split, cfg), ConfigError);
}

TEST_CASE("prediction maps") {
  SynthConfig sc;
  sc.classes = 2;
  sc.segments_per_class = 3;
  sc.image_size = 24;
  sc.timestamps = 2;
  const Dataset ds = synth_dataset(sc);
  NetworkSpec spec = tiny_spec(2);
  spec.timestamps = 2;
  TrainingConfig tc;
  tc.max_iterations = 5;
  tc.batch_size = 8;
  tc.trace_interval = 1000;
  tc.checkpoint_interval = 0;
  const auto ck = train(spec, TrainingSet{&ds.stack, annotated_pixels(ds.labels)}, tc).checkpoint;
  const auto map = predict_map(ck, ds, ds.stack.availability());
  CHECK(map.pixels.size() == map.predictions.size());
  const RawImage img = render_map(map, ds.labels.palette);
  for (Index y = 0; y < map.height; ++y)
    for (Index x = 0; x < map.width; ++x) {
      if (ds.labels.label(x, y) != kBackground) continue;
      for (int c = 0; c < 3; ++c) CHECK(img.at(static_cast<int>(x), static_cast<int>(y), c) == 0);
    }
  CHECK(prediction_csv(map).rfind("x,y,label,prediction\n", 0) == 0);

  const auto dir = std::filesystem::temp_directory_path() / "mtcn_test_prediction_maps";
  std::filesystem::create_directories(dir);
  write_png(dir / "a.png", img);
  write_png(dir / "b.png", render_map(predict_map(ck, ds, ds.stack.availability()), ds.labels.palette));
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  std::filesystem::remove_all(dir);

  AvailabilityMask mask = ds.stack.availability();
  Dataset missing = ds;
  missing.stack.timestamps[1].available = false;
  missing.stack.timestamps[1].image = TensorF();
  CHECK_THROWS_AS(predict_map(ck, missing, mask), DataError);
}

TEST_CASE("the least correlated pair beats the worst pair") {
  // With four timestamps a quarter cycle apart, timestamps j and j+2 leave the
  // same class pair ambiguous, so some pairs cannot separate every class.
  SynthConfig sc;
  sc.classes = 4;
  sc.segments_per_class = 8;
  sc.image_size = 56;
  sc.timestamps = 4;
  const Dataset ds = synth_dataset(sc);
  const SplitAssignment split = split_segments(ds.labels, 0.75, 2);

  AblationConfig cfg;
  cfg.spec = tiny_spec(4);
  cfg.training.max_iterations = 1500;
  cfg.training.batch_size = 16;
  cfg.training.seed = 5;
  cfg.training.trace_interval = 1500;
  cfg.training.checkpoint_interval = 0;
  cfg.validation_fraction = 0.3;
  cfg.sizes = {2};
  const AblationResult r = ablate(ds, split, cfg);
  REQUIRE(r.subsets.front().test_report.has_value());
  const double selected = r.subsets.front().test_report->average_accuracy;

  NetworkSpec spec = cfg.spec;
  spec.timestamps = 2;
  const auto train_px = annotated_pixels(ds.labels, &split.train);
  const auto test_px = annotated_pixels(ds.labels, &split.test);
  double worst = 101;
  for (Index a = 0; a < 4; ++a)
    for (Index b = a + 1; b < 4; ++b) {
      const Index keep[] = {a, b};
      const TemporalImageStack sub = ds.stack.subset(keep);
      const auto tr = train(spec, TrainingSet{&sub, train_px}, cfg.training);
      NetworkParams<float> p = tr.checkpoint.params;
      worst = std::min(worst, evaluate_pixels(spec, p, sub, sub.availability(), test_px).average_accuracy);
    }
  MESSAGE("selected pair " << r.subsets.front().timestamps[0] << "," << r.subsets.front().timestamps[1] << ": "
                           << selected << "%, worst pair " << worst << "%");
  CHECK(selected > worst);
}
