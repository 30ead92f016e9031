// Command-line front end: synth, train, predict, evaluate, baseline, ablate, gradcheck.

#include <CLI11.hpp>
#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "mtcn/ablation.hpp"
#include "mtcn/baselines.hpp"
#include "mtcn/evaluate.hpp"
#include "mtcn/gradcheck.hpp"
#include "mtcn/synth.hpp"
#include "mtcn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtcn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Every output directory records the exact invocation.
void write_run_config(const fs::path& dir, const std::string& command, const json& flags) {
  fs::create_directories(dir);
  write_text(dir / "config.json", json{{"command", command}, {"flags", flags}}.dump(2) + "\n");
}

std::vector<Index> parse_index_list(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoll(item));
  return out;
}

SplitAssignment make_split(const Dataset& ds, double ratio, std::uint64_t seed) {
  return split_segments(ds.labels, ratio, seed);
}

json split_json(const SplitAssignment& s) { return {{"train", s.train}, {"test", s.test}}; }

}  // namespace

int main(int argc, char** argv) {
  // Large activations are reused every iteration; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Multi-temporal ConvNet for pixelwise vegetation classification"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic phenology dataset");
  SynthConfig sc;
  fs::path synth_out;
  std::string synth_missing, synth_dups;
  Index separable = -1;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", sc.seed, "Random seed");
  synth->add_option("--classes", sc.classes);
  synth->add_option("--segments", sc.segments_per_class, "Segments per class");
  synth->add_option("--size", sc.image_size, "Image width and height");
  synth->add_option("--timestamps", sc.timestamps);
  synth->add_option("--channels", sc.channels);
  synth->add_option("--noise", sc.noise);
  synth->add_option("--year", sc.year, "Noise realization; layout is shared across years");
  synth->add_option("--missing", synth_missing, "Comma-separated unavailable timestamps");
  synth->add_option("--separable", separable, "Timestamp at which every class gets its own color");
  synth->add_option("--duplicate", synth_dups, "src:dst pairs, comma-separated");

  // train
  auto* tr = app.add_subcommand("train", "Train a network on the training segments");
  fs::path tr_manifest, tr_out, tr_resume;
  TrainingConfig tc;
  tc.max_iterations = 5000;
  double tr_ratio = 0.8;
  std::string arch = "mtcn";
  tr->add_option("--manifest", tr_manifest)->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--iters", tc.max_iterations, "Iterations (default 5000)");
  tr->add_option("--seed", seed);
  tr->add_flag("--missing-data", tc.missing_data_mode, "Branch dropout with keep probability 1/t");
  tr->add_flag("--class-balanced", tc.class_balanced);
  tr->add_option("--batch", tc.batch_size);
  tr->add_option("--lr", tc.learning_rate);
  tr->add_option("--weight-decay", tc.weight_decay);
  tr->add_option("--momentum", tc.momentum);
  tr->add_option("--decay-interval", tc.decay_interval);
  tr->add_option("--trace-interval", tc.trace_interval);
  tr->add_option("--checkpoint-interval", tc.checkpoint_interval);
  tr->add_option("--split-ratio", tr_ratio);
  tr->add_option("--arch", arch, "mtcn or 2dcnn")->check(CLI::IsMember({"mtcn", "2dcnn"}));
  tr->add_option("--resume", tr_resume)->check(CLI::ExistingFile);

  // predict
  auto* pr = app.add_subcommand("predict", "Classify every annotated pixel");
  fs::path pr_ckpt, pr_manifest, pr_out;
  pr->add_option("--checkpoint", pr_ckpt)->required()->check(CLI::ExistingFile);
  pr->add_option("--manifest", pr_manifest)->required()->check(CLI::ExistingFile);
  pr->add_option("--out", pr_out)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Average accuracy and confusion matrix");
  fs::path ev_ckpt, ev_manifest, ev_out;
  std::string ev_split = "test";
  double ev_ratio = 0.8;
  std::optional<std::uint64_t> ev_seed;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"test", "train", "all"}));
  ev->add_option("--split-ratio", ev_ratio);
  ev->add_option("--seed", ev_seed, "Split seed (defaults to the training seed)");
  ev->add_option("--out", ev_out, "Directory for report.json and confusion.csv");

  // baseline
  auto* bl = app.add_subcommand("baseline", "Recurrence plot + LBP + linear classifier");
  fs::path bl_manifest, bl_out;
  double bl_ratio = 0.8;
  LinearClassifierConfig lc;
  bl->add_option("--manifest", bl_manifest)->required()->check(CLI::ExistingFile);
  bl->add_option("--out", bl_out);
  bl->add_option("--seed", seed);
  bl->add_option("--iters", lc.iterations);
  bl->add_option("--split-ratio", bl_ratio);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Per-timestamp models and low-correlation subsets");
  fs::path ab_manifest, ab_out;
  std::string ab_sizes;
  TrainingConfig atc;
  atc.max_iterations = 2000;
  double ab_ratio = 0.8;
  bool ab_no_retrain = false;
  ab->add_option("--manifest", ab_manifest)->required()->check(CLI::ExistingFile);
  ab->add_option("--out", ab_out)->required();
  ab->add_option("--sizes", ab_sizes, "Comma-separated subset sizes (default 2..t)");
  ab->add_option("--iters", atc.max_iterations);
  ab->add_option("--batch", atc.batch_size);
  ab->add_option("--seed", seed);
  ab->add_option("--split-ratio", ab_ratio);
  ab->add_flag("--no-retrain", ab_no_retrain, "Only select subsets");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite (64-bit)");
  gc->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      for (Index j : parse_index_list(synth_missing)) sc.missing.push_back(j);
      if (separable >= 0) sc.separable_timestamp = separable;
      std::stringstream ss(synth_dups);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("duplicate pairs look like src:dst");
        sc.duplicates.emplace_back(std::stoll(item.substr(0, colon)), std::stoll(item.substr(colon + 1)));
      }
      const auto manifest = synth_generate(sc, synth_out);
      write_run_config(synth_out, "synth",
                       {{"seed", sc.seed}, {"classes", sc.classes}, {"segments", sc.segments_per_class},
                        {"size", sc.image_size}, {"timestamps", sc.timestamps}, {"channels", sc.channels},
                        {"noise", sc.noise}, {"year", sc.year}, {"missing", sc.missing},
                        {"separable", separable}, {"duplicate", synth_dups}});
      std::cout << manifest.string() << "\n";
    } else if (*tr) {
      tc.seed = seed;
      const Dataset ds = load_dataset(tr_manifest);
      const auto split = make_split(ds, tr_ratio, seed);
      NetworkSpec spec;
      if (arch == "2dcnn") {
        spec = two_d_cnn_spec(ds.stack.size(), ds.stack.channels, ds.labels.num_classes());
      } else {
        spec.timestamps = ds.stack.size();
        spec.channels_per_branch = ds.stack.channels;
        spec.num_classes = ds.labels.num_classes();
      }
      write_run_config(tr_out, "train",
                       {{"manifest", fs::absolute(tr_manifest).string()}, {"seed", seed}, {"arch", arch},
                        {"split_ratio", tr_ratio}, {"training", tc}, {"network", spec},
                        {"resume", tr_resume.string()}});
      write_text(tr_out / "split.json", split_json(split).dump() + "\n");
      std::optional<Checkpoint> resume;
      TrainOptions opts;
      opts.out_dir = tr_out;
      if (!tr_resume.empty()) {
        resume = load_checkpoint(tr_resume);
        opts.resume = &*resume;
      }
      opts.on_trace = [](const TraceRow& r) {
        std::fprintf(stderr, "iter %lld  lr %.5g  loss %.4f  acc %.3f\n", static_cast<long long>(r.iteration), r.lr,
                     r.loss, r.batch_accuracy);
      };
      train(spec, TrainingSet{&ds.stack, annotated_pixels(ds.labels, &split.train)}, tc, opts);
      std::cout << (tr_out / "final.mtcn").string() << "\n";
    } else if (*pr) {
      const Checkpoint ck = load_checkpoint(pr_ckpt);
      const Dataset ds = load_dataset(pr_manifest);
      const auto map = predict_map(ck, ds, ds.stack.availability());
      write_run_config(pr_out, "predict",
                       {{"checkpoint", fs::absolute(pr_ckpt).string()}, {"manifest", fs::absolute(pr_manifest).string()}});
      write_png(pr_out / "prediction.png", render_map(map, ds.labels.palette));
      write_text(pr_out / "predictions.csv", prediction_csv(map));
    } else if (*ev) {
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const Dataset ds = load_dataset(ev_manifest);
      std::vector<LabeledPixel> pixels;
      if (ev_split == "all") {
        pixels = annotated_pixels(ds.labels);
      } else {
        const auto split = make_split(ds, ev_ratio, ev_seed.value_or(ck.config.seed));
        pixels = annotated_pixels(ds.labels, ev_split == "test" ? &split.test : &split.train);
      }
      NetworkParams<float> params = ck.params;
      const auto report = evaluate_pixels(ck.spec, params, ds.stack, ds.stack.availability(), pixels);
      const std::string text = json(report).dump(2) + "\n";
      if (!ev_out.empty()) {
        write_run_config(ev_out, "evaluate",
                         {{"checkpoint", fs::absolute(ev_ckpt).string()},
                          {"manifest", fs::absolute(ev_manifest).string()}, {"split", ev_split},
                          {"split_ratio", ev_ratio}, {"seed", ev_seed.value_or(ck.config.seed)}});
        write_text(ev_out / "report.json", text);
        write_text(ev_out / "confusion.csv", confusion_csv(report));
      }
      std::cout << text;
    } else if (*bl) {
      lc.seed = seed;
      const Dataset ds = load_dataset(bl_manifest);
      const auto split = make_split(ds, bl_ratio, seed);
      const auto train_px = annotated_pixels(ds.labels, &split.train);
      const auto test_px = annotated_pixels(ds.labels, &split.test);
      std::vector<int> train_labels, test_labels;
      for (const auto& p : train_px) train_labels.push_back(p.label);
      for (const auto& p : test_px) test_labels.push_back(p.label);
      const auto model = LinearClassifier::fit(rp_lbp_features(ds.stack, train_px), train_labels,
                                               ds.labels.num_classes(), lc);
      const auto preds = model.predict(rp_lbp_features(ds.stack, test_px));
      const auto report = evaluate_predictions(preds, test_labels, ds.labels.num_classes());
      const std::string text = json(report).dump(2) + "\n";
      if (!bl_out.empty()) {
        write_run_config(bl_out, "baseline",
                         {{"manifest", fs::absolute(bl_manifest).string()}, {"seed", seed}, {"iters", lc.iterations},
                          {"split_ratio", bl_ratio}});
        write_text(bl_out / "report.json", text);
        write_text(bl_out / "confusion.csv", confusion_csv(report));
      }
      std::cout << text;
    } else if (*ab) {
      atc.seed = seed;
      atc.trace_interval = std::max<std::int64_t>(1, atc.max_iterations);
      atc.checkpoint_interval = 0;
      const Dataset ds = load_dataset(ab_manifest);
      const auto split = make_split(ds, ab_ratio, seed);
      AblationConfig cfg;
      cfg.spec.channels_per_branch = ds.stack.channels;
      cfg.spec.num_classes = ds.labels.num_classes();
      cfg.training = atc;
      cfg.validation_seed = seed;
      cfg.sizes = parse_index_list(ab_sizes);
      cfg.retrain_subsets = !ab_no_retrain;
      cfg.log = [](const std::string& s) { std::cerr << s << "\n"; };
      write_run_config(ab_out, "ablate",
                       {{"manifest", fs::absolute(ab_manifest).string()}, {"seed", seed}, {"sizes", cfg.sizes},
                        {"split_ratio", ab_ratio}, {"training", atc}, {"retrain", cfg.retrain_subsets}});
      const auto result = ablate(ds, split, cfg);
      write_text(ab_out / "ablation.json", json(result).dump(2) + "\n");
      const std::string table = ranking_table(result);
      write_text(ab_out / "ranking.tsv", table);
      std::cout << table;
    } else if (*gc) {
      bool ok = true;
      for (const auto& r : run_gradcheck_suite(seed)) {
        std::printf("%-4s %-48s %.3e (tol %.0e)\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.max_relative_error,
                    r.tolerance);
        ok = ok && r.passed;
      }
      return ok ? kOk : kNumeric;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
