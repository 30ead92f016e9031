#ifndef MTCN_TRAINER_HPP
#define MTCN_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtcn/dataset.hpp"
#include "mtcn/network.hpp"

namespace mtcn {

/// Optimization hyperparameters. Defaults are the published schedule
/// (0.01 / 0.0005 / 0.9 / 200k iterations, decay every 50k) plus the
/// unspecified pieces fixed here: halving at each decay, batch 64.
struct TrainingConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  std::int64_t max_iterations = 200000;
  std::int64_t decay_interval = 50000;
  double decay_rate = 0.5;
  Index batch_size = 64;
  std::uint64_t seed = 0;
  bool missing_data_mode = false;
  bool class_balanced = false;
  std::int64_t trace_interval = 100;
  std::int64_t checkpoint_interval = 1000;  // 0 writes only the final checkpoint

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

/// Staircase exponential decay: base * decay_rate^floor(iter / decay_interval).
double lr_schedule(std::int64_t iteration, const TrainingConfig& config);

template <typename Scalar>
struct ParamSlot {
  std::string name;
  Tensor<Scalar>* value = nullptr;
  const Tensor<Scalar>* grad = nullptr;
  Tensor<Scalar>* velocity = nullptr;
  bool decay = false;
};

/// v <- momentum * v - lr * (g + wd * w);  w <- w + v  (wd only where slot.decay).
///
/// All updates are computed before any is committed; a non-finite result
/// throws NumericError and leaves every parameter and velocity untouched.
template <typename Scalar>
void sgd_step(std::span<const ParamSlot<Scalar>> slots, double lr, const TrainingConfig& config);

/// Slots for every learnable tensor; weight decay on conv and dense weights only.
template <typename Scalar>
std::vector<ParamSlot<Scalar>> make_slots(NetworkParams<Scalar>& params, const NetworkParams<Scalar>& grads,
                                          NetworkParams<Scalar>& velocity);

struct Checkpoint {
  NetworkSpec spec;
  TrainingConfig config;
  std::int64_t iteration = 0;
  NetworkParams<float> params;
  NetworkParams<float> velocity;
  std::string rng_state;
  std::uint64_t config_hash = 0;
};

/// FNV-1a over the canonical JSON of everything that shapes the optimization
/// trajectory (spec and config minus iteration count and output cadence).
std::uint64_t config_hash(const NetworkSpec& spec, const TrainingConfig& config);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TraceRow {
  std::int64_t iteration = 0;
  double lr = 0;
  double loss = 0;
  double batch_accuracy = 0;
};

std::string trace_csv(std::span<const TraceRow> rows);

/// Annotated pixels plus the stack their windows come from.
struct TrainingSet {
  const TemporalImageStack* stack = nullptr;
  std::vector<LabeledPixel> pixels;
};

struct TrainOptions {
  std::filesystem::path out_dir;          // empty: keep everything in memory
  const Checkpoint* resume = nullptr;
  std::function<void(const TraceRow&)> on_trace = {};
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TraceRow> trace;
};

/// Mini-batch SGD over uniformly sampled annotated pixels. `config.missing_data_mode`
/// overrides `spec.missing_data`. Writes trace.csv and checkpoints when out_dir is set.
TrainResult train(const NetworkSpec& spec, const TrainingSet& data, const TrainingConfig& config,
                  const TrainOptions& options = {});

}  // namespace mtcn

#endif  // MTCN_TRAINER_HPP
