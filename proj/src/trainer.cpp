#include "mtcn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mtcn {

namespace fs = std::filesystem;

void TrainingConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (max_iterations < 0) throw ConfigError("iteration count must be non-negative");
  if (decay_interval < 1) throw ConfigError("decay interval must be >= 1");
  if (!(decay_rate > 0)) throw ConfigError("decay rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (trace_interval < 1) throw ConfigError("trace interval must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint interval must be >= 0");
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"momentum", c.momentum},
       {"max_iterations", c.max_iterations},
       {"decay_interval", c.decay_interval},
       {"decay_rate", c.decay_rate},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"missing_data_mode", c.missing_data_mode},
       {"class_balanced", c.class_balanced},
       {"trace_interval", c.trace_interval},
       {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  TrainingConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.momentum = j.value("momentum", d.momentum);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.decay_interval = j.value("decay_interval", d.decay_interval);
  c.decay_rate = j.value("decay_rate", d.decay_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.missing_data_mode = j.value("missing_data_mode", d.missing_data_mode);
  c.class_balanced = j.value("class_balanced", d.class_balanced);
  c.trace_interval = j.value("trace_interval", d.trace_interval);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
}

double lr_schedule(std::int64_t iteration, const TrainingConfig& config) {
  if (iteration < 0) throw InputError("negative iteration");
  const auto steps = iteration / config.decay_interval;
  return config.learning_rate * std::pow(config.decay_rate, static_cast<double>(steps));
}

template <typename Scalar>
void sgd_step(std::span<const ParamSlot<Scalar>> slots, double lr, const TrainingConfig& config) {
  const Scalar m = static_cast<Scalar>(config.momentum);
  const Scalar rate = static_cast<Scalar>(lr);
  const Scalar wd = static_cast<Scalar>(config.weight_decay);

  std::vector<Vector<Scalar>> new_v(slots.size()), new_w(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = slots[i];
    if (s.value->shape() != s.grad->shape() || s.value->shape() != s.velocity->shape())
      throw ConfigError("sgd_step: misaligned shapes for " + s.name);
    auto g = s.grad->vec().array();
    auto w = s.value->vec().array();
    if (s.decay)
      new_v[i] = (m * s.velocity->vec().array() - rate * (g + wd * w)).matrix();
    else
      new_v[i] = (m * s.velocity->vec().array() - rate * g).matrix();
    new_w[i] = s.value->vec() + new_v[i];
    if (!new_w[i].allFinite() || !new_v[i].allFinite())
      throw NumericError("sgd_step: non-finite update for " + s.name);
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    slots[i].velocity->vec() = std::move(new_v[i]);
    slots[i].value->vec() = std::move(new_w[i]);
  }
}

template <typename Scalar>
std::vector<ParamSlot<Scalar>> make_slots(NetworkParams<Scalar>& params, const NetworkParams<Scalar>& grads,
                                          NetworkParams<Scalar>& velocity) {
  std::vector<ParamSlot<Scalar>> slots;
  params.for_each([&](const std::string& name, Tensor<Scalar>& t, ParamKind kind) {
    if (is_learnable(kind)) slots.push_back({name, &t, nullptr, nullptr, kind == ParamKind::Weight});
  });
  std::size_t i = 0;
  grads.for_each([&](const std::string&, const Tensor<Scalar>& t, ParamKind kind) {
    if (is_learnable(kind)) slots.at(i++).grad = &t;
  });
  i = 0;
  velocity.for_each([&](const std::string&, Tensor<Scalar>& t, ParamKind kind) {
    if (is_learnable(kind)) slots.at(i++).velocity = &t;
  });
  if (i != slots.size()) throw ConfigError("velocity layout does not match parameters");
  return slots;
}

template void sgd_step(std::span<const ParamSlot<float>>, double, const TrainingConfig&);
template void sgd_step(std::span<const ParamSlot<double>>, double, const TrainingConfig&);
template std::vector<ParamSlot<float>> make_slots(NetworkParams<float>&, const NetworkParams<float>&,
                                                  NetworkParams<float>&);
template std::vector<ParamSlot<double>> make_slots(NetworkParams<double>&, const NetworkParams<double>&,
                                                   NetworkParams<double>&);

std::uint64_t config_hash(const NetworkSpec& spec, const TrainingConfig& config) {
  nlohmann::json c = config;
  c.erase("max_iterations");
  c.erase("trace_interval");
  c.erase("checkpoint_interval");
  const nlohmann::json j = {{"spec", spec}, {"config", c}};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr const char* kTraceHeader = "iteration,lr,loss,batch_accuracy\n";

std::string trace_line(const TraceRow& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(r.iteration), r.lr, r.loss,
                r.batch_accuracy);
  return line;
}

}  // namespace

std::string trace_csv(std::span<const TraceRow> rows) {
  std::string out = kTraceHeader;
  for (const auto& r : rows) out += trace_line(r);
  return out;
}

TrainResult train(const NetworkSpec& spec, const TrainingSet& data, const TrainingConfig& config,
                  const TrainOptions& options) {
  config.validate();
  NetworkSpec eff = spec;
  eff.missing_data = config.missing_data_mode;
  eff.validate();
  if (!data.stack || data.pixels.empty()) throw InputError("training set is empty");
  const auto& stack = *data.stack;
  if (stack.size() != eff.timestamps)
    throw ConfigError("stack has " + std::to_string(stack.size()) + " timestamps, network expects " +
                      std::to_string(eff.timestamps));
  if (stack.channels != eff.channels_per_branch)
    throw ConfigError("stack has " + std::to_string(stack.channels) + " channels per timestamp, network expects " +
                      std::to_string(eff.channels_per_branch));

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(eff.num_classes));
  for (std::size_t i = 0; i < data.pixels.size(); ++i) {
    const int l = data.pixels[i].label;
    if (l < 0 || l >= eff.num_classes) throw InputError("training label " + std::to_string(l) + " out of range");
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (by_class[c].empty()) throw InputError("class " + std::to_string(c) + " has no training pixel");

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  const std::uint64_t hash = config_hash(eff, config);
  Rng rng;
  if (options.resume) {
    if (options.resume->config_hash != hash)
      throw ConfigError("checkpoint was produced with a different configuration");
    ck = *options.resume;
    load_rng_state(rng, ck.rng_state);
  } else {
    rng.seed(config.seed);
    ck.params = build<float>(eff, rng);
    ck.velocity = zeros_like(ck.params);
  }
  ck.spec = eff;
  ck.config = config;
  ck.config_hash = hash;

  std::ofstream trace_file;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    trace_file.open(options.out_dir / "trace.csv", std::ios::binary);
    trace_file << kTraceHeader;
  }
  auto snapshot = [&](const fs::path& name) {
    ck.rng_state = save_rng_state(rng);
    save_checkpoint(options.out_dir / name, ck);
  };

  const AvailabilityMask mask = stack.availability();
  const auto batch_n = static_cast<std::size_t>(config.batch_size);
  std::vector<LabeledPixel> batch(batch_n);
  std::vector<int> labels(batch_n);
  ForwardCache<float> cache;

  while (ck.iteration < config.max_iterations) {
    const double lr = lr_schedule(ck.iteration, config);
    for (std::size_t b = 0; b < batch_n; ++b) {
      std::size_t idx;
      if (config.class_balanced) {
        const auto& pool = by_class[uniform_index(rng, by_class.size())];
        idx = pool[uniform_index(rng, pool.size())];
      } else {
        idx = uniform_index(rng, data.pixels.size());
      }
      batch[b] = data.pixels[idx];
      labels[b] = batch[b].label;
    }

    SoftmaxLoss<float> sm;
    try {
      const auto windows = assemble_batch(stack, batch, eff.window_size);
      const TensorF logits = forward(eff, ck.params, std::span<const TensorF>(windows), mask, Mode::Train, rng, &cache);
      sm = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(sm.loss)) throw NumericError("loss is not finite");
      const TensorF grad_logits = softmax_cross_entropy_backward(sm.probabilities, labels);
      const NetworkParams<float> grads = backward(eff, ck.params, cache, grad_logits);
      const auto slots = make_slots(ck.params, grads, ck.velocity);
      sgd_step(std::span<const ParamSlot<float>>(slots), lr, config);
    } catch (const NumericError& e) {
      if (!options.out_dir.empty()) snapshot("last_good.mtcn");
      std::ostringstream os;
      os << e.what() << " at iteration " << ck.iteration << " (lr " << lr << ")";
      throw NumericError(os.str());
    }
    ++ck.iteration;

    if (ck.iteration % config.trace_interval == 0) {
      const Index k = sm.probabilities.shape()[1];
      const auto p = sm.probabilities.matrix(static_cast<Index>(batch_n), k);
      std::size_t correct = 0;
      for (std::size_t b = 0; b < batch_n; ++b) {
        Index arg;
        p.row(static_cast<Index>(b)).maxCoeff(&arg);
        correct += arg == labels[b];
      }
      TraceRow row{ck.iteration, lr, static_cast<double>(sm.loss),
                   static_cast<double>(correct) / static_cast<double>(batch_n)};
      result.trace.push_back(row);
      if (trace_file.is_open()) trace_file << trace_line(row) << std::flush;
      if (options.on_trace) options.on_trace(row);
    }
    if (!options.out_dir.empty() && config.checkpoint_interval > 0 && ck.iteration % config.checkpoint_interval == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_%08lld.mtcn", static_cast<long long>(ck.iteration));
      snapshot(name);
    }
  }

  ck.rng_state = save_rng_state(rng);
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "final.mtcn", ck);
  return result;
}

}  // namespace mtcn
