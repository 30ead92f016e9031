#ifndef MTCN_NETWORK_HPP
#define MTCN_NETWORK_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtcn/layers.hpp"

namespace mtcn {

/// conv -> batch norm -> ReLU -> max pool
struct ConvStage {
  Index filters = 64;
  Extent2 kernel{4, 4};
  Extent2 pool_kernel{2, 2};
  Extent2 pool_stride{2, 2};
};

enum class Architecture {
  MultiBranch,  // one branch per timestamp, depth-wise concatenated before the trunk
  EarlyFusion   // single branch fed with all timestamps stacked along channels (2-D CNN)
};

/// Architecture description. Defaults reproduce the 25x25 multi-temporal
/// network: 64@4x4 branches, 128@4x4 and 256@3x3 trunk stages, two
/// 1024-unit fully connected layers and a linear classifier.
struct NetworkSpec {
  Architecture architecture = Architecture::MultiBranch;
  Index timestamps = 1;
  Index channels_per_branch = 3;
  Index num_classes = 2;
  Index window_size = 25;
  ConvStage branch{64, {4, 4}, {2, 2}, {2, 2}};
  std::vector<ConvStage> trunk{{128, {4, 4}, {2, 2}, {2, 2}}, {256, {3, 3}, {2, 2}, {1, 1}}};
  std::vector<Index> fc_units{1024, 1024};
  double fc_keep_prob = 0.5;
  bool missing_data = false;        // branch dropout with keep probability 1/t
  bool share_branch_params = false;

  Index branch_count() const { return architecture == Architecture::MultiBranch ? timestamps : 1; }
  Index branch_input_channels() const {
    return architecture == Architecture::MultiBranch ? channels_per_branch : timestamps * channels_per_branch;
  }
  double branch_keep_prob() const {
    return missing_data && architecture == Architecture::MultiBranch ? 1.0 / static_cast<double>(timestamps) : 1.0;
  }

  /// Throws ConfigError when an invariant is violated or the shape chain collapses.
  void validate() const;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

/// Spec of the 2-D CNN baseline: one branch over t*ch stacked channels, same trunk and head.
NetworkSpec two_d_cnn_spec(Index timestamps, Index channels, Index classes);

struct StageShape {
  std::string name;
  Index channels;
  Index height;
  Index width;
};

/// Activation extents after every stage, input through the flattened feature.
struct ShapeChain {
  std::vector<StageShape> stages;
  Index feature_dim = 0;

  const StageShape& at(const std::string& name) const;
};

ShapeChain shape_chain(const NetworkSpec& spec);

// ---------------------------------------------------------------------------

template <typename Scalar>
struct ConvLayerParams {
  Tensor<Scalar> weights;  // [K, C, kh, kw]
  Tensor<Scalar> bias;     // [K]
  BatchNormParams<Scalar> bn;
};

template <typename Scalar>
struct DenseLayerParams {
  Tensor<Scalar> weights;  // [out, in]
  Tensor<Scalar> bias;     // [out]
};

enum class ParamKind { Weight, Bias, BnScale, BnShift, BnStatistic };

inline bool is_learnable(ParamKind k) { return k != ParamKind::BnStatistic; }

template <typename Scalar>
struct NetworkParams {
  std::vector<ConvLayerParams<Scalar>> branches;  // branch_count() entries, or one when shared
  std::vector<ConvLayerParams<Scalar>> trunk;
  std::vector<DenseLayerParams<Scalar>> dense;    // hidden layers, then the classifier

  /// Visits every tensor with a stable name, in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  Index learnable_count() const;

  template <typename Other>
  NetworkParams<Other> cast() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    auto conv = [&f](const std::string& prefix, auto& layer) {
      f(prefix + "/conv/weights", layer.weights, ParamKind::Weight);
      f(prefix + "/conv/bias", layer.bias, ParamKind::Bias);
      f(prefix + "/bn/gamma", layer.bn.gamma, ParamKind::BnScale);
      f(prefix + "/bn/beta", layer.bn.beta, ParamKind::BnShift);
      f(prefix + "/bn/running_mean", layer.bn.running_mean, ParamKind::BnStatistic);
      f(prefix + "/bn/running_var", layer.bn.running_var, ParamKind::BnStatistic);
    };
    for (std::size_t i = 0; i < self.branches.size(); ++i) conv("branch" + std::to_string(i), self.branches[i]);
    for (std::size_t i = 0; i < self.trunk.size(); ++i) conv("trunk" + std::to_string(i), self.trunk[i]);
    for (std::size_t i = 0; i < self.dense.size(); ++i) {
      const std::string prefix = i + 1 == self.dense.size() ? "classifier" : "fc" + std::to_string(i);
      f(prefix + "/weights", self.dense[i].weights, ParamKind::Weight);
      f(prefix + "/bias", self.dense[i].bias, ParamKind::Bias);
    }
  }
};

/// Allocates and initializes every tensor: He-normal conv/dense weights,
/// zero biases, gamma 1, beta 0, running mean 0 and running variance 1.
template <typename Scalar>
NetworkParams<Scalar> build(const NetworkSpec& spec, Rng& rng);

template <typename Scalar>
NetworkParams<Scalar> build_2dcnn(Index timestamps, Index channels, Index classes, Rng& rng);

/// Zero-filled parameter set with the same layout; used for gradients.
template <typename Scalar>
NetworkParams<Scalar> zeros_like(const NetworkParams<Scalar>& params);

// ---------------------------------------------------------------------------

struct AvailabilityMask {
  std::vector<bool> flags;

  static AvailabilityMask all(Index t) { return {std::vector<bool>(static_cast<std::size_t>(t), true)}; }
  Index size() const { return static_cast<Index>(flags.size()); }
  Index count() const;
  bool operator[](Index i) const { return flags[static_cast<std::size_t>(i)]; }
};

/// Keeps each branch with probability keep_prob, restricted to `eligible`
/// branches when given, and redraws until at least one branch survives.
std::vector<bool> branch_dropout_mask(Index t, double keep_prob, Rng& rng, const AvailabilityMask* eligible = nullptr);

/// Per-branch multipliers applied to branch outputs before concatenation.
/// 0 drops the branch.
///  - eval: available branches scaled by t/k, unavailable ones dropped;
///  - train with missing-data mode: branch dropout, kept branches scaled by 1/keep_prob;
///  - train otherwise: same rule as eval.
std::vector<double> branch_gates(const NetworkSpec& spec, const AvailabilityMask& mask, Mode mode, Rng& rng);

template <typename Scalar>
struct StageCache {
  ConvCache<Scalar> conv;
  BatchNormCache<Scalar> bn;
  Tensor<Scalar> pre_relu;
  PoolCache pool;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<double> gates;
  std::vector<StageCache<Scalar>> branches;
  std::vector<Index> trunk_inputs;  // branches whose activations feed the first trunk conv
  bool compacted = false;
  std::vector<StageCache<Scalar>> trunk;
  Shape trunk_output_shape;
  std::vector<DenseCache<Scalar>> dense;
  std::vector<Tensor<Scalar>> dense_pre_relu;
  std::vector<DropoutCache<Scalar>> dropout;
  bool valid = false;
};

/// One branch: conv -> bn -> relu -> pool over a [N, C, H, W] window batch.
template <typename Scalar>
Tensor<Scalar> stage_forward(const ConvStage& stage, ConvLayerParams<Scalar>& layer, const Tensor<Scalar>& input,
                             Mode mode, StageCache<Scalar>* cache = nullptr);

/// Trunk stages and dense head over a concatenated branch tensor.
template <typename Scalar>
Tensor<Scalar> trunk_forward(const NetworkSpec& spec, NetworkParams<Scalar>& params, const Tensor<Scalar>& concat,
                             Mode mode, Rng& rng, ForwardCache<Scalar>* cache = nullptr);

/// Forward pass with explicit branch multipliers. In train mode, dropped
/// branches are removed from the first trunk convolution entirely.
template <typename Scalar>
Tensor<Scalar> forward_gated(const NetworkSpec& spec, NetworkParams<Scalar>& params,
                             std::span<const Tensor<Scalar>> windows, std::span<const double> gates, Mode mode,
                             Rng& rng, ForwardCache<Scalar>* cache = nullptr);

/// windows[j] is the [N, ch, S, S] batch for timestamp j; entries for
/// unavailable timestamps may be empty. Returns logits [N, classes].
template <typename Scalar>
Tensor<Scalar> forward(const NetworkSpec& spec, NetworkParams<Scalar>& params, std::span<const Tensor<Scalar>> windows,
                       const AvailabilityMask& mask, Mode mode, Rng& rng, ForwardCache<Scalar>* cache = nullptr);

/// Eval-mode forward that skips unavailable branches and rescales survivors by t/k.
template <typename Scalar>
Tensor<Scalar> inference_branch_drop(const NetworkSpec& spec, NetworkParams<Scalar>& params,
                                     std::span<const Tensor<Scalar>> windows, const AvailabilityMask& mask);

/// Gradients of the loss w.r.t. every learnable tensor (BN statistics stay zero).
template <typename Scalar>
NetworkParams<Scalar> backward(const NetworkSpec& spec, const NetworkParams<Scalar>& params,
                               const ForwardCache<Scalar>& cache, const Tensor<Scalar>& grad_logits);

}  // namespace mtcn

#endif  // MTCN_NETWORK_HPP
