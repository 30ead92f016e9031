#ifndef MTCN_EVALUATE_HPP
#define MTCN_EVALUATE_HPP

#include <filesystem>
#include <span>
#include <vector>

#include "mtcn/dataset.hpp"
#include "mtcn/image_io.hpp"
#include "mtcn/metrics.hpp"
#include "mtcn/trainer.hpp"

namespace mtcn {

/// Eval-mode class predictions for `pixels`, processed in fixed-size batches.
std::vector<int> predict_labels(const NetworkSpec& spec, NetworkParams<float>& params, const TemporalImageStack& stack,
                                const AvailabilityMask& mask, std::span<const LabeledPixel> pixels,
                                Index batch_size = 64);

/// Throws DataError when the stack cannot feed the checkpoint's network.
void check_compatible(const NetworkSpec& spec, const TemporalImageStack& stack);

struct PredictionMap {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> labels;  // kBackground where not annotated
  std::vector<LabeledPixel> pixels;
  std::vector<int> predictions;
};

/// Classifies every annotated pixel of `dataset`.
PredictionMap predict_map(const Checkpoint& checkpoint, const Dataset& dataset, const AvailabilityMask& mask);

/// RGB rendering; background is black.
RawImage render_map(const PredictionMap& map, std::span<const Color> palette);

/// x,y,label,prediction per annotated pixel.
std::string prediction_csv(const PredictionMap& map);

/// Predicts `pixels` and summarizes them against their reference labels.
EvaluationReport evaluate_pixels(const NetworkSpec& spec, NetworkParams<float>& params, const TemporalImageStack& stack,
                                 const AvailabilityMask& mask, std::span<const LabeledPixel> pixels);

}  // namespace mtcn

#endif  // MTCN_EVALUATE_HPP
