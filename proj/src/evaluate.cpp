#include "mtcn/evaluate.hpp"

#include <chrono>
#include <sstream>

namespace mtcn {

void check_compatible(const NetworkSpec& spec, const TemporalImageStack& stack) {
  if (stack.size() != spec.timestamps)
    throw DataError("stack has " + std::to_string(stack.size()) + " timestamps, checkpoint expects " +
                    std::to_string(spec.timestamps));
  if (stack.channels != spec.channels_per_branch)
    throw DataError("stack has " + std::to_string(stack.channels) + " channels per timestamp, checkpoint expects " +
                    std::to_string(spec.channels_per_branch));
}

std::vector<int> predict_labels(const NetworkSpec& spec, NetworkParams<float>& params, const TemporalImageStack& stack,
                                const AvailabilityMask& mask, std::span<const LabeledPixel> pixels, Index batch_size) {
  check_compatible(spec, stack);
  std::vector<int> out;
  out.reserve(pixels.size());
  const auto step = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < pixels.size(); start += step) {
    const auto chunk = pixels.subspan(start, std::min(step, pixels.size() - start));
    auto windows = assemble_batch(stack, chunk, spec.window_size);
    for (Index j = 0; j < stack.size(); ++j)
      if (!mask[j]) windows[static_cast<std::size_t>(j)] = TensorF();
    const TensorF logits = inference_branch_drop(spec, params, std::span<const TensorF>(windows), mask);
    const auto m = logits.matrix(static_cast<Index>(chunk.size()), spec.num_classes);
    for (Index i = 0; i < m.rows(); ++i) {
      Index arg;
      m.row(i).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

PredictionMap predict_map(const Checkpoint& checkpoint, const Dataset& dataset, const AvailabilityMask& mask) {
  check_compatible(checkpoint.spec, dataset.stack);
  for (Index j = 0; j < mask.size(); ++j)
    if (mask[j] && !dataset.stack.timestamps[static_cast<std::size_t>(j)].available)
      throw DataError("mask enables timestamp " + std::to_string(j) + " which has no image");
  PredictionMap map;
  map.width = dataset.labels.width;
  map.height = dataset.labels.height;
  map.labels.assign(static_cast<std::size_t>(map.width * map.height), kBackground);
  map.pixels = annotated_pixels(dataset.labels);
  NetworkParams<float> params = checkpoint.params;
  map.predictions = predict_labels(checkpoint.spec, params, dataset.stack, mask, map.pixels);
  for (std::size_t i = 0; i < map.pixels.size(); ++i)
    map.labels[static_cast<std::size_t>(map.pixels[i].y * map.width + map.pixels[i].x)] =
        static_cast<std::uint8_t>(map.predictions[i]);
  return map;
}

RawImage render_map(const PredictionMap& map, std::span<const Color> palette) {
  RawImage img{static_cast<int>(map.width), static_cast<int>(map.height), 3, 8, {}};
  img.samples.assign(static_cast<std::size_t>(map.width * map.height * 3), 0);
  for (std::size_t p = 0; p < map.labels.size(); ++p) {
    const auto l = map.labels[p];
    if (l == kBackground) continue;
    if (l >= palette.size()) throw DataError("palette has no color for class " + std::to_string(l));
    for (int c = 0; c < 3; ++c) img.samples[p * 3 + static_cast<std::size_t>(c)] = palette[l][static_cast<std::size_t>(c)];
  }
  return img;
}

std::string prediction_csv(const PredictionMap& map) {
  std::ostringstream os;
  os << "x,y,label,prediction\n";
  for (std::size_t i = 0; i < map.pixels.size(); ++i)
    os << map.pixels[i].x << ',' << map.pixels[i].y << ',' << map.pixels[i].label << ',' << map.predictions[i] << '\n';
  return os.str();
}

EvaluationReport evaluate_pixels(const NetworkSpec& spec, NetworkParams<float>& params, const TemporalImageStack& stack,
                                 const AvailabilityMask& mask, std::span<const LabeledPixel> pixels) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto preds = predict_labels(spec, params, stack, mask, pixels);
  std::vector<int> labels;
  for (const auto& p : pixels) labels.push_back(p.label);
  EvaluationReport r = evaluate_predictions(preds, labels, spec.num_classes);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace mtcn
