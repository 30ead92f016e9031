#ifndef MTCN_DATASET_HPP
#define MTCN_DATASET_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mtcn/network.hpp"
#include "mtcn/tensor.hpp"

namespace mtcn {

inline constexpr std::uint8_t kBackground = 255;

struct TimestampImage {
  std::string label;
  bool available = false;
  TensorF image;  // [ch, H, W] in [0, 1]; empty when unavailable
};

/// Co-registered images of one scene over time.
struct TemporalImageStack {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<TimestampImage> timestamps;

  Index size() const { return static_cast<Index>(timestamps.size()); }
  AvailabilityMask availability() const;
  float at(Index t, Index c, Index y, Index x) const {
    return timestamps[static_cast<std::size_t>(t)].image[(c * height + y) * width + x];
  }
  /// Timestamps `keep` in the given order.
  TemporalImageStack subset(std::span<const Index> keep) const;
};

using Color = std::array<std::uint8_t, 3>;

struct LabelMap {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> labels;     // row-major; kBackground = unlabeled
  std::vector<std::int32_t> segments;   // row-major; 0 = none
  std::vector<std::string> class_names;
  std::vector<Color> palette;

  Index num_classes() const { return static_cast<Index>(class_names.size()); }
  std::uint8_t label(Index x, Index y) const { return labels[static_cast<std::size_t>(y * width + x)]; }
  std::int32_t segment(Index x, Index y) const { return segments[static_cast<std::size_t>(y * width + x)]; }
  void validate() const;
};

struct Dataset {
  TemporalImageStack stack;
  LabelMap labels;
};

/// Reads a manifest:
///   { "classes": [..], "palette": [[r,g,b],..],
///     "timestamps": [{"label": s, "files": [..], "available": b}, ..],
///     "labels": path, "segments": path }
/// Paths are relative to the manifest. Several files in one timestamp are
/// stacked along channels in listed order.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Writes images, label/segment maps and manifest.json into `dir`.
/// Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Reflect-101 index into [0, n): -1 -> 1, n -> n - 2.
Index mirror_index(Index i, Index n);

/// [ch, size, size] patch centered on (x, y); out-of-image pixels mirrored.
TensorF extract_window(const TemporalImageStack& stack, Index x, Index y, Index timestamp, Index size = 25);

/// Same, written into `dst` (ch * size * size floats).
void extract_window_into(const TemporalImageStack& stack, Index x, Index y, Index timestamp, Index size, float* dst);

struct LabeledPixel {
  Index x = 0;
  Index y = 0;
  int label = 0;
  std::int32_t segment = 0;
};

/// One [N, ch, size, size] batch per timestamp; unavailable timestamps get empty tensors.
std::vector<TensorF> assemble_batch(const TemporalImageStack& stack, std::span<const LabeledPixel> pixels,
                                    Index window_size);

struct SplitAssignment {
  std::set<std::int32_t> train;
  std::set<std::int32_t> test;

  bool is_test(std::int32_t segment) const { return test.count(segment) > 0; }
};

struct SplitOptions {
  Index min_test_per_class = 2;
  const std::set<std::int32_t>* restrict_to = nullptr;  // split only these segments
};

/// Segment-level split. Each class contributes `min_test_per_class` shuffled
/// segments to the test set, then segments move one at a time (largest
/// remaining class first) until test holds round((1 - ratio) * total).
/// Every class keeps at least one training segment.
SplitAssignment split_segments(const LabelMap& labels, double ratio, std::uint64_t seed, const SplitOptions& options = {});

/// Annotated pixels, row-major, optionally restricted to a segment set.
std::vector<LabeledPixel> annotated_pixels(const LabelMap& labels, const std::set<std::int32_t>* segments = nullptr);

}  // namespace mtcn

#endif  // MTCN_DATASET_HPP
