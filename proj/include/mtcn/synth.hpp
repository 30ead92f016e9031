#ifndef MTCN_SYNTH_HPP
#define MTCN_SYNTH_HPP

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "mtcn/dataset.hpp"

namespace mtcn {

/// Synthetic phenology scene: elliptical crowns on soil, each class following
/// its own seasonal color trajectory
///   base[c] + amplitude[c] * sin(2*pi*j/t + phase[class]).
///
/// With phases {0, pi, pi/3, 5pi/3} every timestamp of a 12-step cycle has
/// exactly one pair of classes with identical colors, so no single image
/// separates all four classes while the full series does.
struct SynthConfig {
  Index classes = 4;
  Index segments_per_class = 12;
  Index image_size = 64;
  Index timestamps = 12;
  Index channels = 3;
  double noise = 0.03;        // stddev of per-pixel Gaussian texture
  std::uint64_t seed = 1;     // layout and noise
  int year = 0;               // same layout, independent noise per year
  std::vector<Index> missing; // timestamps flagged unavailable
  std::optional<Index> separable_timestamp;          // distinct class colors at this timestamp
  std::vector<std::pair<Index, Index>> duplicates;   // (source, target): target becomes a copy
  double radius_min = 2.0;
  double radius_max = 3.5;
  int max_retries = 5000;
};

double class_phase(Index cls, Index classes);

/// Noise-free color of `cls` at `timestamp`, one value per channel.
std::vector<double> class_trajectory(const SynthConfig& config, Index cls, Index timestamp);

/// In-memory dataset with values already quantized to 8 bits.
Dataset synth_dataset(const SynthConfig& config);

/// Writes the dataset to `dir`; returns the manifest path.
std::filesystem::path synth_generate(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace mtcn

#endif  // MTCN_SYNTH_HPP
