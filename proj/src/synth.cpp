#include "mtcn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mtcn/rng.hpp"

namespace mtcn {

namespace {

constexpr double kBase[] = {0.5, 0.5, 0.5};
constexpr double kAmplitude[] = {0.35, 0.25, 0.3};
constexpr double kSoil[] = {0.3, 0.25, 0.2};

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

}  // namespace

double class_phase(Index cls, Index classes) {
  using std::numbers::pi;
  static const double table[] = {0.0, pi, pi / 3.0, 5.0 * pi / 3.0};
  if (cls < 4) return table[cls];
  return 2.0 * pi * static_cast<double>(cls) / static_cast<double>(classes) + pi / 7.0;
}

std::vector<double> class_trajectory(const SynthConfig& config, Index cls, Index timestamp) {
  std::vector<double> v(static_cast<std::size_t>(config.channels));
  if (config.separable_timestamp && *config.separable_timestamp == timestamp) {
    const double span = static_cast<double>(std::max<Index>(config.classes - 1, 1));
    for (Index c = 0; c < config.channels; ++c)
      v[static_cast<std::size_t>(c)] = 0.15 + 0.7 * static_cast<double>((cls + c) % config.classes) / span;
    return v;
  }
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(timestamp) / static_cast<double>(config.timestamps);
  const double s = std::sin(theta + class_phase(cls, config.classes));
  for (Index c = 0; c < config.channels; ++c) v[static_cast<std::size_t>(c)] = kBase[c % 3] + kAmplitude[c % 3] * s;
  return v;
}

Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synthetic data needs at least two classes");
  if (cfg.timestamps < 1 || cfg.channels < 1) throw ConfigError("synthetic data needs t >= 1 and channels >= 1");
  if (cfg.segments_per_class < 1 || cfg.image_size < 8) throw ConfigError("synthetic layout too small");
  if (!(cfg.radius_min > 0) || cfg.radius_max < cfg.radius_min) throw ConfigError("bad crown radii");
  if (cfg.classes > 254) throw ConfigError("at most 254 classes fit an 8-bit label map");

  const Index n = cfg.image_size;
  Dataset ds;
  auto& lm = ds.labels;
  lm.width = lm.height = n;
  lm.labels.assign(static_cast<std::size_t>(n * n), kBackground);
  lm.segments.assign(static_cast<std::size_t>(n * n), 0);
  for (Index k = 0; k < cfg.classes; ++k) lm.class_names.push_back("class_" + std::to_string(k));
  static const Color palette[] = {{230, 25, 75}, {60, 180, 75}, {0, 130, 200}, {255, 225, 25},
                                  {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
  for (Index k = 0; k < cfg.classes; ++k) lm.palette.push_back(palette[k % 8]);

  // Layout: crowns placed class-interleaved, with a one-pixel gap between crowns.
  Rng layout(cfg.seed);
  std::vector<std::uint8_t> blocked(static_cast<std::size_t>(n * n), 0);
  std::int32_t next_id = 1;
  for (Index s = 0; s < cfg.segments_per_class; ++s) {
    for (Index k = 0; k < cfg.classes; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
        const double a = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * uniform01(layout);
        const double b = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * uniform01(layout);
        const double angle = std::numbers::pi * uniform01(layout);
        const double r = std::max(a, b);
        const double cx = r + 1 + (static_cast<double>(n) - 2 * r - 3) * uniform01(layout);
        const double cy = r + 1 + (static_cast<double>(n) - 2 * r - 3) * uniform01(layout);
        const double ca = std::cos(angle), sa = std::sin(angle);
        std::vector<Index> pixels;
        bool clash = false;
        for (Index y = static_cast<Index>(cy - r) - 1; y <= static_cast<Index>(cy + r) + 1 && !clash; ++y)
          for (Index x = static_cast<Index>(cx - r) - 1; x <= static_cast<Index>(cx + r) + 1; ++x) {
            if (x < 0 || y < 0 || x >= n || y >= n) continue;
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double u = (dx * ca + dy * sa) / a, v = (-dx * sa + dy * ca) / b;
            if (u * u + v * v > 1.0) continue;
            if (blocked[static_cast<std::size_t>(y * n + x)]) {
              clash = true;
              break;
            }
            pixels.push_back(y * n + x);
          }
        if (clash || pixels.empty()) continue;
        for (Index p : pixels) {
          lm.labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(k);
          lm.segments[static_cast<std::size_t>(p)] = next_id;
          const Index py = p / n, px = p % n;
          for (Index yy = std::max<Index>(py - 1, 0); yy <= std::min(py + 1, n - 1); ++yy)
            for (Index xx = std::max<Index>(px - 1, 0); xx <= std::min(px + 1, n - 1); ++xx)
              blocked[static_cast<std::size_t>(yy * n + xx)] = 1;
        }
        ++next_id;
        placed = true;
      }
      if (!placed)
        throw DataError("could not place crown " + std::to_string(next_id) + " without overlap; use a larger image "
                        "or fewer segments");
    }
  }

  // Colors. Noise is drawn for every timestamp so missing flags do not shift the stream.
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(cfg.year), 0x5eedu};
  Rng noise(seq);
  auto& stack = ds.stack;
  stack.height = stack.width = n;
  stack.channels = cfg.channels;
  for (Index j = 0; j < cfg.timestamps; ++j) {
    TimestampImage ts;
    ts.label = "y" + std::to_string(cfg.year) + "-t" + std::to_string(j);
    ts.available = true;
    ts.image = TensorF(Shape{cfg.channels, n, n});
    std::vector<std::vector<double>> colors;
    for (Index k = 0; k < cfg.classes; ++k) colors.push_back(class_trajectory(cfg, k, j));
    for (Index c = 0; c < cfg.channels; ++c)
      for (Index p = 0; p < n * n; ++p) {
        const auto l = lm.labels[static_cast<std::size_t>(p)];
        const double clean = l == kBackground ? kSoil[c % 3] : colors[l][static_cast<std::size_t>(c)];
        ts.image[c * n * n + p] = quantize(clean + cfg.noise * standard_normal(noise));
      }
    stack.timestamps.push_back(std::move(ts));
  }
  for (const auto& [src, dst] : cfg.duplicates) {
    if (src < 0 || dst < 0 || src >= cfg.timestamps || dst >= cfg.timestamps) throw ConfigError("duplicate index out of range");
    stack.timestamps[static_cast<std::size_t>(dst)].image = stack.timestamps[static_cast<std::size_t>(src)].image;
  }
  for (Index j : cfg.missing) {
    if (j < 0 || j >= cfg.timestamps) throw ConfigError("missing timestamp index out of range");
    stack.timestamps[static_cast<std::size_t>(j)].available = false;
    stack.timestamps[static_cast<std::size_t>(j)].image = TensorF();
  }
  if (stack.availability().count() == 0) throw ConfigError("every timestamp is marked missing");
  return ds;
}

std::filesystem::path synth_generate(const SynthConfig& config, const std::filesystem::path& dir) {
  return save_dataset(synth_dataset(config), dir);
}

}  // namespace mtcn
