#include "mtcn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"
#include "mtcn/image_io.hpp"
#include "mtcn/rng.hpp"

namespace mtcn {

namespace fs = std::filesystem;
using nlohmann::json;

AvailabilityMask TemporalImageStack::availability() const {
  AvailabilityMask m;
  for (const auto& t : timestamps) m.flags.push_back(t.available);
  return m;
}

TemporalImageStack TemporalImageStack::subset(std::span<const Index> keep) const {
  TemporalImageStack s;
  s.height = height;
  s.width = width;
  s.channels = channels;
  for (Index j : keep) {
    if (j < 0 || j >= size()) throw InputError("timestamp index " + std::to_string(j) + " out of range");
    s.timestamps.push_back(timestamps[static_cast<std::size_t>(j)]);
  }
  return s;
}

void LabelMap::validate() const {
  const auto n = static_cast<std::size_t>(height * width);
  if (labels.size() != n || segments.size() != n) throw DataError("label map extents do not match");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kBackground) continue;
    if (labels[i] >= class_names.size())
      throw DataError("unknown class index " + std::to_string(labels[i]) + " at pixel " + std::to_string(i));
    if (segments[i] == 0) throw DataError("labeled pixel " + std::to_string(i) + " has no segment id");
  }
}

// ---------------------------------------------------------------------------
// Manifest IO

namespace {

std::vector<Color> default_palette(std::size_t n) {
  static const Color base[] = {{230, 25, 75},  {60, 180, 75},  {0, 130, 200},  {255, 225, 25},
                               {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
  std::vector<Color> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back(base[i % std::size(base)]);
  return p;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const fs::path root = manifest_path.parent_path();

  Dataset ds;
  try {
    ds.labels.class_names = m.at("classes").get<std::vector<std::string>>();
    if (m.contains("palette")) {
      for (const auto& c : m.at("palette"))
        ds.labels.palette.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()});
    }
    if (ds.labels.palette.size() < ds.labels.class_names.size()) ds.labels.palette = default_palette(ds.labels.class_names.size());

    std::set<std::string> seen;
    auto& stack = ds.stack;
    for (const auto& entry : m.at("timestamps")) {
      TimestampImage ts;
      ts.label = entry.at("label").get<std::string>();
      if (!seen.insert(ts.label).second) throw DataError("duplicate timestamp label " + ts.label);
      ts.available = entry.value("available", true);
      const auto files = entry.value("files", std::vector<std::string>{});
      if (ts.available && files.empty()) throw DataError("timestamp " + ts.label + " is available but lists no files");
      if (ts.available) {
        std::vector<RawImage> parts;
        int channels = 0;
        for (const auto& f : files) {
          parts.push_back(read_png(root / f));
          const auto& p = parts.back();
          if (p.bit_depth != 8) throw DataError("image " + f + " is not 8-bit");
          if (p.width != parts.front().width || p.height != parts.front().height)
            throw DataError("image " + f + " differs in size from the other files of " + ts.label);
          channels += p.channels;
        }
        const int w = parts.front().width, h = parts.front().height;
        if (stack.height == 0) {
          stack.height = h;
          stack.width = w;
          stack.channels = channels;
        } else if (stack.height != h || stack.width != w) {
          throw DataError("timestamp " + ts.label + " is " + std::to_string(w) + "x" + std::to_string(h) +
                          ", expected " + std::to_string(stack.width) + "x" + std::to_string(stack.height));
        } else if (stack.channels != channels) {
          throw DataError("timestamp " + ts.label + " has " + std::to_string(channels) + " channels, expected " +
                          std::to_string(stack.channels));
        }
        ts.image = TensorF(Shape{channels, h, w});
        Index c0 = 0;
        for (const auto& p : parts) {
          for (int c = 0; c < p.channels; ++c)
            for (int y = 0; y < h; ++y)
              for (int x = 0; x < w; ++x)
                ts.image[((c0 + c) * h + y) * w + x] = static_cast<float>(p.at(x, y, c)) / 255.0f;
          c0 += p.channels;
        }
      }
      stack.timestamps.push_back(std::move(ts));
    }
    if (stack.timestamps.empty() || stack.availability().count() == 0)
      throw DataError("manifest has no available timestamp");

    const RawImage labels = read_png(root / m.at("labels").get<std::string>());
    const RawImage segments = read_png(root / m.at("segments").get<std::string>());
    if (labels.channels != 1 || segments.channels != 1) throw DataError("label and segment maps must be single-channel");
    if (labels.bit_depth != 8) throw DataError("label map must be 8-bit");
    if (labels.width != stack.width || labels.height != stack.height || segments.width != stack.width ||
        segments.height != stack.height)
      throw DataError("label/segment maps do not match image extents");
    ds.labels.width = stack.width;
    ds.labels.height = stack.height;
    ds.labels.labels.assign(labels.samples.begin(), labels.samples.end());
    ds.labels.segments.assign(segments.samples.begin(), segments.samples.end());
  } catch (const json::exception& e) {
    throw DataError("invalid manifest " + manifest_path.string() + ": " + e.what());
  }
  ds.labels.validate();
  return ds;
}

fs::path save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& stack = ds.stack;
  json timestamps = json::array();
  char name[64];
  for (Index j = 0; j < stack.size(); ++j) {
    const auto& ts = stack.timestamps[static_cast<std::size_t>(j)];
    json files = json::array();
    if (ts.available) {
      // One RGB file for 3 channels, otherwise one gray file per channel.
      const Index h = stack.height, w = stack.width;
      auto quantize = [](float v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
      if (stack.channels == 3) {
        RawImage img{static_cast<int>(w), static_cast<int>(h), 3, 8, {}};
        img.samples.resize(static_cast<std::size_t>(w * h * 3));
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x)
            for (Index c = 0; c < 3; ++c)
              img.samples[static_cast<std::size_t>((y * w + x) * 3 + c)] = quantize(ts.image[(c * h + y) * w + x]);
        std::snprintf(name, sizeof name, "t%03ld.png", static_cast<long>(j));
        write_png(dir / name, img);
        files.push_back(name);
      } else {
        for (Index c = 0; c < stack.channels; ++c) {
          RawImage img{static_cast<int>(w), static_cast<int>(h), 1, 8, {}};
          img.samples.resize(static_cast<std::size_t>(w * h));
          for (Index i = 0; i < w * h; ++i) img.samples[static_cast<std::size_t>(i)] = quantize(ts.image[c * h * w + i]);
          std::snprintf(name, sizeof name, "t%03ld_c%ld.png", static_cast<long>(j), static_cast<long>(c));
          write_png(dir / name, img);
          files.push_back(name);
        }
      }
    }
    timestamps.push_back({{"label", ts.label}, {"files", files}, {"available", ts.available}});
  }

  const auto& lm = ds.labels;
  RawImage labels{static_cast<int>(lm.width), static_cast<int>(lm.height), 1, 8, {}};
  labels.samples.assign(lm.labels.begin(), lm.labels.end());
  write_png(dir / "labels.png", labels);
  RawImage segments{static_cast<int>(lm.width), static_cast<int>(lm.height), 1, 16, {}};
  segments.samples.reserve(lm.segments.size());
  for (auto s : lm.segments) {
    if (s < 0 || s > 65535) throw DataError("segment id out of 16-bit range");
    segments.samples.push_back(static_cast<std::uint16_t>(s));
  }
  write_png(dir / "segments.png", segments);

  json palette = json::array();
  for (const auto& c : lm.palette) palette.push_back({c[0], c[1], c[2]});
  const json manifest = {{"classes", lm.class_names},
                         {"palette", palette},
                         {"timestamps", timestamps},
                         {"labels", "labels.png"},
                         {"segments", "segments.png"}};
  const fs::path path = dir / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << '\n';
  return path;
}

// ---------------------------------------------------------------------------
// Windows

Index mirror_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void extract_window_into(const TemporalImageStack& stack, Index x, Index y, Index timestamp, Index size, float* dst) {
  if (timestamp < 0 || timestamp >= stack.size()) throw InputError("timestamp index out of range");
  if (x < 0 || y < 0 || x >= stack.width || y >= stack.height)
    throw InputError("pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the image");
  if (size < 1) throw ConfigError("window size must be >= 1");
  const auto& ts = stack.timestamps[static_cast<std::size_t>(timestamp)];
  if (!ts.available) throw AvailabilityError("timestamp " + ts.label + " has no image");

  const Index half = size / 2, h = stack.height, w = stack.width;
  std::vector<Index> cols(static_cast<std::size_t>(size));
  for (Index i = 0; i < size; ++i) cols[static_cast<std::size_t>(i)] = mirror_index(x - half + i, w);
  for (Index c = 0; c < stack.channels; ++c) {
    const float* plane = ts.image.data() + c * h * w;
    for (Index r = 0; r < size; ++r) {
      const float* row = plane + mirror_index(y - half + r, h) * w;
      float* out = dst + (c * size + r) * size;
      for (Index i = 0; i < size; ++i) out[i] = row[cols[static_cast<std::size_t>(i)]];
    }
  }
}

TensorF extract_window(const TemporalImageStack& stack, Index x, Index y, Index timestamp, Index size) {
  TensorF out(Shape{stack.channels, size, size});
  extract_window_into(stack, x, y, timestamp, size, out.data());
  return out;
}

std::vector<TensorF> assemble_batch(const TemporalImageStack& stack, std::span<const LabeledPixel> pixels,
                                    Index window_size) {
  std::vector<TensorF> batch(static_cast<std::size_t>(stack.size()));
  const Index n = static_cast<Index>(pixels.size());
  const Index plane = stack.channels * window_size * window_size;
  for (Index j = 0; j < stack.size(); ++j) {
    if (!stack.timestamps[static_cast<std::size_t>(j)].available) continue;
    TensorF t(Shape{n, stack.channels, window_size, window_size});
    for (Index b = 0; b < n; ++b) {
      const auto& p = pixels[static_cast<std::size_t>(b)];
      extract_window_into(stack, p.x, p.y, j, window_size, t.data() + b * plane);
    }
    batch[static_cast<std::size_t>(j)] = std::move(t);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Splits

SplitAssignment split_segments(const LabelMap& labels, double ratio, std::uint64_t seed, const SplitOptions& options) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::map<std::int32_t, int> segment_class;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] == kBackground) continue;
    const std::int32_t s = labels.segments[i];
    if (options.restrict_to && !options.restrict_to->count(s)) continue;
    const auto [it, inserted] = segment_class.emplace(s, labels.labels[i]);
    if (!inserted && it->second != labels.labels[i])
      throw DataError("segment " + std::to_string(s) + " mixes several classes");
  }

  const Index k = labels.num_classes();
  std::vector<std::vector<std::int32_t>> by_class(static_cast<std::size_t>(k));
  for (const auto& [s, c] : segment_class) by_class[static_cast<std::size_t>(c)].push_back(s);
  const Index floor = options.min_test_per_class;
  for (Index c = 0; c < k; ++c) {
    const auto n = static_cast<Index>(by_class[static_cast<std::size_t>(c)].size());
    if (n < floor + 1)
      throw DataError("split infeasible: class '" + labels.class_names[static_cast<std::size_t>(c)] + "' has " +
                      std::to_string(n) + " segment(s), needs at least " + std::to_string(floor + 1));
  }

  Rng rng(seed);
  std::vector<Index> taken(static_cast<std::size_t>(k), floor);
  for (auto& segs : by_class) shuffle(segs.begin(), segs.end(), rng);

  const auto total = static_cast<Index>(segment_class.size());
  const auto target = static_cast<Index>(std::llround((1.0 - ratio) * static_cast<double>(total)));
  Index in_test = floor * k;
  while (in_test < target) {
    Index best = -1, best_left = 1;
    for (Index c = 0; c < k; ++c) {
      const Index left = static_cast<Index>(by_class[static_cast<std::size_t>(c)].size()) - taken[static_cast<std::size_t>(c)];
      if (left > best_left) {
        best = c;
        best_left = left;
      }
    }
    if (best < 0) break;
    ++taken[static_cast<std::size_t>(best)];
    ++in_test;
  }

  SplitAssignment split;
  for (Index c = 0; c < k; ++c) {
    const auto& segs = by_class[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < segs.size(); ++i)
      (static_cast<Index>(i) < taken[static_cast<std::size_t>(c)] ? split.test : split.train).insert(segs[i]);
  }
  return split;
}

std::vector<LabeledPixel> annotated_pixels(const LabelMap& labels, const std::set<std::int32_t>* segments) {
  std::vector<LabeledPixel> out;
  for (Index y = 0; y < labels.height; ++y)
    for (Index x = 0; x < labels.width; ++x) {
      const auto l = labels.label(x, y);
      if (l == kBackground) continue;
      const auto s = labels.segment(x, y);
      if (segments && !segments->count(s)) continue;
      out.push_back({x, y, l, s});
    }
  return out;
}

}  // namespace mtcn
