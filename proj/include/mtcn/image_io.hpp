#ifndef MTCN_IMAGE_IO_HPP
#define MTCN_IMAGE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mtcn {

/// Decoded PNG, interleaved samples, row-major.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray) or 3 (RGB); alpha is dropped
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

RawImage read_png(const std::filesystem::path& path);

/// Writes 8- or 16-bit gray/RGB; output bytes depend only on the samples.
void write_png(const std::filesystem::path& path, const RawImage& image);

}  // namespace mtcn

#endif  // MTCN_IMAGE_IO_HPP
