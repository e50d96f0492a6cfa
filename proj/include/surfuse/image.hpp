#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "surfuse/tensor.hpp"

namespace surfuse {

/// Decoded 8-bit image, interleaved HWC.
struct Image8 {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(Index y, Index x, Index c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

/// Real-valued image, interleaved HWC.
struct FloatImage {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<double> pixels;

  double& at(Index y, Index x, Index c) { return pixels[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  double at(Index y, Index x, Index c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

/// PNG or JPEG, selected by content. Grey and grey+alpha inputs expand to RGB and
/// alpha is dropped, so the result always has three channels.
Image8 decode_image(const std::filesystem::path& path);
bool is_image_file(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image8& image);

/// Scale 8-bit values to [0, 1].
FloatImage to_unit_range(const Image8& image);

/// Bilinear resampling with half-pixel centres and edge clamping. A same-size resize
/// returns the input unchanged.
FloatImage resize_bilinear(const FloatImage& image, Index height, Index width);

}  // namespace surfuse
