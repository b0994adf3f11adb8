// Planar floating-point images with PNG and PGM/PPM input/output.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bvap {

/// Channel-major (C,H,W) samples in [0,1].
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 0;
  std::vector<double> data;

  double& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[(c * height + y) * width + x];
  }
};

/// PNG (gray or colour, alpha dropped) or binary/ASCII PGM/PPM, by content.
Image read_image(const std::filesystem::path& path);

/// 8-bit PNG; values are clamped to [0,1]. One or three channels.
void write_png(const std::filesystem::path& path, const Image& img);

/// Binary PGM (one channel) or PPM (three channels), 8-bit.
void write_pnm(const std::filesystem::path& path, const Image& img);

/// Half-pixel-centred bilinear resampling.
Image resize_bilinear(const Image& img, std::int64_t width, std::int64_t height);

}  // namespace bvap
