// Contrast feature extraction: centre-surround residuals between every raw
// channel and a Gaussian pyramid of the channel-mean intensity, merged by
// two learnable 1x1 convolutions.
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "bvap/param_store.hpp"
#include "bvap/tensor.hpp"

namespace bvap {

inline constexpr int kPyramidLevels = 5;

struct ContrastConfig {
  /// Pyramid standard deviations in feature-map pixels, strictly increasing.
  std::array<double, kPyramidLevels> sigmas{5.0, 10.0, 20.0, 40.0, 80.0};
  /// Output channels C1''; 0 keeps the input channel count.
  std::int64_t out_channels = 0;

  /// Default sigmas rescaled from the 224 reference to `base_size`.
  static ContrastConfig for_base(std::int64_t base_size);
  void validate() const;
};

/// Channel mean, (B,C,H,W) -> (B,1,H,W).
Tensor intensity_map(const Tensor& o);

/// (B,1,H,W) -> (B,L,H,W); level l is the normalized-border blur at sigma_l.
Tensor gaussian_pyramid(const Tensor& intensity, const ContrastConfig& cfg);

/// Registers "<prefix>.merge.weight" (C'',5*C1,1,1) and
/// "<prefix>.pyramid.weight" (C'',5,1,1). No biases.
void build_contrast(ParamStore& store, const std::string& prefix,
                    std::int64_t in_channels, const ContrastConfig& cfg,
                    std::mt19937_64& rng, double init_std);

/// conv(residuals, W_AM) + conv(pyramid, W'_AM).
Tensor contrast_features(const Tensor& o, const ContrastConfig& cfg,
                         const ParamStore& params, const std::string& prefix);

}  // namespace bvap
