// VGG16 convolutional trunk refined for dense prediction: no fully connected
// layers, no final pool, a stride-1 fourth pool, and dilation 2 in block 5 so
// F4 and F5 share a resolution.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "bvap/param_store.hpp"
#include "bvap/tensor.hpp"

namespace bvap {

struct BackboneConfig {
  std::int64_t base_size = 224;
  /// Scales the canonical widths 64,128,256,512,512; must lie in (0, 1].
  double width_factor = 1.0;
  std::int64_t in_channels = 3;
  /// Truncated-normal std for every kernel; <= 0 selects He scaling.
  double init_std = 0.0;

  std::array<std::int64_t, 5> widths() const;
  void validate() const;
};

struct BackboneOutputs {
  Tensor f1_raw;  // conv1_2, S
  Tensor f2_raw;  // conv2_2, S/2
  Tensor f3;      // conv3_3, S/4
  Tensor f4;      // conv4_3, S/8
  Tensor f5;      // conv5_3, S/8
};

inline constexpr std::array<int, 5> kConvsPerBlock{2, 2, 3, 3, 3};

/// "backbone.conv{block}_{layer}.{weight,bias}"
std::string backbone_param_name(int block, int layer, bool bias);

/// 13 kernels from a truncated normal (seeded), biases zero.
ParamStore build_backbone(const BackboneConfig& cfg, std::uint64_t seed);

BackboneOutputs forward_backbone(const ParamStore& params,
                                 const BackboneConfig& cfg, const Tensor& image);

/// Overwrites blocks 1-4 from a checkpoint file. Block-5 entries in the file
/// are applied when present; other names, shape mismatches, or missing
/// block 1-4 entries are rejected. Requires width_factor == 1.
void import_pretrained(ParamStore& params, const BackboneConfig& cfg,
                       const std::filesystem::path& file);

}  // namespace bvap
