// Densely connected top-down fusion of the five feature levels into five
// full-resolution representations G1..G5.
//
//   R_i^0 = RA(F_i) at the common fused width, R_i^n = A(R_i^{n-1})
//   S_j   = sum_{i=j}^{4} w_i^j R_i^{i-j} + R_5^{4-j}
//   G_1 = RA(S_1),  G_j = A^{[j-1]}(S_j) for j = 2..4,  G_5 = R_5^3
//
// A is one resize-convolution (nearest x2, 3x3 conv) followed by an RA block.
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "bvap/attention.hpp"
#include "bvap/param_store.hpp"
#include "bvap/tensor.hpp"

namespace bvap {

inline constexpr int kLevels = 5;

struct DenseFusionConfig {
  std::int64_t fuse_channels = 32;
  /// false replaces every RA block by its relu(1x1 conv) part.
  bool attention = true;
  RABlockInit init{};
};

/// Nearest x2 upsampling followed by a 3x3 "same" convolution.
Tensor resize_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Registers "<prefix>.{k}.up.{weight,bias}" and RA block "<prefix>.{k}.ra"
/// for k = 1..count, all at `channels` width.
void build_tandem(ParamStore& store, const std::string& prefix, int count,
                  std::int64_t channels, const DenseFusionConfig& cfg, std::mt19937_64& rng);

/// A^{[count]}; count 0 is the identity.
Tensor tandem_A(const Tensor& x, int count, const ParamStore& params,
                const std::string& prefix);

/// Stage k (1-based) of a tandem chain.
Tensor tandem_stage(const Tensor& x, int k, const ParamStore& params,
                    const std::string& prefix);

/// "dense.w{j}_{i}"
std::string branch_weight_name(int j, int i);

void build_dense_fusion(ParamStore& store, const std::array<std::int64_t, kLevels>& in_channels,
                        const DenseFusionConfig& cfg, std::mt19937_64& rng);

std::array<Tensor, kLevels> dense_combine(const std::array<Tensor, kLevels>& f,
                                          const ParamStore& params);

}  // namespace bvap
