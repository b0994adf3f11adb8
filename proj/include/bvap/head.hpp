// Readout networks, learnable centre-bias prior, weighted fusion and losses.
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bvap/attention.hpp"
#include "bvap/param_store.hpp"
#include "bvap/tensor.hpp"

namespace bvap {

/// Single-channel nonnegative map (B,1,S,S).
struct AttentionMap {
  Tensor values;
  bool normalized = false;
};

enum class FusionKind { network, sum };

struct HeadConfig {
  /// Hidden widths of the readout and fusion stacks; the last block outputs 1.
  std::array<std::int64_t, 2> hidden{32, 16};
  FusionKind fusion = FusionKind::network;
  double smoothing_sigma = 1.5;
  int smoothing_radius = 3;  // 7x7
  double kl_eps = 1e-8;
  bool attention = true;
  bool prior = true;
  RABlockInit init{0.0, 0.1};
};

/// Registers "<prefix>.{1,2,3}" RA blocks: in -> hidden[0] -> hidden[1] -> 1.
void build_readout(ParamStore& store, const std::string& prefix, std::int64_t in,
                   const HeadConfig& cfg, std::mt19937_64& rng);
AttentionMap readout(const Tensor& g, const ParamStore& params, const std::string& prefix);

/// "head.prior.log_var_x" / "head.prior.log_var_y", initialised to (S/4)^2.
void build_prior(ParamStore& store, std::int64_t size);
AttentionMap centre_bias_map(std::int64_t size, const ParamStore& params, std::int64_t batch = 1);

/// Fusion layer over `maps` rough maps (+1 when the prior is on).
void build_fusion(ParamStore& store, int maps, const HeadConfig& cfg, std::mt19937_64& rng);

/// Rough maps must be normalized. Output is smoothed and normalized.
/// `prior` may be null when the configuration has no prior.
AttentionMap fuse(std::span<const AttentionMap> rough, const AttentionMap* prior,
                  const ParamStore& params, const HeadConfig& cfg, int expected_maps);

AttentionMap normalized(const AttentionMap& m);

/// Batch mean of sum_t Z log(Z / (M + eps) + eps); both maps normalized.
Tensor kl_loss(const AttentionMap& m, const AttentionMap& z, double eps);

/// sum_j [KL(M_j, Z) + alpha * sum(W_j^2)] + KL(M_final, Z). `branch_params[j]`
/// lists the parameters feeding rough map j.
Tensor total_loss(std::span<const AttentionMap> rough, const AttentionMap& final_map,
                  const AttentionMap& z, double alpha,
                  const std::vector<std::vector<Tensor>>& branch_params, double eps);

}  // namespace bvap
