// Reduction-attention block: 1x1 reduction with relu, then a single
// fully connected layer and sigmoid over the pooled channel descriptor
// produce per-channel weights applied to the reduced feature.
#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "bvap/param_store.hpp"
#include "bvap/tensor.hpp"

namespace bvap {

struct RABlockParams {
  Tensor reduce_kernel;  // (C',C,1,1)
  Tensor reduce_bias;    // C' values
  Tensor fc_weight;      // (C',C',1,1); undefined disables the attention
  Tensor fc_bias;        // C' values
};

struct RABlockInit {
  double weight_std = 0.0;  // <= 0 selects He scaling
  double reduce_bias = 0.0;
};

/// Registers "<prefix>.reduce.{weight,bias}" and, with attention,
/// "<prefix>.fc.{weight,bias}".
void build_ra_block(ParamStore& store, const std::string& prefix, std::int64_t in,
                    std::int64_t out, bool attention, std::mt19937_64& rng,
                    const RABlockInit& init = {});

/// Looks the block up by prefix; fc tensors stay undefined when absent.
RABlockParams ra_params(const ParamStore& store, const std::string& prefix);

/// Output channel weights a = sigmoid(fc(mean(F'))), shape (B,C',1,1).
Tensor channel_weights(const Tensor& reduced, const RABlockParams& p);

/// Psi(a) * relu(conv1x1(F)), or just relu(conv1x1(F)) without fc weights.
Tensor reduction_attention(const Tensor& f, const RABlockParams& p);

}  // namespace bvap
