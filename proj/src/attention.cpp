#include "bvap/attention.hpp"

#include <stdexcept>

#include "bvap/init.hpp"
#include "bvap/ops.hpp"

namespace bvap {

void build_ra_block(ParamStore& store, const std::string& prefix, std::int64_t in,
                    std::int64_t out, bool attention, std::mt19937_64& rng,
                    const RABlockInit& init) {
  const Shape rk{out, in, 1, 1};
  store.add(prefix + ".reduce.weight", truncated_normal(rk, init_std_for(rk, init.weight_std), rng));
  store.add(prefix + ".reduce.bias", Tensor::full(Shape{1, out, 1, 1}, init.reduce_bias, true));
  if (!attention) return;
  const Shape fk{out, out, 1, 1};
  store.add(prefix + ".fc.weight", truncated_normal(fk, init_std_for(fk, init.weight_std), rng));
  store.add(prefix + ".fc.bias", Tensor::zeros(Shape{1, out, 1, 1}, true));
}

RABlockParams ra_params(const ParamStore& store, const std::string& prefix) {
  RABlockParams p;
  p.reduce_kernel = store.get(prefix + ".reduce.weight");
  p.reduce_bias = store.get(prefix + ".reduce.bias");
  if (store.contains(prefix + ".fc.weight")) {
    p.fc_weight = store.get(prefix + ".fc.weight");
    p.fc_bias = store.get(prefix + ".fc.bias");
  }
  return p;
}

Tensor channel_weights(const Tensor& reduced, const RABlockParams& p) {
  return sigmoid(conv2d(global_avg_pool(reduced), p.fc_weight, p.fc_bias));
}

Tensor reduction_attention(const Tensor& f, const RABlockParams& p) {
  const Shape& k = p.reduce_kernel.shape();
  if (k.h != 1 || k.w != 1)
    throw std::invalid_argument("reduction_attention needs a 1x1 reduction kernel, got " + k.str());
  if (f.shape().c != k.c)
    throw std::invalid_argument("reduction_attention: input has " + std::to_string(f.shape().c) +
                                " channels, block expects " + std::to_string(k.c));
  const Tensor reduced = relu(conv2d(f, p.reduce_kernel, p.reduce_bias));
  if (!p.fc_weight.defined()) return reduced;
  const Shape& fc = p.fc_weight.shape();
  if (fc.n != k.n || fc.c != k.n)
    throw std::invalid_argument("reduction_attention: fc weight " + fc.str() +
                                " does not match reduced width " + std::to_string(k.n));
  return channel_scale(reduced, channel_weights(reduced, p));
}

}  // namespace bvap
