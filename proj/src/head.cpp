#include "bvap/head.hpp"

#include <cmath>
#include <stdexcept>

#include "bvap/init.hpp"
#include "bvap/ops.hpp"

namespace bvap {

namespace {

Tensor ra_stack(const Tensor& x, const ParamStore& params, const std::string& prefix) {
  Tensor y = x;
  for (int k = 1; k <= 3; ++k) y = reduction_attention(y, ra_params(params, prefix + "." + std::to_string(k)));
  return y;
}

void build_stack(ParamStore& store, const std::string& prefix, std::int64_t in,
                 const HeadConfig& cfg, std::mt19937_64& rng) {
  const std::array<std::int64_t, 4> widths{in, cfg.hidden[0], cfg.hidden[1], 1};
  for (int k = 1; k <= 3; ++k)
    build_ra_block(store, prefix + "." + std::to_string(k), widths[k - 1], widths[k],
                   cfg.attention, rng, cfg.init);
  for (double& w : store.entry(prefix + ".3.reduce.weight").tensor.mutable_values()) w = std::abs(w);
}

void require_map(const AttentionMap& m, const char* what) {
  if (!m.values.defined() || m.values.shape().c != 1)
    throw std::invalid_argument(std::string(what) + " must be a single-channel map");
}

}  // namespace

void build_readout(ParamStore& store, const std::string& prefix, std::int64_t in,
                   const HeadConfig& cfg, std::mt19937_64& rng) {
  build_stack(store, prefix, in, cfg, rng);
}

AttentionMap readout(const Tensor& g, const ParamStore& params, const std::string& prefix) {
  return AttentionMap{ra_stack(g, params, prefix), false};
}

void build_prior(ParamStore& store, std::int64_t size) {
  const double lv = 2.0 * std::log(static_cast<double>(size) / 4.0);
  store.add("head.prior.log_var_x", Tensor::scalar(lv, true));
  store.add("head.prior.log_var_y", Tensor::scalar(lv, true));
}

AttentionMap centre_bias_map(std::int64_t size, const ParamStore& params, std::int64_t batch) {
  return AttentionMap{centre_bias(params.get("head.prior.log_var_x"),
                                  params.get("head.prior.log_var_y"), size, batch),
                      false};
}

void build_fusion(ParamStore& store, int maps, const HeadConfig& cfg, std::mt19937_64& rng) {
  const std::int64_t in = maps + (cfg.prior ? 1 : 0);
  if (cfg.fusion == FusionKind::network) {
    build_stack(store, "head.fusion", in, cfg, rng);
  } else {
    store.add("head.fusion_sum.weight", Tensor::full(Shape{1, 1, 1, 1}, 1.0, true));
    store.add("head.fusion_sum.bias", Tensor::full(Shape{1, 1, 1, 1}, cfg.init.reduce_bias, true));
  }
}

AttentionMap normalized(const AttentionMap& m) {
  if (m.normalized) return m;
  return AttentionMap{normalize_per_image(m.values), true};
}

AttentionMap fuse(std::span<const AttentionMap> rough, const AttentionMap* prior,
                  const ParamStore& params, const HeadConfig& cfg, int expected_maps) {
  if (static_cast<int>(rough.size()) != expected_maps)
    throw std::invalid_argument("fuse expects " + std::to_string(expected_maps) +
                                " rough maps, got " + std::to_string(rough.size()));
  if (cfg.prior && prior == nullptr) throw std::invalid_argument("fuse: prior map missing");
  std::vector<Tensor> parts;
  for (const auto& m : rough) {
    require_map(m, "rough map");
    if (!m.normalized) throw std::invalid_argument("fuse: rough maps must be normalized");
    parts.push_back(m.values);
  }
  if (cfg.prior) {
    require_map(*prior, "prior map");
    parts.push_back(normalized(*prior).values);
  }
  const Shape& s = parts.front().shape();
  for (const auto& p : parts)
    if (p.shape() != s)
      throw std::invalid_argument("fuse: map " + p.shape().str() + " differs from " + s.str());
  const double area = static_cast<double>(s.plane());

  Tensor fused;
  if (cfg.fusion == FusionKind::network) {
    fused = ra_stack(mul_constant(concat_channels(parts), area), params, "head.fusion");
  } else {
    Tensor total = parts.front();
    for (std::size_t k = 1; k < parts.size(); ++k) total = add(total, parts[k]);
    fused = relu(conv2d(mul_constant(total, area), params.get("head.fusion_sum.weight"),
                        params.get("head.fusion_sum.bias")));
  }
  const Tensor kernel = gaussian_kernel2d(cfg.smoothing_sigma, cfg.smoothing_radius);
  return AttentionMap{normalize_per_image(conv2d(fused, kernel, Tensor{})), true};
}

Tensor kl_loss(const AttentionMap& m, const AttentionMap& z, double eps) {
  if (!m.normalized || !z.normalized)
    throw std::invalid_argument("kl_loss needs normalized maps");
  return kl_divergence(m.values, z.values, eps);
}

Tensor total_loss(std::span<const AttentionMap> rough, const AttentionMap& final_map,
                  const AttentionMap& z, double alpha,
                  const std::vector<std::vector<Tensor>>& branch_params, double eps) {
  if (!branch_params.empty() && branch_params.size() != rough.size())
    throw std::invalid_argument("total_loss: one parameter list per rough map required");
  Tensor loss = kl_loss(final_map, z, eps);
  for (std::size_t j = 0; j < rough.size(); ++j) {
    loss = add(loss, kl_loss(rough[j], z, eps));
    if (alpha == 0.0 || branch_params.empty()) continue;
    for (const Tensor& w : branch_params[j]) loss = add(loss, mul_constant(sum_squares(w), alpha));
  }
  return loss;
}

}  // namespace bvap
