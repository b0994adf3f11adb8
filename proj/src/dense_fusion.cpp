#include "bvap/dense_fusion.hpp"

#include <stdexcept>
#include <vector>

#include "bvap/init.hpp"
#include "bvap/ops.hpp"

namespace bvap {

namespace {

std::string lateral(int i) { return "dense.lat" + std::to_string(i); }
std::string chain(int i) { return "dense.chain" + std::to_string(i); }
std::string out_chain(int j) { return "dense.out" + std::to_string(j); }

// Longest chain needed per level: R_i^{i-1} for i <= 4, R_5^3.
constexpr std::array<int, kLevels> kChainLength{0, 1, 2, 3, 3};

}  // namespace

Tensor resize_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  return conv2d(nearest_resize(x, 2), kernel, bias, 1, 1, Padding::same);
}

void build_tandem(ParamStore& store, const std::string& prefix, int count,
                  std::int64_t channels, const DenseFusionConfig& cfg, std::mt19937_64& rng) {
  for (int k = 1; k <= count; ++k) {
    const std::string stage = prefix + "." + std::to_string(k);
    const Shape ks{channels, channels, 3, 3};
    store.add(stage + ".up.weight",
              truncated_normal(ks, init_std_for(ks, cfg.init.weight_std), rng));
    store.add(stage + ".up.bias", Tensor::zeros(Shape{1, channels, 1, 1}, true));
    build_ra_block(store, stage + ".ra", channels, channels, cfg.attention, rng, cfg.init);
  }
}

Tensor tandem_stage(const Tensor& x, int k, const ParamStore& params,
                    const std::string& prefix) {
  const std::string stage = prefix + "." + std::to_string(k);
  const Tensor up = resize_conv(x, params.get(stage + ".up.weight"), params.get(stage + ".up.bias"));
  return reduction_attention(up, ra_params(params, stage + ".ra"));
}

Tensor tandem_A(const Tensor& x, int count, const ParamStore& params,
                const std::string& prefix) {
  if (count < 0) throw std::invalid_argument("tandem_A: count must be >= 0");
  Tensor y = x;
  for (int k = 1; k <= count; ++k) y = tandem_stage(y, k, params, prefix);
  return y;
}

std::string branch_weight_name(int j, int i) {
  return "dense.w" + std::to_string(j) + "_" + std::to_string(i);
}

void build_dense_fusion(ParamStore& store, const std::array<std::int64_t, kLevels>& in_channels,
                        const DenseFusionConfig& cfg, std::mt19937_64& rng) {
  const std::int64_t c = cfg.fuse_channels;
  if (c < 1) throw std::invalid_argument("fuse_channels must be >= 1");
  for (int i = 1; i <= kLevels; ++i) {
    build_ra_block(store, lateral(i), in_channels[i - 1], c, cfg.attention, rng, cfg.init);
    build_tandem(store, chain(i), kChainLength[i - 1], c, cfg, rng);
  }
  for (int j = 1; j <= kLevels - 1; ++j)
    for (int i = j; i <= kLevels - 1; ++i)
      store.add(branch_weight_name(j, i), Tensor::scalar(1.0, true));
  build_ra_block(store, out_chain(1), c, c, cfg.attention, rng, cfg.init);
  for (int j = 2; j <= kLevels - 1; ++j) build_tandem(store, out_chain(j), j - 1, c, cfg, rng);
}

std::array<Tensor, kLevels> dense_combine(const std::array<Tensor, kLevels>& f,
                                          const ParamStore& params) {
  // r[i][n] = R_{i+1}^n
  std::array<std::vector<Tensor>, kLevels> r;
  for (int i = 1; i <= kLevels; ++i) {
    auto& ri = r[i - 1];
    ri.push_back(reduction_attention(f[i - 1], ra_params(params, lateral(i))));
    for (int n = 1; n <= kChainLength[i - 1]; ++n)
      ri.push_back(tandem_stage(ri.back(), n, params, chain(i)));
  }
  const std::int64_t size = r[0][0].shape().h;

  std::array<Tensor, kLevels> g;
  for (int j = 1; j <= kLevels - 1; ++j) {
    Tensor s = r[kLevels - 1][kLevels - 1 - j];
    for (int i = j; i <= kLevels - 1; ++i) {
      const Tensor& term = r[i - 1][i - j];
      if (term.shape() != s.shape())
        throw std::invalid_argument("dense_combine: level " + std::to_string(i) + " gives " +
                                    term.shape().str() + " but branch " + std::to_string(j) +
                                    " needs " + s.shape().str());
      s = add(s, scale_by(term, params.get(branch_weight_name(j, i))));
    }
    g[j - 1] = j == 1 ? reduction_attention(s, ra_params(params, out_chain(1)))
                      : tandem_A(s, j - 1, params, out_chain(j));
  }
  g[kLevels - 1] = r[kLevels - 1].back();
  for (const Tensor& gj : g)
    if (gj.shape().h != size || gj.shape().w != size)
      throw std::invalid_argument("dense_combine: output " + gj.shape().str() +
                                  " does not reach full size " + std::to_string(size));
  return g;
}

}  // namespace bvap
