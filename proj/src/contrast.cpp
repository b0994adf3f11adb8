#include "bvap/contrast.hpp"

#include <stdexcept>
#include <vector>

#include "bvap/init.hpp"
#include "bvap/ops.hpp"

namespace bvap {

ContrastConfig ContrastConfig::for_base(std::int64_t base_size) {
  ContrastConfig cfg;
  for (double& s : cfg.sigmas) s *= static_cast<double>(base_size) / 224.0;
  return cfg;
}

void ContrastConfig::validate() const {
  for (int l = 0; l < kPyramidLevels; ++l) {
    if (!(sigmas[l] > 0.0)) throw std::invalid_argument("contrast sigmas must be positive");
    if (l > 0 && !(sigmas[l] > sigmas[l - 1]))
      throw std::invalid_argument("contrast sigmas must be strictly increasing");
  }
  if (out_channels < 0) throw std::invalid_argument("contrast out_channels must be >= 0");
}

Tensor intensity_map(const Tensor& o) { return channel_mean(o); }

Tensor gaussian_pyramid(const Tensor& intensity, const ContrastConfig& cfg) {
  if (intensity.shape().c != 1)
    throw std::invalid_argument("gaussian_pyramid expects a single channel, got " +
                                intensity.shape().str());
  std::vector<Tensor> levels;
  levels.reserve(kPyramidLevels);
  for (const double s : cfg.sigmas) levels.push_back(gaussian_blur(intensity, s, Border::normalized));
  return concat_channels(levels);
}

void build_contrast(ParamStore& store, const std::string& prefix,
                    std::int64_t in_channels, const ContrastConfig& cfg,
                    std::mt19937_64& rng, double init_std) {
  cfg.validate();
  const std::int64_t out = cfg.out_channels > 0 ? cfg.out_channels : in_channels;
  const Shape merge{out, kPyramidLevels * in_channels, 1, 1};
  const Shape pyr{out, kPyramidLevels, 1, 1};
  store.add(prefix + ".merge.weight", truncated_normal(merge, init_std_for(merge, init_std), rng));
  store.add(prefix + ".pyramid.weight", truncated_normal(pyr, init_std_for(pyr, init_std), rng));
}

Tensor contrast_features(const Tensor& o, const ContrastConfig& cfg,
                         const ParamStore& params, const std::string& prefix) {
  const Tensor pyramid = gaussian_pyramid(intensity_map(o), cfg);
  const Tensor residuals = squared_residuals(o, pyramid);
  return add(conv2d(residuals, params.get(prefix + ".merge.weight"), Tensor{}),
             conv2d(pyramid, params.get(prefix + ".pyramid.weight"), Tensor{}));
}

}  // namespace bvap
