#include "bvap/backbone.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "bvap/checkpoint.hpp"
#include "bvap/init.hpp"
#include "bvap/ops.hpp"

namespace bvap {

namespace {
constexpr std::array<std::int64_t, 5> kCanonicalWidths{64, 128, 256, 512, 512};
}

std::array<std::int64_t, 5> BackboneConfig::widths() const {
  std::array<std::int64_t, 5> out{};
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max<std::int64_t>(
        1, std::llround(static_cast<double>(kCanonicalWidths[i]) * width_factor));
  return out;
}

void BackboneConfig::validate() const {
  if (!(width_factor > 0.0 && width_factor <= 1.0))
    throw std::invalid_argument("width_factor must lie in (0, 1]");
  if (base_size < 8 || base_size % 8 != 0)
    throw std::invalid_argument("base_size must be a positive multiple of 8, got " +
                                std::to_string(base_size));
  if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
}

std::string backbone_param_name(int block, int layer, bool bias) {
  std::ostringstream os;
  os << "backbone.conv" << block << '_' << layer << (bias ? ".bias" : ".weight");
  return os.str();
}

ParamStore build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  const auto widths = cfg.widths();
  std::int64_t cin = cfg.in_channels;
  for (int b = 0; b < 5; ++b) {
    for (int l = 0; l < kConvsPerBlock[b]; ++l) {
      const Shape ks{widths[b], cin, 3, 3};
      store.add(backbone_param_name(b + 1, l + 1, false),
                truncated_normal(ks, init_std_for(ks, cfg.init_std), rng));
      store.add(backbone_param_name(b + 1, l + 1, true),
                Tensor::zeros(Shape{1, widths[b], 1, 1}, true));
      cin = widths[b];
    }
  }
  return store;
}

BackboneOutputs forward_backbone(const ParamStore& params,
                                 const BackboneConfig& cfg, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.c != cfg.in_channels || s.h != cfg.base_size || s.w != cfg.base_size)
    throw std::invalid_argument("backbone expects (B," + std::to_string(cfg.in_channels) +
                                "," + std::to_string(cfg.base_size) + "," +
                                std::to_string(cfg.base_size) + ") input, got " + s.str());
  BackboneOutputs out;
  std::array<Tensor*, 5> taps{&out.f1_raw, &out.f2_raw, &out.f3, &out.f4, &out.f5};
  Tensor x = image;
  for (int b = 0; b < 5; ++b) {
    const int dilation = b == 4 ? 2 : 1;
    for (int l = 0; l < kConvsPerBlock[b]; ++l) {
      x = relu(conv2d(x, params.get(backbone_param_name(b + 1, l + 1, false)),
                      params.get(backbone_param_name(b + 1, l + 1, true)), 1,
                      dilation, Padding::same));
    }
    *taps[b] = x;
    if (b < 3) {
      x = max_pool2d(x, 2, 2, Padding::valid);
    } else if (b == 3) {
      x = max_pool2d(x, 2, 1, Padding::same);
    }
  }
  return out;
}

void import_pretrained(ParamStore& params, const BackboneConfig& cfg,
                       const std::filesystem::path& file) {
  if (cfg.width_factor != 1.0)
    throw std::invalid_argument("pretrained import requires width_factor = 1");
  const ParamStore loaded = load_checkpoint(file);

  std::vector<std::string> problems;
  for (const auto& e : loaded.entries()) {
    if (!params.contains(e.name) || e.name.rfind("backbone.", 0) != 0) {
      problems.push_back(e.name + " (unknown)");
    } else if (params.get(e.name).shape() != e.tensor.shape()) {
      problems.push_back(e.name + " (shape " + e.tensor.shape().str() + ", expected " +
                         params.get(e.name).shape().str() + ")");
    }
  }
  for (int b = 1; b <= 4; ++b)
    for (int l = 1; l <= kConvsPerBlock[b - 1]; ++l)
      for (const bool bias : {false, true}) {
        const std::string name = backbone_param_name(b, l, bias);
        if (!loaded.contains(name)) problems.push_back(name + " (missing)");
      }
  if (!problems.empty()) {
    std::string msg = "pretrained import rejected:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw std::invalid_argument(msg);
  }
  for (const auto& e : loaded.entries()) {
    auto dst = params.entry(e.name).tensor.mutable_values();
    std::copy(e.tensor.values().begin(), e.tensor.values().end(), dst.begin());
  }
}

}  // namespace bvap
