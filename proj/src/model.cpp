#include "bvap/model.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "bvap/ops.hpp"
#include "kink_monitor.hpp"

namespace bvap {

namespace {

constexpr std::array<std::pair<Mode, std::string_view>, 7> kModeNames{{
    {Mode::NCF, "NCF"},
    {Mode::CF, "CF"},
    {Mode::SF, "SF"},
    {Mode::DCF, "DCF"},
    {Mode::DenCF, "DenCF"},
    {Mode::DenCF_CBP, "DenCF+CBP"},
    {Mode::full, "full"},
}};

std::string direct_lateral(int i) { return "direct.lat" + std::to_string(i); }
std::string readout_prefix(int j) { return "head.readout" + std::to_string(j); }

}  // namespace

std::string_view mode_name(Mode m) {
  for (const auto& [mode, name] : kModeNames)
    if (mode == m) return name;
  return "?";
}

std::optional<Mode> parse_mode(std::string_view s) {
  for (const auto& [mode, name] : kModeNames)
    if (name == s) return mode;
  return std::nullopt;
}

Wiring wiring_for(Mode m) {
  Wiring w;
  switch (m) {
    case Mode::NCF:
      w.contrast = false;
      [[fallthrough]];
    case Mode::CF:
      w.levels = {true, true, false, false, false};
      break;
    case Mode::SF:
      w.contrast = false;
      w.levels = {false, false, true, true, true};
      break;
    case Mode::DCF:
      break;
    case Mode::DenCF:
      w.prior = false;
      w.attention = false;
      return w;
    case Mode::DenCF_CBP:
      w.attention = false;
      return w;
    case Mode::full:
      return w;
  }
  w.dense = false;
  w.prior = false;
  w.attention = false;
  return w;
}

std::int64_t ModelConfig::resolved_fuse_channels() const {
  if (fuse_channels > 0) return fuse_channels;
  return std::max<std::int64_t>(8, std::llround(256.0 * backbone.width_factor));
}

ContrastConfig ModelConfig::contrast() const {
  ContrastConfig c;
  for (int l = 0; l < kPyramidLevels; ++l)
    c.sigmas[l] = contrast_sigmas[l] * static_cast<double>(backbone.base_size) / 224.0;
  return c;
}

void ModelConfig::validate() const {
  backbone.validate();
  contrast().validate();
  if (fuse_channels < 0) throw std::invalid_argument("fuse_channels must be >= 0");
  if (head.hidden[0] < 1 || head.hidden[1] < 1)
    throw std::invalid_argument("head widths must be >= 1");
  if (!(head.smoothing_sigma > 0.0) || head.smoothing_radius < 0)
    throw std::invalid_argument("smoothing needs sigma > 0 and radius >= 0");
  if (!(head.kl_eps > 0.0)) throw std::invalid_argument("kl_eps must be > 0");
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), wiring_(wiring_for(cfg_.mode)) {
  cfg_.validate();
  cfg_.head.attention = wiring_.attention;
  cfg_.head.prior = wiring_.prior;
  params_ = build_backbone(cfg_.backbone, seed);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  const auto widths = cfg_.backbone.widths();
  const std::int64_t fc = cfg_.resolved_fuse_channels();
  const ContrastConfig contrast = cfg_.contrast();
  if (wiring_.contrast) {
    build_contrast(params_, "contrast.f1", widths[0], contrast, rng, cfg_.head.init.weight_std);
    build_contrast(params_, "contrast.f2", widths[1], contrast, rng, cfg_.head.init.weight_std);
  }
  if (wiring_.dense) {
    DenseFusionConfig dc{fc, wiring_.attention, cfg_.head.init};
    build_dense_fusion(params_, widths, dc, rng);
    for (int j = 1; j <= kLevels; ++j) build_readout(params_, readout_prefix(j), fc, cfg_.head, rng);
  } else {
    std::int64_t used = 0;
    for (int i = 1; i <= kLevels; ++i) {
      if (!wiring_.levels[i - 1]) continue;
      build_ra_block(params_, direct_lateral(i), widths[i - 1], fc, false, rng, cfg_.head.init);
      ++used;
    }
    build_readout(params_, readout_prefix(1), fc * used, cfg_.head, rng);
  }
  if (wiring_.prior) build_prior(params_, cfg_.backbone.base_size);
  build_fusion(params_, rough_count(), cfg_.head, rng);
}

int Model::rough_count() const { return wiring_.dense ? kLevels : 1; }

ModelOutput Model::forward(const Tensor& images) const {
  ModelOutput out;
  const BackboneOutputs b = forward_backbone(params_, cfg_.backbone, images);
  auto& f = out.features.f;
  f = {b.f1_raw, b.f2_raw, b.f3, b.f4, b.f5};
  if (wiring_.contrast) {
    const ContrastConfig contrast = cfg_.contrast();
    if (wiring_.levels[0]) f[0] = contrast_features(b.f1_raw, contrast, params_, "contrast.f1");
    if (wiring_.levels[1]) f[1] = contrast_features(b.f2_raw, contrast, params_, "contrast.f2");
  }
  for (int i = 0; i < kLevels; ++i)
    if (!wiring_.levels[i]) f[i] = Tensor{};

  const std::int64_t size = cfg_.backbone.base_size;
  if (wiring_.dense) {
    const auto g = dense_combine(f, params_);
    out.features.g.assign(g.begin(), g.end());
    for (int j = 1; j <= kLevels; ++j)
      out.rough.push_back(normalized(readout(g[j - 1], params_, readout_prefix(j))));
  } else {
    std::vector<Tensor> parts;
    for (int i = 1; i <= kLevels; ++i) {
      if (!wiring_.levels[i - 1]) continue;
      Tensor r = reduction_attention(f[i - 1], ra_params(params_, direct_lateral(i)));
      const std::int64_t factor = size / r.shape().h;
      if (factor > 1) r = nearest_resize(r, static_cast<int>(factor));
      parts.push_back(r);
    }
    const Tensor g = concat_channels(parts);
    out.features.g.push_back(g);
    out.rough.push_back(normalized(readout(g, params_, readout_prefix(1))));
  }
  if (wiring_.prior) out.prior = centre_bias_map(size, params_, images.shape().n);
  out.final_map = fuse(out.rough, wiring_.prior ? &out.prior : nullptr, params_, cfg_.head,
                       rough_count());
  return out;
}

std::vector<std::vector<Tensor>> Model::branch_parameters() const {
  {
    std::lock_guard lock(branch_cache_->mutex);
    if (!branch_cache_->ready) {
      EnableGradGuard grad;
      detail::PauseKinkRecording pause;
      const std::int64_t s = cfg_.backbone.base_size;
      const ModelOutput probe =
          forward(Tensor::zeros(Shape{1, cfg_.backbone.in_channels, s, s}));
      std::unordered_map<const detail::Node*, std::string> names;
      for (const auto& e : params_.entries()) names.emplace(e.tensor.node().get(), e.name);
      for (const auto& m : probe.rough) {
        auto& list = branch_cache_->names.emplace_back();
        for (const Tensor& t : m.values.reachable_parameters()) {
          const auto it = names.find(t.node().get());
          if (it != names.end()) list.push_back(it->second);
        }
      }
      branch_cache_->ready = true;
    }
  }
  std::vector<std::vector<Tensor>> out;
  for (const auto& list : branch_cache_->names) {
    auto& ts = out.emplace_back();
    for (const auto& n : list) ts.push_back(params_.get(n));
  }
  return out;
}

Tensor Model::loss(const ModelOutput& out, const AttentionMap& density, double alpha) const {
  std::vector<std::vector<Tensor>> branch;
  if (alpha != 0.0) branch = branch_parameters();
  return total_loss(out.rough, out.final_map, density, alpha, branch, cfg_.head.kl_eps);
}

AttentionMap Model::predict(const Tensor& images) const {
  NoGradGuard no_grad;
  return forward(images).final_map;
}

}  // namespace bvap
