// End-to-end attention network and its ablation wirings.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bvap/backbone.hpp"
#include "bvap/contrast.hpp"
#include "bvap/dense_fusion.hpp"
#include "bvap/head.hpp"
#include "bvap/param_store.hpp"

namespace bvap {

enum class Mode { NCF, CF, SF, DCF, DenCF, DenCF_CBP, full };

std::string_view mode_name(Mode m);
/// Accepts the names printed by mode_name ("DenCF+CBP" for DenCF_CBP).
std::optional<Mode> parse_mode(std::string_view s);

struct Wiring {
  bool contrast = true;
  std::array<bool, kLevels> levels{true, true, true, true, true};
  bool dense = true;
  bool prior = true;
  bool attention = true;
};

Wiring wiring_for(Mode m);

struct ModelConfig {
  BackboneConfig backbone;
  /// Contrast sigmas at the 224 reference; rescaled to base_size.
  std::array<double, kPyramidLevels> contrast_sigmas{5.0, 10.0, 20.0, 40.0, 80.0};
  /// 0 selects max(8, round(256 * width_factor)).
  std::int64_t fuse_channels = 0;
  Mode mode = Mode::full;
  HeadConfig head;

  std::int64_t resolved_fuse_channels() const;
  ContrastConfig contrast() const;
  void validate() const;
};

struct FeaturePack {
  std::array<Tensor, kLevels> f;  // undefined for levels the wiring drops
  std::vector<Tensor> g;
};

struct ModelOutput {
  FeaturePack features;
  std::vector<AttentionMap> rough;  // normalized
  AttentionMap prior;               // undefined without a prior
  AttentionMap final_map;           // normalized
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Wiring& wiring() const { return wiring_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int rough_count() const;

  /// images: (B, in_channels, S, S).
  ModelOutput forward(const Tensor& images) const;

  /// Total training loss for a forward result against normalized densities.
  Tensor loss(const ModelOutput& out, const AttentionMap& density, double alpha) const;

  /// Parameters feeding each rough map (graph-derived once, then cached).
  std::vector<std::vector<Tensor>> branch_parameters() const;

  /// Final map without recording a graph.
  AttentionMap predict(const Tensor& images) const;

 private:
  ModelConfig cfg_;
  Wiring wiring_;
  ParamStore params_;

  struct BranchCache {
    std::mutex mutex;
    std::vector<std::vector<std::string>> names;
    bool ready = false;
  };
  std::shared_ptr<BranchCache> branch_cache_ = std::make_shared<BranchCache>();
};

}  // namespace bvap
