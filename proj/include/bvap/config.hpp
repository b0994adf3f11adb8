// key=value run configuration shared by every CLI command.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bvap/metrics.hpp"
#include "bvap/model.hpp"
#include "bvap/trainer.hpp"

namespace bvap {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  MetricOptions metrics;
  /// Groundtruth blur in map pixels; 0 selects 8 px scaled from 224.
  double density_sigma = 0.0;
  /// Fraction of the manifest held out for validation (last entries).
  double val_fraction = 0.1;
  /// Optional pretrained backbone checkpoint.
  std::string pretrained;

  double resolved_density_sigma() const;
};

struct ConfigKey {
  std::string_view name;
  std::string_view doc;
};

/// Every accepted key with a one-line description.
std::span<const ConfigKey> config_keys();

/// Lines are "key = value"; '#' starts a comment. Unknown keys, malformed
/// values and invalid combinations throw std::invalid_argument naming the
/// line.
RunConfig parse_run_config(std::string_view text, std::string_view origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets one key; throws on unknown keys or bad values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

/// Every key with its current value, parseable by parse_run_config.
std::string to_text(const RunConfig& cfg);

void validate(const RunConfig& cfg);

}  // namespace bvap
