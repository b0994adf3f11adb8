// RMSProp with a momentum buffer, minibatch loop, and validation-based
// early stopping.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bvap/dataset.hpp"
#include "bvap/model.hpp"
#include "bvap/param_store.hpp"

namespace bvap {

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::int64_t batch_size = 4;
  std::int64_t max_epochs = 100;
  double rms_decay = 0.9;
  double rms_eps = 1e-8;
  std::uint64_t seed = 1;
  /// Stop after this many optimizer steps; 0 means no limit.
  std::int64_t max_steps = 0;
  /// Consecutive validation increases that end training.
  std::int64_t patience = 2;

  void validate() const;
};

/// s = rho s + (1-rho) g^2;  m = mu m + lr g / sqrt(s + eps);  p -= m.
/// Every entry needs a gradient; gradients are cleared afterwards.
void rmsprop_step(ParamStore& store, const TrainConfig& cfg);

struct LossRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when not evaluated at this step
};

struct TrainResult {
  std::filesystem::path checkpoint;  // best validation (or last) parameters
  std::vector<LossRecord> history;
  std::int64_t steps = 0;
  std::int64_t epochs = 0;
  bool early_stopped = false;
  bool aborted = false;  // non-finite loss
  double best_val_loss = 0.0;
};

struct TrainOptions {
  std::filesystem::path checkpoint_path;  // empty: keep the best in memory only
  std::function<void(const LossRecord&)> on_step;
};

/// Mean per-image total loss over `samples`, without recording a graph.
double evaluate_loss(const Model& model, std::span<const SampleRecord> samples,
                     std::int64_t batch_size, double alpha);

/// On return the model holds the best-validation parameters.
TrainResult train(Model& model, std::span<const SampleRecord> train_set,
                  std::span<const SampleRecord> val_set, const TrainConfig& cfg,
                  const TrainOptions& options = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

}  // namespace bvap
