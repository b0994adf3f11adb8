#include "bvap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "bvap/checkpoint.hpp"

namespace bvap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ParamStore snapshot(const ParamStore& src) {
  ParamStore copy;
  for (const auto& e : src.entries()) {
    copy.add(e.name, e.tensor.clone(true));
    copy.entry(e.name).slots = e.slots;
  }
  return copy;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw std::invalid_argument("rms_decay must lie in [0, 1)");
  if (!(rms_eps > 0.0)) throw std::invalid_argument("rms_eps must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

void rmsprop_step(ParamStore& store, const TrainConfig& cfg) {
  for (auto& e : store.entries())
    if (!e.tensor.has_grad())
      throw std::logic_error("rmsprop_step: parameter '" + e.name + "' has no gradient");
  const double rho = cfg.rms_decay, mu = cfg.momentum, lr = cfg.learning_rate;
  for (auto& e : store.entries()) {
    auto p = e.tensor.mutable_values();
    const auto g = e.tensor.grad();
    auto& s = e.slots.square_avg;
    auto& m = e.slots.momentum;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s[i] = rho * s[i] + (1.0 - rho) * g[i] * g[i];
      m[i] = mu * m[i] + lr * g[i] / std::sqrt(s[i] + cfg.rms_eps);
      p[i] -= m[i];
    }
    e.tensor.clear_grad();
  }
}

double evaluate_loss(const Model& model, std::span<const SampleRecord> samples,
                     std::int64_t batch_size, double alpha) {
  if (samples.empty()) return kNaN;
  NoGradGuard no_grad;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.resize(std::min<std::size_t>(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const ModelOutput out = model.forward(stack_images(samples, idx));
    total += model.loss(out, stack_densities(samples, idx), alpha).item() * idx.size();
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train(Model& model, std::span<const SampleRecord> train_set,
                  std::span<const SampleRecord> val_set, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const bool has_val = !val_set.empty();
  const bool persist = !options.checkpoint_path.empty();
  TrainResult result;
  result.checkpoint = options.checkpoint_path;

  ParamStore& params = model.params();
  ParamStore best = snapshot(params);
  double best_val = has_val ? evaluate_loss(model, val_set, cfg.batch_size, cfg.weight_decay) : kNaN;
  result.history.push_back({0, kNaN, best_val});
  if (persist) save_checkpoint(params, options.checkpoint_path);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double prev_val = best_val;
  std::int64_t increases = 0;
  bool done = false;

  for (std::int64_t epoch = 0; epoch < cfg.max_epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size() && !done; start += cfg.batch_size) {
      const std::span<const std::size_t> idx(
          order.data() + start, std::min<std::size_t>(cfg.batch_size, order.size() - start));
      const ModelOutput out = model.forward(stack_images(train_set, idx));
      const Tensor loss = model.loss(out, stack_densities(train_set, idx), cfg.weight_decay);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        params.zero_grad();
        result.aborted = true;
        done = true;
        break;
      }
      loss.backward();
      rmsprop_step(params, cfg);
      ++result.steps;
      result.history.push_back({result.steps, value, kNaN});
      if (options.on_step) options.on_step(result.history.back());
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) done = true;
    }
    result.epochs = epoch + 1;
    if (result.aborted) break;

    if (!has_val) {
      best = snapshot(params);
      if (persist) save_checkpoint(params, options.checkpoint_path);
      continue;
    }
    const double val = evaluate_loss(model, val_set, cfg.batch_size, cfg.weight_decay);
    result.history.back().val_loss = val;
    if (!std::isfinite(val)) {
      result.aborted = true;
      break;
    }
    if (!(val >= best_val)) {
      best_val = val;
      best = snapshot(params);
      if (persist) save_checkpoint(params, options.checkpoint_path);
    }
    increases = val > prev_val ? increases + 1 : 0;
    prev_val = val;
    if (increases >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  params.assign_from(best);
  result.best_val_loss = best_val;
  return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,train_loss,val_loss\n" << std::setprecision(17);
  auto cell = [&os](double v) {
    if (std::isfinite(v)) os << v;
  };
  for (const auto& r : history) {
    os << r.step << ',';
    cell(r.train_loss);
    os << ',';
    cell(r.val_loss);
    os << '\n';
  }
}

}  // namespace bvap
