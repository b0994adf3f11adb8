// Central-difference verification of reverse-mode gradients.
#pragma once

#include <cstdint>
#include <functional>

#include "bvap/tensor.hpp"

namespace bvap {

struct GradCheckOptions {
  double step = 1e-3;
  /// Drop probes whose +/- step evaluations take a different relu sign or
  /// pooling argmax than the unperturbed pass (the finite difference then
  /// straddles a kink and says nothing about the analytic gradient).
  bool skip_kink_crossings = true;
  /// 0 checks every element; otherwise a seeded random subset of this size.
  std::size_t max_elements = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  /// max over checked elements of |analytic - numeric| / max(1, |numeric|)
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// `input` must be a leaf with requires_grad; `f` maps it to a scalar
/// (1,1,1,1) tensor. Values are perturbed in place and restored.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor input, const GradCheckOptions& options = {});

}  // namespace bvap
