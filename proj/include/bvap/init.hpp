#pragma once

#include <cmath>
#include <random>

#include "bvap/tensor.hpp"

namespace bvap {

/// Normal(0, std) samples redrawn until they fall within +/- 2 std.
inline Tensor truncated_normal(Shape shape, double std, std::mt19937_64& rng,
                               bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape.numel());
  for (double& x : v) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    x = z * std;
  }
  return Tensor::from(shape, std::move(v), requires_grad);
}

/// Standard deviation for a conv kernel: a positive `fixed_std` wins,
/// otherwise He scaling sqrt(2 / fan_in).
inline double init_std_for(const Shape& kernel, double fixed_std) {
  if (fixed_std > 0.0) return fixed_std;
  return std::sqrt(2.0 / static_cast<double>(kernel.c * kernel.h * kernel.w));
}

}  // namespace bvap
