#pragma once

#include <random>
#include <vector>

#include "bvap/tensor.hpp"

namespace bvap::test {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) x = d(rng);
  return Tensor::from(s, std::move(v), requires_grad);
}

inline std::vector<double> vec(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace bvap::test
