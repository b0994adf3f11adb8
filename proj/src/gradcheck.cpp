#include "bvap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "kink_monitor.hpp"

namespace bvap {

namespace detail {
KinkRecorder*& active_kink_recorder() {
  thread_local KinkRecorder* recorder = nullptr;
  return recorder;
}
}  // namespace detail

namespace {

class ScopedRecorder {
 public:
  explicit ScopedRecorder(detail::KinkRecorder* r)
      : previous_(detail::active_kink_recorder()) {
    detail::active_kink_recorder() = r;
  }
  ~ScopedRecorder() { detail::active_kink_recorder() = previous_; }

 private:
  detail::KinkRecorder* previous_;
};

double evaluate(const std::function<Tensor(const Tensor&)>& f,
                const Tensor& input, detail::KinkRecorder& rec) {
  rec.signatures.clear();
  ScopedRecorder scope(&rec);
  NoGradGuard no_grad;
  const Tensor out = f(input);
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor input, const GradCheckOptions& options) {
  if (!input.requires_grad())
    throw std::invalid_argument("grad_check: input must require grad");
  if (!(options.step > 0.0))
    throw std::invalid_argument("grad_check: step must be positive");

  detail::KinkRecorder base;
  input.clear_grad();
  {
    ScopedRecorder scope(&base);
    const Tensor out = f(input);
    if (out.shape() != Shape{})
      throw std::invalid_argument("grad_check: function must be scalar-valued");
    out.backward();
  }
  std::vector<double> analytic(input.numel(), 0.0);
  if (input.has_grad())
    std::copy(input.grad().begin(), input.grad().end(), analytic.begin());

  std::vector<std::size_t> order(input.numel());
  std::iota(order.begin(), order.end(), 0);
  if (options.max_elements != 0 && options.max_elements < order.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(options.max_elements);
    std::sort(order.begin(), order.end());
  }

  GradCheckResult result;
  detail::KinkRecorder probe;
  auto values = input.mutable_values();
  const double h = options.step;
  for (const std::size_t i : order) {
    const double x0 = values[i];
    values[i] = x0 + h;
    const double fp = evaluate(f, input, probe);
    const bool plus_same = probe.signatures == base.signatures;
    values[i] = x0 - h;
    const double fm = evaluate(f, input, probe);
    const bool minus_same = probe.signatures == base.signatures;
    values[i] = x0;
    if (options.skip_kink_crossings && !(plus_same && minus_same)) {
      ++result.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    ++result.checked;
    if (err > result.max_rel_error || result.checked == 1) {
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace bvap
