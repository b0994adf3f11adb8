// Records the discrete decisions (relu signs, pooling argmax) taken during a
// forward pass so a finite-difference probe can tell when it crossed a kink.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bvap::detail {

struct KinkRecorder {
  std::vector<std::uint64_t> signatures;
};

KinkRecorder*& active_kink_recorder();

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 1099511628211ull;
  }
  return h;
}

// Hides side computations (cached probes) from an active recorder.
class PauseKinkRecording {
 public:
  PauseKinkRecording() : saved_(active_kink_recorder()) { active_kink_recorder() = nullptr; }
  ~PauseKinkRecording() { active_kink_recorder() = saved_; }
  PauseKinkRecording(const PauseKinkRecording&) = delete;
  PauseKinkRecording& operator=(const PauseKinkRecording&) = delete;

 private:
  KinkRecorder* saved_;
};

template <typename T, typename Pred>
void record_kinks(std::span<const T> values, Pred&& pred) {
  KinkRecorder* r = active_kink_recorder();
  if (r == nullptr) return;
  std::uint64_t h = 1469598103934665603ull;
  for (const T& v : values) h = fnv1a(h, static_cast<std::uint64_t>(pred(v)));
  r->signatures.push_back(h);
}

}  // namespace bvap::detail
