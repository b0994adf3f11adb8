#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernel_impl.hpp"

namespace bvap::kernels {

namespace {

const KernelTable kScalar{Isa::scalar,    "scalar",    &scalar::gemm_nn,
                          &scalar::gemm_nt, &scalar::axpy, &scalar::dot,
                          &scalar::sum};

#if defined(BVAP_HAVE_AVX2)
const KernelTable kAvx2{Isa::avx2,      "avx2",      &avx2::gemm_nn,
                        &avx2::gemm_nt, &avx2::axpy, &avx2::dot,
                        &avx2::sum};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

const KernelTable* detect() {
  const KernelTable* best = &kScalar;
  if (const KernelTable* v = avx2_table()) best = v;
  if (const char* env = std::getenv("BVAP_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &kScalar;
    if (want == "avx2" && avx2_table() == nullptr)
      throw std::runtime_error("BVAP_KERNELS=avx2 but AVX2 is unavailable");
  }
  return best;
}

const KernelTable*& current() {
  static const KernelTable* table = detect();
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(BVAP_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current(); }

void select(Isa isa) {
  if (isa == Isa::scalar) {
    current() = &kScalar;
    return;
  }
  const KernelTable* v = avx2_table();
  if (v == nullptr) throw std::runtime_error("AVX2 kernels unavailable");
  current() = v;
}

std::string_view isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

}  // namespace bvap::kernels
