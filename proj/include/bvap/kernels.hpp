// Dense inner-loop kernels with a scalar reference and ISA-specific variants.
//
// Every routine exists in a portable scalar form that defines the expected
// result. Vector variants may reorder floating-point sums, so they agree with
// the reference to rounding, not bit-for-bit. Within one process the selected
// table never changes, so repeated calls stay bit-identical.
#pragma once

#include <cstddef>
#include <string_view>

namespace bvap::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;

  // C[M x N] += A[M x K] * B[K x N]; all row-major with explicit leading dims.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc);

  // C[M x K] += A[M x N] * B[K x N]^T (row-wise dot products).
  void (*gemm_nt)(std::size_t m, std::size_t k, std::size_t n, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  double (*dot)(std::size_t n, const double* x, const double* y);

  double (*sum)(std::size_t n, const double* x);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_table();

// Table in use. Chosen once: BVAP_KERNELS=scalar|avx2 overrides detection.
const KernelTable& active();

// Test hook; not thread-safe with respect to concurrent kernel calls.
void select(Isa isa);

std::string_view isa_name(Isa isa);

}  // namespace bvap::kernels
