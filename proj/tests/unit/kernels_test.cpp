#include <doctest.h>

#include <random>
#include <vector>

#include "bvap/kernels.hpp"
#include "bvap/ops.hpp"
#include "support.hpp"

using namespace bvap;
namespace k = bvap::kernels;

namespace {

std::vector<double> rnd(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

struct IsaRestore {
  k::Isa saved = k::active().isa;
  ~IsaRestore() { k::select(saved); }
};

}  // namespace

TEST_CASE("scalar gemm_nn matches a naive triple loop") {
  std::mt19937_64 rng(1);
  const std::size_t m = 5, n = 7, kk = 3;
  auto a = rnd(m * kk, rng), b = rnd(kk * n, rng), c = rnd(m * n, rng);
  auto ref = c;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < kk; ++p) ref[i * n + j] += a[i * kk + p] * b[p * n + j];
  k::scalar_table().gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c.data(), n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-14));
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const k::KernelTable* avx = k::avx2_table();
  if (avx == nullptr) {
    MESSAGE("AVX2 variant unavailable on this machine; skipped");
    return;
  }
  const k::KernelTable& sc = k::scalar_table();
  std::mt19937_64 rng(2);
  for (const std::size_t len : {1u, 3u, 4u, 7u, 16u, 33u, 1000u}) {
    auto x = rnd(len, rng), y = rnd(len, rng);
    CHECK(avx->dot(len, x.data(), y.data()) ==
          doctest::Approx(sc.dot(len, x.data(), y.data())).epsilon(1e-12));
    CHECK(avx->sum(len, x.data()) == doctest::Approx(sc.sum(len, x.data())).epsilon(1e-12));
    auto y1 = y, y2 = y;
    sc.axpy(len, 0.37, x.data(), y1.data());
    avx->axpy(len, 0.37, x.data(), y2.data());
    for (std::size_t i = 0; i < len; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-14);
  }
  for (const auto [m, n, kk] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1},
                                {3, 5, 2}, {8, 9, 17}, {13, 31, 27}, {16, 64, 72}}) {
    auto a = rnd(m * kk, rng), b = rnd(kk * n, rng), c = rnd(m * n, rng);
    auto c1 = c, c2 = c;
    sc.gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c1.data(), n);
    avx->gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c2.data(), n);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c1[i] - c2[i]) <= 1e-12);

    auto bt = rnd(kk * n, rng);
    auto d = rnd(m * kk, rng);
    auto d1 = d, d2 = d;
    auto an = rnd(m * n, rng);
    sc.gemm_nt(m, kk, n, an.data(), n, bt.data(), n, d1.data(), kk);
    avx->gemm_nt(m, kk, n, an.data(), n, bt.data(), n, d2.data(), kk);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(std::abs(d1[i] - d2[i]) <= 1e-12);
  }
}

TEST_CASE("conv2d forward and backward agree across kernel tables") {
  if (k::avx2_table() == nullptr) return;
  IsaRestore restore;
  std::mt19937_64 rng(3);
  const Tensor x0 = test::random_tensor({2, 3, 9, 9}, rng);
  const Tensor w0 = test::random_tensor({4, 3, 3, 3}, rng);
  const Tensor b0 = test::random_tensor({1, 4, 1, 1}, rng);
  std::vector<double> out[2], gx[2], gw[2];
  int slot = 0;
  for (const k::Isa isa : {k::Isa::scalar, k::Isa::avx2}) {
    k::select(isa);
    Tensor x = x0.clone(true), w = w0.clone(true), b = b0.clone(true);
    const Tensor y = conv2d(x, w, b, 1, 2, Padding::same);
    sum_squares(y).backward();
    out[slot] = test::vec(y);
    gx[slot] = {x.grad().begin(), x.grad().end()};
    gw[slot] = {w.grad().begin(), w.grad().end()};
    ++slot;
  }
  for (std::size_t i = 0; i < out[0].size(); ++i) CHECK(std::abs(out[0][i] - out[1][i]) <= 1e-12);
  for (std::size_t i = 0; i < gx[0].size(); ++i) CHECK(std::abs(gx[0][i] - gx[1][i]) <= 1e-11);
  for (std::size_t i = 0; i < gw[0].size(); ++i) CHECK(std::abs(gw[0][i] - gw[1][i]) <= 1e-10);
}

TEST_CASE("the active table is stable and named") {
  const auto& t = k::active();
  CHECK(&t == &k::active());
  CHECK(k::isa_name(t.isa) == std::string_view(t.name));
}
