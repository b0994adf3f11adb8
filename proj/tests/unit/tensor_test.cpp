#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "bvap/gradcheck.hpp"
#include "bvap/gradcheck_suite.hpp"
#include "bvap/ops.hpp"
#include "bvap/param_store.hpp"
#include "support.hpp"

using namespace bvap;
using test::random_tensor;

namespace {

double conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t n,
                   std::int64_t o, std::int64_t y, std::int64_t xx, int pad) {
  const Shape& s = x.shape();
  const Shape& k = w.shape();
  double acc = b.values()[o];
  for (std::int64_t c = 0; c < k.c; ++c)
    for (std::int64_t i = 0; i < k.h; ++i)
      for (std::int64_t j = 0; j < k.w; ++j) {
        const std::int64_t yy = y + i - pad, xj = xx + j - pad;
        if (yy < 0 || yy >= s.h || xj < 0 || xj >= s.w) continue;
        acc += w.at(o, c, i, j) * x.at(n, c, yy, xj);
      }
  return acc;
}

// sigmoid whose backward is off by 10 percent.
Tensor broken_sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.values()[i]));
  return detail::make_result("broken_sigmoid", x.shape(), std::move(out), {x},
                             [](detail::Node& self) {
                               double* dx = detail::grad_target(self, 0);
                               if (dx == nullptr) return;
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 const double y = self.value[i];
                                 dx[i] += 1.1 * self.grad[i] * y * (1.0 - y);
                               }
                             });
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shapes with a zero extent are rejected") {
  CHECK_THROWS(Tensor::zeros(Shape{1, 0, 2, 2}));
  CHECK_THROWS(Tensor::from(Shape{1, 1, 2, 2}, {1, 2, 3}));
}

TEST_CASE("parameter store names are unique and require grad") {
  ParamStore s;
  const Tensor t = s.add("a", Tensor::zeros({1, 1, 1, 2}));
  CHECK(t.requires_grad());
  CHECK_THROWS_AS(s.add("a", Tensor::zeros({1, 1, 1, 1})), std::invalid_argument);
}

TEST_CASE("conv2d identity 1x1 kernel") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 4, 5}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  const Tensor y = conv2d(x, Tensor::from({3, 3, 1, 1}, eye), Tensor::zeros({1, 3, 1, 1}));
  CHECK(test::vec(y) == test::vec(x));
}

TEST_CASE("conv2d constant field with all-ones kernel") {
  const double v = 0.7;
  const Tensor y = conv2d(Tensor::full({1, 1, 6, 6}, v), Tensor::full({1, 1, 3, 3}, 1.0),
                          Tensor());
  for (int i = 1; i < 5; ++i)
    for (int j = 1; j < 5; ++j) CHECK(y.at(0, 0, i, j) == doctest::Approx(9 * v).epsilon(1e-15));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4 * v));
}

TEST_CASE("conv2d matches direct summation") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({1, 3, 1, 1}, rng);
  for (const Padding p : {Padding::same, Padding::valid}) {
    const Tensor y = conv2d(x, w, b, 1, 1, p);
    const int pad = p == Padding::same ? 1 : 0;
    const std::int64_t out = p == Padding::same ? 5 : 3;
    REQUIRE(y.shape() == Shape{1, 3, out, out});
    for (std::int64_t o = 0; o < 3; ++o)
      for (std::int64_t i = 0; i < out; ++i)
        for (std::int64_t j = 0; j < out; ++j)
          CHECK(std::abs(y.at(0, o, i, j) - conv_oracle(x, w, b, 0, o, i, j, pad)) <= 1e-12);
  }
}

TEST_CASE("conv2d stride and dilation shapes") {
  const Tensor x = Tensor::zeros({1, 1, 9, 9});
  CHECK(conv2d(x, Tensor::zeros({2, 1, 3, 3}), Tensor(), 2, 1, Padding::valid).shape() ==
        Shape{1, 2, 4, 4});
  CHECK(conv2d(x, Tensor::zeros({2, 1, 3, 3}), Tensor(), 1, 2, Padding::same).shape() ==
        Shape{1, 2, 9, 9});
  CHECK_THROWS(conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor()));
}

TEST_CASE("activations") {
  const Tensor r = relu(Tensor::from({1, 1, 1, 3}, {-1, 0, 2}));
  CHECK(test::vec(r) == std::vector<double>{0, 0, 2});
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
}

TEST_CASE("sigmoid gradient against central differences") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 2, 3, 3}, rng, -3, 3, true);
  const auto r = grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x);
  CHECK(r.checked == 18);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("max_pool2d") {
  const Tensor y = max_pool2d(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 4);
  CHECK(max_pool2d(Tensor::zeros({1, 2, 7, 5}), 2, 1, Padding::same).shape() ==
        Shape{1, 2, 7, 5});

  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 1, 8, 8}, rng);
  const Tensor v = max_pool2d(x, 2, 2, Padding::valid);
  const Tensor s = max_pool2d(x, 2, 1, Padding::same);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) m = std::max(m, x.at(0, 0, 2 * i + a, 2 * j + b));
      CHECK(v.at(0, 0, i, j) == m);
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          if (i + a < 8 && j + b < 8) m = std::max(m, x.at(0, 0, i + a, j + b));
      CHECK(s.at(0, 0, i, j) == m);
    }
}

TEST_CASE("global_avg_pool") {
  CHECK(global_avg_pool(Tensor::full({1, 1, 3, 4}, 2.5)).item() == 2.5);
  CHECK(global_avg_pool(Tensor::from({1, 1, 2, 2}, {0, 2, 4, 6})).item() == 3.0);
  Tensor x = Tensor::zeros({1, 1, 3, 5}, true);
  sum(global_avg_pool(x)).backward();
  for (const double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 15.0).epsilon(1e-15));
  const auto r = grad_check([](const Tensor& t) { return sum(global_avg_pool(t)); },
                            Tensor::zeros({1, 2, 3, 3}, true));
  CHECK(r.max_rel_error <= 1e-10);
}

TEST_CASE("nearest_resize") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({1, 2, 3, 3}, rng);
  CHECK(test::vec(nearest_resize(x, 1)) == test::vec(x));
  const Tensor y = nearest_resize(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}), 2);
  CHECK(test::vec(y) ==
        std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  CHECK(sum(nearest_resize(x, 3)).item() == doctest::Approx(9 * sum(x).item()).epsilon(1e-13));
}

TEST_CASE("concat and slice round trip") {
  std::mt19937_64 rng(6);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
  const Tensor one[] = {a};
  CHECK(test::vec(concat_channels(one)) == test::vec(a));
  const Tensor parts[] = {a, b};
  const Tensor c = concat_channels(parts);
  CHECK(c.shape() == Shape{2, 5, 3, 3});
  CHECK(test::vec(slice_channels(c, 0, 2)) == test::vec(a));
  CHECK(test::vec(slice_channels(c, 2, 3)) == test::vec(b));
}

TEST_CASE("gaussian_kernel2d") {
  for (const double sigma : {0.5, 1.5, 3.0, 5.0}) {
    const Tensor k = gaussian_kernel2d(sigma);
    const auto n = k.shape().h;
    CHECK(std::abs(sum(k).item() - 1.0) <= 1e-12);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        CHECK(k.at(0, 0, i, j) == k.at(0, 0, n - 1 - i, j));
        CHECK(k.at(0, 0, i, j) == k.at(0, 0, i, n - 1 - j));
        CHECK(k.at(0, 0, i, j) == k.at(0, 0, j, i));
      }
  }
  CHECK(gaussian_kernel2d(5.0).shape().h == 31);
  CHECK(gaussian_kernel2d(1.5, 3).shape() == Shape{1, 1, 7, 7});
}

TEST_CASE("gaussian_blur equals the same convolution with the 2-D kernel") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({1, 2, 12, 12}, rng);
  const Tensor k = gaussian_kernel2d(1.3);
  const Tensor blurred = gaussian_blur(x, 1.3, Border::zero);
  for (int c = 0; c < 2; ++c) {
    const Tensor plane = slice_channels(x, c, 1);
    const Tensor ref = conv2d(plane, k, Tensor());
    CHECK(test::max_abs_diff(slice_channels(blurred, c, 1), ref) <= 1e-13);
  }
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({1, 1, 3, 4}, rng, -1, 1, true);
  sum(x).backward();
  for (const double g : x.grad()) CHECK(g == 1.0);
  x.clear_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2 * x.values()[i]);
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor x = Tensor::full({1, 1, 1, 2}, 1.0, true);
  sum(x).backward();
  sum(x).backward();
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("no-grad scope records no graph") {
  Tensor x = Tensor::full({1, 1, 1, 2}, 1.0, true);
  NoGradGuard guard;
  const Tensor y = sum(mul_constant(x, 2.0));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("composite conv-relu-pool gradient") {
  std::mt19937_64 rng(9);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({1, 3, 1, 1}, rng, -0.1, 0.1);
  const Tensor x = random_tensor({1, 2, 6, 6}, rng, -1, 1, true);
  const auto r = grad_check(
      [&](const Tensor& t) { return sum(max_pool2d(relu(conv2d(t, w, b)), 2, 2)); }, x);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("grad_check on linear and smooth functions") {
  std::mt19937_64 rng(10);
  const Tensor k = random_tensor({1, 1, 4, 4}, rng);
  const auto lin = grad_check([&](const Tensor& t) { return sum(mul(t, k)); },
                              random_tensor({1, 1, 4, 4}, rng, -1, 1, true));
  CHECK(lin.max_rel_error <= 1e-10);
  const auto smooth = grad_check([](const Tensor& t) { return sum(sigmoid(t)); },
                                 random_tensor({1, 1, 4, 4}, rng, -2, 2, true));
  CHECK(smooth.max_rel_error <= 1e-6);
}

TEST_CASE("grad_check with relu away from the kink") {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({1, 1, 5, 5}, rng, -1, 1, true);
  for (double& v : x.mutable_values())
    if (std::abs(v) < 2e-3) v = 0.5;
  const auto r = grad_check([](const Tensor& t) { return sum_squares(relu(t)); }, x);
  CHECK(r.skipped == 0);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("grad_check skips probes that straddle a relu kink") {
  const Tensor x = Tensor::from({1, 1, 1, 2}, {1e-4, 0.5}, true);
  const auto r = grad_check([](const Tensor& t) { return sum(relu(t)); }, x);
  CHECK(r.skipped == 1);
  CHECK(r.checked == 1);
}

TEST_CASE("corrupted sigmoid derivative is detected") {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({1, 1, 3, 3}, rng, -2, 2, true);
  const auto r = grad_check([](const Tensor& t) { return sum(broken_sigmoid(t)); }, x);
  CHECK(r.max_rel_error > 1e-4);

  std::vector<GradCase> cases{
      {"broken_sigmoid", [x] {
         return grad_check([](const Tensor& t) { return sum(broken_sigmoid(t)); }, x);
       }}};
  std::ostringstream os;
  const auto rep = run_grad_cases(cases, os);
  CHECK(rep.failed == 1);
  CHECK(os.str().rfind("FAIL broken_sigmoid", 0) == 0);
}

}  // TEST_SUITE
