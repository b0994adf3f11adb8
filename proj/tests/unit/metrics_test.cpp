#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "bvap/metrics.hpp"
#include "bvap/ops.hpp"
#include "support.hpp"

using namespace bvap;
using test::random_tensor;

namespace {

FixationSet random_fixations(int count, std::int64_t h, std::int64_t w, std::mt19937_64& rng) {
  FixationSet f;
  std::uniform_int_distribution<std::int64_t> dy(0, h - 1), dx(0, w - 1);
  for (int i = 0; i < count; ++i) f.points.push_back({dx(rng), dy(rng)});
  return f;
}

Tensor integer_map(std::int64_t h, std::int64_t w, int levels, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, levels - 1);
  std::vector<double> v(h * w);
  for (double& x : v) x = d(rng);
  return Tensor::from({1, 1, h, w}, v);
}

Tensor transformed(const Tensor& m, const std::function<double(double)>& f) {
  std::vector<double> v(m.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(m.values()[i]);
  return Tensor::from(m.shape(), v);
}

double brute_judd(const Tensor& m, const FixationSet& fix) {
  const auto w = m.shape().w;
  std::set<std::int64_t> pos;
  for (const auto& p : fix.points) pos.insert(p.y * w + p.x);
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < m.numel(); ++i) {
    if (!pos.contains(static_cast<std::int64_t>(i))) continue;
    for (std::size_t j = 0; j < m.numel(); ++j) {
      if (pos.contains(static_cast<std::int64_t>(j))) continue;
      const double a = m.values()[i], b = m.values()[j];
      wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
      pairs += 1;
    }
  }
  return wins / pairs;
}

// Minimum over every integer transport plan between two 4-cell mass vectors.
double enumerate_transport(const std::array<int, 4>& supply, const std::array<int, 4>& demand,
                           const std::array<double, 16>& cost) {
  double best = std::numeric_limits<double>::infinity();
  std::array<int, 4> rs = supply, cs = demand;
  std::function<void(int, double)> rec = [&](int cell, double acc) {
    if (cell == 16) {
      for (int k = 0; k < 4; ++k)
        if (rs[k] != 0 || cs[k] != 0) return;
      best = std::min(best, acc);
      return;
    }
    const int i = cell / 4, j = cell % 4;
    if (j == 3) {
      // last column of a row takes whatever is left of the row
      const int f = rs[i];
      if (f > cs[j]) return;
      rs[i] -= f;
      cs[j] -= f;
      rec(cell + 1, acc + f * cost[cell]);
      rs[i] += f;
      cs[j] += f;
      return;
    }
    for (int f = 0; f <= std::min(rs[i], cs[j]); ++f) {
      rs[i] -= f;
      cs[j] -= f;
      rec(cell + 1, acc + f * cost[cell]);
      rs[i] += f;
      cs[j] += f;
    }
  };
  rec(0, 0.0);
  return best;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("cc") {
  std::mt19937_64 rng(1);
  const Tensor m = random_tensor({1, 1, 6, 6}, rng, 0, 1);
  CHECK(std::abs(cc(m, m) - 1.0) <= 1e-12);
  CHECK(std::abs(cc(m, transformed(m, [](double v) { return 2.0 - v; })) + 1.0) <= 1e-12);
  for (int t = 0; t < 20; ++t) {
    const Tensor a = random_tensor({1, 1, 6, 6}, rng, 0, 1), b = random_tensor({1, 1, 6, 6}, rng, 0, 1);
    double ma = 0, mb = 0;
    for (int i = 0; i < 36; ++i) {
      ma += a.values()[i];
      mb += b.values()[i];
    }
    ma /= 36;
    mb /= 36;
    double sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < 36; ++i) {
      const double da = a.values()[i] - ma, db = b.values()[i] - mb;
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
    CHECK(std::abs(cc(a, b) - sab / std::sqrt(saa * sbb)) <= 1e-12);
  }
  CHECK_THROWS_AS(cc(Tensor::full({1, 1, 6, 6}, 0.2), m), std::domain_error);
}

TEST_CASE("nss") {
  std::mt19937_64 rng(2);
  const Tensor m = random_tensor({1, 1, 7, 5}, rng, 0, 1);
  double mean = 0;
  for (const double v : m.values()) mean += v;
  mean /= m.numel();
  double var = 0;
  for (const double v : m.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (m.numel() - 1));

  const FixationSet one{{{3, 4}}, ""};
  CHECK(std::abs(nss(m, one) - (m.at(0, 0, 4, 3) - mean) / sd) <= 1e-12);

  for (int t = 0; t < 20; ++t) {
    const FixationSet f = random_fixations(6, 7, 5, rng);
    std::set<std::pair<std::int64_t, std::int64_t>> uniq;
    for (const auto& p : f.points) uniq.insert({p.y, p.x});
    double ref = 0;
    for (const auto& [y, x] : uniq) ref += (m.at(0, 0, y, x) - mean) / sd;
    ref /= uniq.size();
    CHECK(std::abs(nss(m, f) - ref) <= 1e-12);
    CHECK(std::abs(nss(transformed(m, [](double v) { return 3.5 * v + 7.0; }), f) - nss(m, f)) <=
          1e-9);
  }
}

TEST_CASE("auc judd equals the Mann-Whitney statistic") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Tensor m = t % 2 == 0 ? integer_map(8, 8, 5, rng) : random_tensor({1, 1, 8, 8}, rng);
    const FixationSet f = random_fixations(1 + t % 9, 8, 8, rng);
    CHECK(std::abs(auc_judd(m, f) - brute_judd(m, f)) <= 1e-9);
  }
}

TEST_CASE("auc degenerate cases") {
  std::mt19937_64 rng(4);
  const Tensor flat = Tensor::full({1, 1, 8, 8}, 0.3);
  const FixationSet f = random_fixations(5, 8, 8, rng);
  const FixationSet g = random_fixations(7, 8, 8, rng);
  CHECK(auc_judd(flat, f) == 0.5);
  CHECK(auc_borji(flat, f) == 0.5);
  CHECK(auc_shuffled(flat, f, g.points) == 0.5);

  std::vector<double> ind(64, 0.0);
  for (const auto& p : f.points) ind[p.y * 8 + p.x] = 1.0;
  CHECK(auc_judd(Tensor::from({1, 1, 8, 8}, ind), f) == 1.0);
  const double pos[] = {2, 3}, neg[] = {0, 1};
  CHECK(auc_from_scores(pos, neg) == 1.0);
  const double tie[] = {1, 1};
  CHECK(auc_from_scores(tie, tie) == 0.5);
}

TEST_CASE("auc variants are invariant under increasing transforms") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Tensor m = random_tensor({1, 1, 8, 8}, rng, 0, 1);
    const Tensor e = transformed(m, [](double v) { return std::exp(3 * v) + v * v * v; });
    const FixationSet f = random_fixations(6, 8, 8, rng);
    const FixationSet o = random_fixations(20, 8, 8, rng);
    CHECK(std::abs(auc_judd(m, f) - auc_judd(e, f)) <= 1e-9);
    CHECK(std::abs(auc_borji(m, f, 20, 3) - auc_borji(e, f, 20, 3)) <= 1e-9);
    CHECK(std::abs(auc_shuffled(m, f, o.points, 20, 3) - auc_shuffled(e, f, o.points, 20, 3)) <=
          1e-9);
  }
}

TEST_CASE("auc borji and shuffled are seeded") {
  std::mt19937_64 rng(6);
  const Tensor m = random_tensor({1, 1, 8, 8}, rng);
  const FixationSet f = random_fixations(6, 8, 8, rng);
  const FixationSet o = random_fixations(30, 8, 8, rng);
  CHECK(auc_borji(m, f, 10, 1) == auc_borji(m, f, 10, 1));
  CHECK(auc_shuffled(m, f, o.points, 10, 1) == auc_shuffled(m, f, o.points, 10, 1));
  CHECK(auc_borji(m, f, 10, 1) != auc_borji(m, f, 10, 2));
}

TEST_CASE("emd") {
  std::mt19937_64 rng(7);
  const Tensor z = random_tensor({1, 1, 16, 16}, rng, 0, 1);
  CHECK(emd(z, z, 8) <= 1e-12);
  CHECK(emd(z, z) <= 1e-12);
  const Tensor a = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from({1, 1, 2, 2}, {0, 0, 0, 1});
  CHECK(std::abs(emd(a, b, 2) - 1.0) <= 1e-12);
  CHECK(emd(a, b, 2) == doctest::Approx(emd(b, a, 2)));
}

TEST_CASE("emd matches exhaustive enumeration on 2x2 integer masses") {
  std::mt19937_64 rng(8);
  std::array<double, 16> cost{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      cost[i * 4 + j] = std::hypot(i / 2 - j / 2, i % 2 - j % 2) / std::sqrt(2.0);
  std::uniform_int_distribution<int> mass(0, 4), cell(0, 3);
  for (int t = 0; t < 50; ++t) {
    std::array<int, 4> s{}, d{};
    int total = 0;
    while (total == 0) {
      total = 0;
      for (int& v : s) total += (v = mass(rng));
    }
    for (int u = 0; u < total; ++u) ++d[cell(rng)];
    const double ref = enumerate_transport(s, d, cost) / total;
    const Tensor ms = Tensor::from({1, 1, 2, 2}, {double(s[0]), double(s[1]), double(s[2]), double(s[3])});
    const Tensor md = Tensor::from({1, 1, 2, 2}, {double(d[0]), double(d[1]), double(d[2]), double(d[3])});
    CHECK(std::abs(emd(ms, md, 2) - ref) <= 1e-9);
  }
}

TEST_CASE("transport cost against a tiny known problem") {
  const double s[] = {0.5, 0.5}, d[] = {0.25, 0.75};
  const double c[] = {0, 1, 1, 0};
  CHECK(transport_cost(s, d, c) == doctest::Approx(0.25).epsilon(1e-14));
  const double bad[] = {0.4, 0.5};
  CHECK_THROWS(transport_cost(s, bad, c));
}

TEST_CASE("emd on larger maps is symmetric and bounded") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 5; ++t) {
    const Tensor a = random_tensor({1, 1, 32, 32}, rng, 0, 1);
    const Tensor b = random_tensor({1, 1, 32, 32}, rng, 0, 1);
    const double ab = emd(a, b, 16), ba = emd(b, a, 16);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(std::abs(ab - ba) <= 1e-9);
  }
}

TEST_CASE("density from fixations") {
  const FixationSet centre{{{8, 8}}, ""};
  const Tensor d = density_from_fixations(centre, 17, 17, 2.0);
  CHECK(std::abs(sum(d).item() - 1.0) <= 1e-9);
  double best = -1;
  for (const double v : d.values()) best = std::max(best, v);
  CHECK(d.at(0, 0, 8, 8) == best);
  for (int i = 0; i < 17; ++i)
    for (int j = 0; j < 17; ++j) CHECK(d.at(0, 0, i, j) == doctest::Approx(d.at(0, 0, 16 - i, 16 - j)));

  const FixationSet two{{{5, 10}, {25, 10}}, ""};
  const Tensor e = density_from_fixations(two, 21, 31, 1.5);
  CHECK(std::abs(sum(e).item() - 1.0) <= 1e-9);
  CHECK(e.at(0, 0, 10, 5) == doctest::Approx(e.at(0, 0, 10, 25)).epsilon(1e-12));
  CHECK(e.at(0, 0, 10, 5) > e.at(0, 0, 10, 4));
  CHECK(e.at(0, 0, 10, 5) > e.at(0, 0, 10, 6));
  CHECK(e.at(0, 0, 10, 25) > e.at(0, 0, 9, 25));
}

TEST_CASE("evaluate_map and aggregate") {
  std::mt19937_64 rng(10);
  std::vector<MetricRow> rows;
  MetricOptions opts;
  opts.splits = 10;
  const FixationSet other = random_fixations(20, 16, 16, rng);
  for (int t = 0; t < 4; ++t) {
    FixationSet f = random_fixations(8, 16, 16, rng);
    f.image_id = "img" + std::to_string(t);
    const Tensor z = density_from_fixations(f, 16, 16, 1.5);
    const MetricRow self = evaluate_map(z, z, f, other.points, opts);
    CHECK(std::abs(self.cc - 1.0) <= 1e-12);
    CHECK(self.image_id == f.image_id);
    const MetricRow noisy = evaluate_map(random_tensor({1, 1, 16, 16}, rng, 0, 1), z, f,
                                         other.points, opts);
    CHECK(self.nss > noisy.nss);
    rows.push_back(noisy);
  }
  const MetricRow flat = evaluate_map(Tensor::full({1, 1, 16, 16}, 1.0),
                                      density_from_fixations(other, 16, 16, 1.5), other,
                                      other.points, opts);
  CHECK(std::isnan(flat.cc));
  CHECK(flat.auc_judd == 0.5);
  CHECK(flat.auc_borji == 0.5);
  CHECK(flat.s_auc == 0.5);
  rows.push_back(flat);

  const MetricRow mean = aggregate(rows);
  double cc_sum = 0, judd_sum = 0;
  for (std::size_t i = 0; i < 4; ++i) cc_sum += rows[i].cc;
  for (const auto& r : rows) judd_sum += r.auc_judd;
  CHECK(std::abs(mean.cc - cc_sum / 4) <= 1e-12);
  CHECK(std::abs(mean.auc_judd - judd_sum / 5) <= 1e-12);

  const auto path = std::filesystem::temp_directory_path() / "bvap_metrics.csv";
  write_metric_csv(path, rows);
  std::ifstream in(path);
  std::string line, last;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    last = line;
  }
  CHECK(lines == 7);
  CHECK(last.rfind("mean,", 0) == 0);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
