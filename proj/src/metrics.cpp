#include "bvap/metrics.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <stdexcept>

#include "bvap/ops.hpp"

namespace bvap {

namespace {

void require_map(const Tensor& m, const char* what) {
  const Shape& s = m.shape();
  if (s.n != 1 || s.c != 1)
    throw std::invalid_argument(std::string(what) + ": expected a (1,1,H,W) map, got " + s.str());
}

std::vector<std::size_t> fixated_pixels(const Tensor& m, const FixationSet& fix) {
  const Shape& s = m.shape();
  if (fix.points.empty()) throw std::invalid_argument("no fixations for '" + fix.image_id + "'");
  std::vector<std::size_t> idx;
  idx.reserve(fix.points.size());
  for (const Point& p : fix.points) {
    if (p.x < 0 || p.y < 0 || p.x >= s.w || p.y >= s.h)
      throw std::out_of_range("fixation (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                              ") outside " + std::to_string(s.w) + "x" + std::to_string(s.h));
    idx.push_back(static_cast<std::size_t>(p.y * s.w + p.x));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

std::vector<double> gather(std::span<const double> v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (const auto i : idx) out.push_back(v[i]);
  return out;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

bool is_constant(std::span<const double> v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

double sampled_auc(std::span<const double> pos, std::span<const double> pool_values, int splits,
                   std::uint64_t seed) {
  if (splits < 1) throw std::invalid_argument("auc: splits must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool_values.size() - 1);
  std::vector<double> neg(pos.size());
  double total = 0.0;
  for (int s = 0; s < splits; ++s) {
    for (double& n : neg) n = pool_values[pick(rng)];
    total += auc_from_scores(pos, neg);
  }
  return total / splits;
}

}  // namespace

double cc(const Tensor& m, const Tensor& z) {
  require_map(m, "cc");
  if (m.shape() != z.shape())
    throw std::invalid_argument("cc: shapes " + m.shape().str() + " and " + z.shape().str());
  const auto a = m.values();
  const auto b = z.values();
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (is_constant(a) || is_constant(b) || saa == 0.0 || sbb == 0.0) throw std::domain_error("cc undefined for a constant map");
  return sab / std::sqrt(saa * sbb);
}

double nss(const Tensor& m, const FixationSet& fix) {
  require_map(m, "nss");
  const auto v = m.values();
  const auto idx = fixated_pixels(m, fix);
  const double mu = mean_of(v);
  double ss = 0.0;
  for (const double x : v) ss += (x - mu) * (x - mu);
  if (v.size() < 2 || is_constant(v) || ss == 0.0) throw std::domain_error("nss undefined for a constant map");
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  double total = 0.0;
  for (const auto i : idx) total += (v[i] - mu) / sd;
  return total / static_cast<double>(idx.size());
}

double auc_from_scores(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty()) throw std::invalid_argument("auc: empty positive set");
  if (negatives.empty()) throw std::invalid_argument("auc: empty negative set");
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(neg.begin(), neg.end());
  // Counts are integers; accumulate exactly before the single division.
  long double wins = 0.0L;
  for (const double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    wins += 2.0L * static_cast<long double>(lo - neg.begin()) +
            static_cast<long double>(hi - lo);
  }
  return static_cast<double>(wins / (2.0L * static_cast<long double>(positives.size()) *
                                     static_cast<long double>(neg.size())));
}

double auc_judd(const Tensor& m, const FixationSet& fix) {
  require_map(m, "auc_judd");
  const auto v = m.values();
  const auto idx = fixated_pixels(m, fix);
  std::vector<double> neg;
  neg.reserve(v.size() - idx.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (k < idx.size() && idx[k] == i) {
      ++k;
      continue;
    }
    neg.push_back(v[i]);
  }
  return auc_from_scores(gather(v, idx), neg);
}

double auc_borji(const Tensor& m, const FixationSet& fix, int splits, std::uint64_t seed) {
  require_map(m, "auc_borji");
  const auto pos = gather(m.values(), fixated_pixels(m, fix));
  return sampled_auc(pos, m.values(), splits, seed);
}

double auc_shuffled(const Tensor& m, const FixationSet& fix, std::span<const Point> others,
                    int splits, std::uint64_t seed) {
  require_map(m, "auc_shuffled");
  if (others.empty()) throw std::invalid_argument("auc_shuffled: empty negative pool");
  const auto pos = gather(m.values(), fixated_pixels(m, fix));
  std::vector<double> pool_values;
  pool_values.reserve(others.size());
  const auto v = m.values();
  const Shape& s = m.shape();
  for (const Point& p : others) {
    if (p.x < 0 || p.y < 0 || p.x >= s.w || p.y >= s.h)
      throw std::out_of_range("auc_shuffled: negative point outside the map");
    pool_values.push_back(v[p.y * s.w + p.x]);
  }
  return sampled_auc(pos, pool_values, splits, seed);
}

Tensor density_from_fixations(const FixationSet& fix, std::int64_t h, std::int64_t w,
                              double sigma) {
  Tensor impulses = Tensor::zeros(Shape{1, 1, h, w});
  const auto idx = fixated_pixels(impulses, fix);
  auto v = impulses.mutable_values();
  for (const auto i : idx) v[i] = 1.0;
  NoGradGuard no_grad;
  return normalize_per_image(gaussian_blur(impulses, sigma, Border::zero)).detach();
}

MetricRow evaluate_map(const Tensor& m, const Tensor& density, const FixationSet& fix,
                       std::span<const Point> shuffled_negatives, const MetricOptions& opts) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  auto guarded = [](auto&& f) {
    try {
      return f();
    } catch (const std::domain_error&) {
      return nan;
    }
  };
  MetricRow row;
  row.image_id = fix.image_id;
  row.cc = guarded([&] { return cc(m, density); });
  row.nss = guarded([&] { return nss(m, fix); });
  row.auc_judd = auc_judd(m, fix);
  row.auc_borji = auc_borji(m, fix, opts.splits, opts.seed);
  row.s_auc = shuffled_negatives.empty()
                  ? nan
                  : auc_shuffled(m, fix, shuffled_negatives, opts.splits, opts.seed);
  row.emd = opts.compute_emd ? guarded([&] { return emd(m, density, opts.emd_grid); }) : nan;
  return row;
}

MetricRow aggregate(std::span<const MetricRow> rows) {
  MetricRow out;
  out.image_id = "mean";
  double MetricRow::*cols[] = {&MetricRow::cc,       &MetricRow::nss,   &MetricRow::auc_judd,
                               &MetricRow::auc_borji, &MetricRow::s_auc, &MetricRow::emd};
  for (auto col : cols) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (std::isfinite(r.*col)) {
        total += r.*col;
        ++n;
      }
    out.*col = n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(n);
  }
  return out;
}

void write_metric_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "image_id,cc,nss,auc_judd,auc_borji,s_auc,emd\n" << std::setprecision(17);
  auto line = [&os](const MetricRow& r) {
    os << r.image_id << ',' << r.cc << ',' << r.nss << ',' << r.auc_judd << ',' << r.auc_borji
       << ',' << r.s_auc << ',' << r.emd << '\n';
  };
  for (const auto& r : rows) line(r);
  line(aggregate(rows));
}

}  // namespace bvap
