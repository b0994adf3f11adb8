// Saliency evaluation: CC, NSS, AUC (Judd, Borji, shuffled), EMD, and
// groundtruth density generation from fixation points.
//
// Maps are (1,1,H,W) tensors; only the values are read.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bvap/tensor.hpp"

namespace bvap {

struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;
  bool operator==(const Point&) const = default;
};

struct FixationSet {
  std::vector<Point> points;
  std::string image_id;
};

/// Pearson correlation. Throws std::domain_error when either map is constant.
double cc(const Tensor& m, const Tensor& z);

/// Mean of the standardized map (sample std) over the distinct fixated pixels.
double nss(const Tensor& m, const FixationSet& fix);

/// P(pos > neg) + 0.5 P(pos == neg): the exact area under the ROC curve
/// traced over every distinct threshold.
double auc_from_scores(std::span<const double> positives, std::span<const double> negatives);

/// Positives: distinct fixated pixels. Negatives: every other pixel.
double auc_judd(const Tensor& m, const FixationSet& fix);

/// Negatives: |positives| pixels drawn uniformly (with replacement) per split.
double auc_borji(const Tensor& m, const FixationSet& fix, int splits = 100,
                 std::uint64_t seed = 0);

/// Negatives: |positives| points drawn from `others` (fixations of other
/// images, already in this map's coordinates) per split.
double auc_shuffled(const Tensor& m, const FixationSet& fix, std::span<const Point> others,
                    int splits = 100, std::uint64_t seed = 0);

/// Block-sum both maps onto a grid x grid lattice (grid <= 32), normalize,
/// and return the optimal transport cost with Euclidean ground distance
/// divided by the lattice diagonal.
double emd(const Tensor& m, const Tensor& z, int grid = 32);

/// Exact transportation cost between two mass vectors with costs
/// cost[i * demand.size() + j]. Masses must be nonnegative with equal sums.
double transport_cost(std::span<const double> supply, std::span<const double> demand,
                      std::span<const double> cost);

/// Impulses at the distinct fixated pixels, blurred with a normalized
/// Gaussian and renormalized to sum 1. Output (1,1,h,w).
Tensor density_from_fixations(const FixationSet& fix, std::int64_t h, std::int64_t w,
                              double sigma);

/// 8 px at the 224 reference.
inline double default_density_sigma(std::int64_t size) {
  return 8.0 * static_cast<double>(size) / 224.0;
}

struct MetricOptions {
  int splits = 100;
  std::uint64_t seed = 0;
  int emd_grid = 32;
  bool compute_emd = true;
};

struct MetricRow {
  std::string image_id;
  double cc = 0, nss = 0, auc_judd = 0, auc_borji = 0, s_auc = 0, emd = 0;
};

/// Metrics that are undefined for the inputs (constant maps) come back NaN.
MetricRow evaluate_map(const Tensor& m, const Tensor& density, const FixationSet& fix,
                       std::span<const Point> shuffled_negatives, const MetricOptions& opts);

/// Arithmetic mean of each column over the finite entries.
MetricRow aggregate(std::span<const MetricRow> rows);

/// Header, one line per row, then the aggregate as image_id "mean".
void write_metric_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace bvap
