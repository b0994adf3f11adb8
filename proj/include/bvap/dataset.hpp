// Samples, fixation files, manifests and the synthetic generator.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bvap/head.hpp"
#include "bvap/image.hpp"
#include "bvap/metrics.hpp"
#include "bvap/tensor.hpp"

namespace bvap {

struct SampleRecord {
  Tensor image;            // (1,3,S,S) in [0,1]
  FixationSet fixations;   // map coordinates
  Tensor density;          // (1,1,S,S), sums to 1
  std::int64_t original_width = 0;
  std::int64_t original_height = 0;
};

struct LoadStats {
  std::size_t clamped_fixations = 0;
};

/// "x,y" per line in original-image pixels (0-indexed). Blank lines, '#'
/// comments and a non-numeric first line (header) are skipped.
std::vector<std::pair<double, double>> read_fixation_csv(const std::filesystem::path& path);

/// Converts any image to 3 channels and bilinear-resizes it to S x S.
Tensor image_to_tensor(const Image& img, std::int64_t size);

SampleRecord load_sample(const std::filesystem::path& image_path,
                         const std::filesystem::path& fixation_path, std::int64_t size,
                         double sigma, LoadStats* stats = nullptr);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path fixations;
};

/// One "image<TAB>fixations" pair per line; relative paths resolve against
/// the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path, std::int64_t size,
                                        double sigma, LoadStats* stats = nullptr);

/// Mid-gray images with one high-contrast rectangle or disk; 15 fixations
/// around the patch centre (sigma = radius / 2).
std::vector<SampleRecord> synth_dataset(std::size_t n, std::int64_t size, std::uint64_t seed);

/// Writes <id>.png, <id>.csv and manifest.tsv into `dir`.
std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    std::span<const SampleRecord> samples);

/// Per synthetic sample: centre and radius of the patch, for audits.
struct PatchInfo {
  double cx = 0, cy = 0, radius = 0;
  bool disk = false;
  double half_w = 0, half_h = 0;
};
std::vector<PatchInfo> synth_patches(std::size_t n, std::int64_t size, std::uint64_t seed);

/// Stacks the selected samples into (B,3,S,S) images and (B,1,S,S) densities.
Tensor stack_images(std::span<const SampleRecord> samples, std::span<const std::size_t> idx);
AttentionMap stack_densities(std::span<const SampleRecord> samples,
                             std::span<const std::size_t> idx);

/// Union of the fixations of every sample except `skip`.
std::vector<Point> other_fixations(std::span<const SampleRecord> samples, std::size_t skip);

}  // namespace bvap
