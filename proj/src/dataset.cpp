#include "bvap/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bvap {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(std::string_view s, double& out) {
  const std::string t = trim(std::string(s));
  if (t.empty()) return false;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  return ec == std::errc{} && ptr == t.data() + t.size() && std::isfinite(out);
}

struct Generated {
  std::vector<SampleRecord> samples;
  std::vector<PatchInfo> patches;
};

Generated generate(std::size_t n, std::int64_t size, std::uint64_t seed, bool images) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (size < 16) throw std::invalid_argument("synth_dataset: size must be >= 16");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = static_cast<double>(size);
  Generated out;
  for (std::size_t k = 0; k < n; ++k) {
    PatchInfo p;
    p.radius = s * (0.08 + 0.10 * unit(rng));
    p.cx = p.radius + unit(rng) * (s - 1 - 2 * p.radius);
    p.cy = p.radius + unit(rng) * (s - 1 - 2 * p.radius);
    p.disk = unit(rng) < 0.5;
    p.half_w = p.disk ? p.radius : p.radius * (0.6 + 0.4 * unit(rng));
    p.half_h = p.disk ? p.radius : p.radius * (0.6 + 0.4 * unit(rng));
    const bool bright = unit(rng) < 0.5;
    const double base = bright ? 0.95 + 0.05 * unit(rng) : 0.05 * unit(rng);
    double colour[3];
    for (double& c : colour) c = std::clamp(base + 0.1 * (unit(rng) - 0.5), 0.0, 1.0);

    FixationSet fix;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%04zu", k);
    fix.image_id = id;
    const double sd = p.radius / 2.0;
    const double reach = 3.0 * p.radius - 1.0;  // rounding moves a point by < 1 px
    while (fix.points.size() < 15) {
      const double dx = normal(rng) * sd, dy = normal(rng) * sd;
      if (dx * dx + dy * dy > reach * reach) continue;
      const auto x = std::clamp<std::int64_t>(std::llround(p.cx + dx), 0, size - 1);
      const auto y = std::clamp<std::int64_t>(std::llround(p.cy + dy), 0, size - 1);
      fix.points.push_back({x, y});
    }
    out.patches.push_back(p);
    if (!images) continue;

    std::vector<double> v(static_cast<std::size_t>(3 * size * size), 0.5);
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        const double dx = x - p.cx, dy = y - p.cy;
        const bool inside = p.disk ? dx * dx + dy * dy <= p.radius * p.radius
                                   : std::abs(dx) <= p.half_w && std::abs(dy) <= p.half_h;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) v[(c * size + y) * size + x] = colour[c];
      }
    SampleRecord rec;
    rec.image = Tensor::from(Shape{1, 3, size, size}, std::move(v));
    rec.density = density_from_fixations(fix, size, size, default_density_sigma(size));
    rec.fixations = std::move(fix);
    rec.original_width = rec.original_height = size;
    out.samples.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::vector<std::pair<double, double>> read_fixation_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open fixation file " + path.string());
  std::vector<std::pair<double, double>> pts;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto comma = t.find(',');
    double x = 0, y = 0;
    const bool ok = comma != std::string::npos && parse_double(std::string_view(t).substr(0, comma), x) &&
                    parse_double(std::string_view(t).substr(comma + 1), y);
    if (!ok) {
      if (pts.empty() && lineno == 1) continue;
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected \"x,y\", got \"" + t + "\"");
    }
    pts.emplace_back(x, y);
  }
  if (pts.empty()) throw std::runtime_error("fixation file " + path.string() + " has no points");
  return pts;
}

Tensor image_to_tensor(const Image& img, std::int64_t size) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("expected a gray or RGB image");
  const Image r = resize_bilinear(img, size, size);
  std::vector<double> v(static_cast<std::size_t>(3 * size * size));
  const std::size_t plane = static_cast<std::size_t>(size * size);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src = img.channels == 1 ? 0 : c;
    for (std::size_t i = 0; i < plane; ++i) v[c * plane + i] = std::clamp(r.data[src * plane + i], 0.0, 1.0);
  }
  return Tensor::from(Shape{1, 3, size, size}, std::move(v));
}

SampleRecord load_sample(const std::filesystem::path& image_path,
                         const std::filesystem::path& fixation_path, std::int64_t size,
                         double sigma, LoadStats* stats) {
  const Image img = read_image(image_path);
  SampleRecord rec;
  rec.image = image_to_tensor(img, size);
  rec.original_width = img.width;
  rec.original_height = img.height;
  rec.fixations.image_id = image_path.stem().string();
  for (const auto& [x, y] : read_fixation_csv(fixation_path)) {
    const auto mx = std::llround(x * static_cast<double>(size) / img.width);
    const auto my = std::llround(y * static_cast<double>(size) / img.height);
    const auto cx = std::clamp<long long>(mx, 0, size - 1);
    const auto cy = std::clamp<long long>(my, 0, size - 1);
    if ((cx != mx || cy != my) && stats != nullptr) ++stats->clamped_fixations;
    rec.fixations.points.push_back({cx, cy});
  }
  rec.density = density_from_fixations(rec.fixations, size, size, sigma);
  return rec;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tab = t.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected image<TAB>fixations");
    std::filesystem::path img = trim(t.substr(0, tab)), fix = trim(t.substr(tab + 1));
    if (img.is_relative()) img = base / img;
    if (fix.is_relative()) fix = base / fix;
    out.push_back({img, fix});
  }
  if (out.empty()) throw std::runtime_error("manifest " + path.string() + " is empty");
  return out;
}

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path, std::int64_t size,
                                        double sigma, LoadStats* stats) {
  std::vector<SampleRecord> out;
  for (const auto& e : read_manifest(path)) out.push_back(load_sample(e.image, e.fixations, size, sigma, stats));
  return out;
}

std::vector<SampleRecord> synth_dataset(std::size_t n, std::int64_t size, std::uint64_t seed) {
  return generate(n, size, seed, true).samples;
}

std::vector<PatchInfo> synth_patches(std::size_t n, std::int64_t size, std::uint64_t seed) {
  return generate(n, size, seed, false).patches;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                    std::span<const SampleRecord> samples) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.tsv";
  std::ofstream ms(manifest);
  if (!ms) throw std::runtime_error("cannot write " + manifest.string());
  for (const auto& s : samples) {
    const std::string id = s.fixations.image_id;
    const Shape& sh = s.image.shape();
    Image img{sh.w, sh.h, sh.c, std::vector<double>(s.image.values().begin(), s.image.values().end())};
    write_png(dir / (id + ".png"), img);
    std::ofstream fs(dir / (id + ".csv"));
    for (const Point& p : s.fixations.points) fs << p.x << ',' << p.y << '\n';
    if (!fs) throw std::runtime_error("cannot write fixations for " + id);
    ms << id << ".png\t" << id << ".csv\n";
  }
  return manifest;
}

Tensor stack_images(std::span<const SampleRecord> samples, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("stack_images: empty batch");
  Shape s = samples[idx[0]].image.shape();
  std::vector<double> v;
  v.reserve(s.numel() * idx.size());
  for (const auto i : idx) {
    if (samples[i].image.shape() != s) throw std::invalid_argument("stack_images: mixed sizes");
    const auto x = samples[i].image.values();
    v.insert(v.end(), x.begin(), x.end());
  }
  s.n = static_cast<std::int64_t>(idx.size());
  return Tensor::from(s, std::move(v));
}

AttentionMap stack_densities(std::span<const SampleRecord> samples,
                             std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("stack_densities: empty batch");
  Shape s = samples[idx[0]].density.shape();
  std::vector<double> v;
  v.reserve(s.numel() * idx.size());
  for (const auto i : idx) {
    const auto x = samples[i].density.values();
    v.insert(v.end(), x.begin(), x.end());
  }
  s.n = static_cast<std::int64_t>(idx.size());
  return AttentionMap{Tensor::from(s, std::move(v)), true};
}

std::vector<Point> other_fixations(std::span<const SampleRecord> samples, std::size_t skip) {
  std::vector<Point> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (i != skip)
      out.insert(out.end(), samples[i].fixations.points.begin(), samples[i].fixations.points.end());
  return out;
}

}  // namespace bvap
