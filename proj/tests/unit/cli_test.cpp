#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bvap/commands.hpp"
#include "bvap/config.hpp"
#include "bvap/image.hpp"
#include "bvap/metrics.hpp"

using namespace bvap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bvap");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

const char* kTiny =
    "backbone.base_size = 16\n"
    "backbone.width_factor = 0.125\n"
    "model.fuse_channels = 4\n"
    "head.widths = 4,3\n"
    "train.max_steps = 2\n"
    "train.batch_size = 2\n"
    "metrics.splits = 5\n";

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults and round trip") {
  const RunConfig d;
  CHECK(d.train.learning_rate == 1e-4);
  CHECK(d.model.mode == Mode::full);
  const RunConfig back = parse_run_config(to_text(d));
  CHECK(to_text(back) == to_text(d));
  for (const auto& k : config_keys()) {
    CHECK_FALSE(k.doc.empty());
    CHECK_NOTHROW(get_config_value(d, k.name));
  }
}

TEST_CASE("parsing") {
  const RunConfig c = parse_run_config(
      "# comment\nmodel.mode = DenCF+CBP\n\ntrain.learning_rate=0.001  # inline\n"
      "contrast.sigmas = 1,2,3,4,5\n");
  CHECK(c.model.mode == Mode::DenCF_CBP);
  CHECK(c.train.learning_rate == 0.001);
  CHECK(c.model.contrast_sigmas[4] == 5.0);
  CHECK_THROWS_WITH(parse_run_config("train.seed = 1\nnope.key = 2\n", "x.cfg"),
                    doctest::Contains("x.cfg:2"));
  CHECK_THROWS(parse_run_config("train.batch_size = two\n"));
  CHECK_THROWS(parse_run_config("model.mode = everything\n"));
  CHECK_THROWS(parse_run_config("backbone.base_size = 20\n"));
  CHECK_THROWS(parse_run_config("contrast.sigmas = 5,4,3,2,1\n"));
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("train, predict and eval on a tiny run") {
  TempDir dir("bvap_cli");
  std::ofstream(dir.path / "tiny.cfg") << kTiny;
  const std::string cfg = (dir.path / "tiny.cfg").string();

  CHECK(cli({"synth", "--config", cfg, "--count", "5", "--out", (dir.path / "ds").string()}) == 0);
  const std::string manifest = (dir.path / "ds" / "manifest.tsv").string();
  REQUIRE(fs::exists(manifest));

  const std::string run = (dir.path / "run").string();
  REQUIRE(cli({"train", "--config", cfg, "--data", manifest, "--out", run, "--mode", "SF"}) == 0);
  for (const char* f : {"model.ckpt", "model.cfg", "loss.csv", "summary.txt"})
    CHECK(fs::exists(fs::path(run) / f));
  CHECK(slurp(fs::path(run) / "model.cfg").find("model.mode = SF") != std::string::npos);

  const std::string ckpt = (fs::path(run) / "model.ckpt").string();
  Image odd{23, 17, 3, std::vector<double>(23 * 17 * 3, 0.2)};
  for (int y = 5; y < 11; ++y)
    for (int x = 8; x < 15; ++x)
      for (int c = 0; c < 3; ++c) odd.at(c, y, x) = 0.95;
  write_png(dir.path / "odd.png", odd);
  const std::string p1 = (dir.path / "p1.png").string(), p2 = (dir.path / "p2.png").string();
  CHECK(cli({"predict", "--checkpoint", ckpt, "--image", (dir.path / "odd.png").string(), "--out", p1}) == 0);
  CHECK(cli({"predict", "--checkpoint", ckpt, "--image", (dir.path / "odd.png").string(), "--out", p2}) == 0);
  const Image pm = read_image(p1);
  CHECK(pm.width == 23);
  CHECK(pm.height == 17);
  CHECK(*std::max_element(pm.data.begin(), pm.data.end()) == 1.0);
  CHECK(slurp(p1) == slurp(p2));

  const fs::path metrics = dir.path / "m.csv";
  CHECK(cli({"eval", "--checkpoint", ckpt, "--data", manifest, "--out", metrics.string()}) == 0);
  const auto rows = read_csv(metrics);
  REQUIRE(rows.size() == 7);
  CHECK(rows[0][0] == "image_id");
  CHECK(rows[6][0] == "mean");
  for (std::size_t col = 1; col < rows[0].size(); ++col) {
    double total = 0;
    for (int r = 1; r <= 5; ++r) total += std::stod(rows[r][col]);
    CHECK(std::abs(std::stod(rows[6][col]) - total / 5) <= 1e-12);
  }
}

TEST_CASE("eval of density maps and constant maps") {
  TempDir dir("bvap_cli_maps");
  std::ofstream(dir.path / "tiny.cfg") << kTiny;
  const std::string cfg = (dir.path / "tiny.cfg").string();
  REQUIRE(cli({"synth", "--config", cfg, "--count", "4", "--out", (dir.path / "ds").string()}) == 0);
  const std::string manifest = (dir.path / "ds" / "manifest.tsv").string();
  const auto samples = load_data(manifest, parse_run_config(kTiny), 1);

  fs::create_directories(dir.path / "gt");
  fs::create_directories(dir.path / "flat");
  for (const auto& s : samples) {
    const auto v = s.density.values();
    const double mx = *std::max_element(v.begin(), v.end());
    Image img{16, 16, 1, {}};
    for (const double x : v) img.data.push_back(x / mx);
    write_png(dir.path / "gt" / (s.fixations.image_id + ".png"), img);
    write_png(dir.path / "flat" / (s.fixations.image_id + ".png"),
              Image{16, 16, 1, std::vector<double>(256, 0.5)});
  }
  const fs::path gt = dir.path / "gt.csv", flat = dir.path / "flat.csv";
  CHECK(cli({"eval", "--config", cfg, "--maps", (dir.path / "gt").string(), "--data", manifest,
             "--out", gt.string()}) == 0);
  CHECK(cli({"eval", "--config", cfg, "--maps", (dir.path / "flat").string(), "--data", manifest,
             "--out", flat.string()}) == 0);
  const auto g = read_csv(gt), f = read_csv(flat);
  CHECK(std::stod(g.back()[1]) >= 0.99);
  CHECK(std::stod(g.back()[2]) > 1.0);
  for (int col = 3; col <= 5; ++col) CHECK(std::stod(f.back()[col]) == 0.5);

  fs::remove(dir.path / "flat" / (samples[1].fixations.image_id + ".png"));
  const fs::path partial = dir.path / "partial.csv";
  CHECK(cli({"eval", "--config", cfg, "--maps", (dir.path / "flat").string(), "--data", manifest,
             "--out", partial.string()}) != 0);
  CHECK(read_csv(partial).size() == 5);
}

TEST_CASE("errors give a nonzero status") {
  TempDir dir("bvap_cli_err");
  CHECK(cli({"train", "--data", (dir.path / "absent.tsv").string(), "--out",
             (dir.path / "o").string()}) != 0);
  std::ofstream(dir.path / "bad.cfg") << "no.such.key = 1\n";
  CHECK(cli({"train", "--config", (dir.path / "bad.cfg").string(), "--out",
             (dir.path / "o").string()}) != 0);
  CHECK(cli({"predict", "--checkpoint", (dir.path / "none.ckpt").string(), "--image", "x.png",
             "--out", (dir.path / "p.png").string()}) != 0);
  CHECK(cli({"frobnicate"}) != 0);
  CHECK(cli({"train", "--mode", "XYZ", "--out", (dir.path / "o").string()}) != 0);
}

}  // TEST_SUITE
