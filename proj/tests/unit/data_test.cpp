#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "bvap/checkpoint.hpp"
#include "bvap/dataset.hpp"
#include "bvap/image.hpp"
#include "bvap/model.hpp"
#include "bvap/ops.hpp"
#include "bvap/trainer.hpp"
#include "support.hpp"

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

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

ModelConfig tiny_model() {
  ModelConfig c;
  c.backbone.base_size = 16;
  c.backbone.width_factor = 0.125;
  c.fuse_channels = 4;
  c.head.hidden = {4, 3};
  return c;
}

}  // namespace

TEST_SUITE("data-io") {

TEST_CASE("image formats round trip") {
  TempDir dir("bvap_img");
  Image rgb{5, 3, 3, std::vector<double>(45)};
  for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = (i * 17 % 256) / 255.0;
  write_png(dir.path / "a.png", rgb);
  write_pnm(dir.path / "a.ppm", rgb);
  for (const char* name : {"a.png", "a.ppm"}) {
    const Image back = read_image(dir.path / name);
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.channels == 3);
    for (std::size_t i = 0; i < rgb.data.size(); ++i)
      CHECK(back.data[i] == doctest::Approx(rgb.data[i]).epsilon(1e-12));
  }
  write_text(dir.path / "g.pgm", "P2\n# comment\n3 1\n255\n0 128 255\n");
  const Image g = read_image(dir.path / "g.pgm");
  CHECK(g.channels == 1);
  CHECK(g.data[1] == doctest::Approx(128.0 / 255.0));
  write_text(dir.path / "bad.png", "not an image");
  CHECK_THROWS(read_image(dir.path / "bad.png"));
  CHECK_THROWS(read_image(dir.path / "missing.png"));
}

TEST_CASE("bilinear resize keeps constants and halves cleanly") {
  Image c{8, 6, 1, std::vector<double>(48, 0.4)};
  for (const double v : resize_bilinear(c, 5, 11).data) CHECK(v == doctest::Approx(0.4));
  Image r{4, 1, 1, {0, 1, 2, 3}};
  const Image h = resize_bilinear(r, 2, 1);
  CHECK(h.data[0] == doctest::Approx(0.5));
  CHECK(h.data[1] == doctest::Approx(2.5));
}

TEST_CASE("load_sample") {
  TempDir dir("bvap_sample");
  Image black{448, 448, 1, std::vector<double>(448 * 448, 0.0)};
  write_png(dir.path / "black.png", black);
  write_text(dir.path / "black.csv", "x,y\n100,60\n\n# note\n447,0\n");
  const SampleRecord s = load_sample(dir.path / "black.png", dir.path / "black.csv", 224, 8.0);
  CHECK(s.image.shape() == Shape{1, 3, 224, 224});
  for (const double v : s.image.values()) CHECK(v == 0.0);
  REQUIRE(s.fixations.points.size() == 2);
  CHECK(s.fixations.points[0] == Point{50, 30});
  CHECK(s.fixations.points[1] == Point{223, 0});
  CHECK(std::abs(sum(s.density).item() - 1.0) <= 1e-9);
  CHECK(s.original_width == 448);
  CHECK(s.fixations.image_id == "black");

  Image small{32, 32, 3, std::vector<double>(32 * 32 * 3, 0.5)};
  write_png(dir.path / "s.png", small);
  write_text(dir.path / "s.csv", "10,20\n40,5\n");
  LoadStats stats;
  const SampleRecord t = load_sample(dir.path / "s.png", dir.path / "s.csv", 32, 2.0, &stats);
  CHECK(t.fixations.points[0] == Point{10, 20});
  CHECK(t.fixations.points[1] == Point{31, 5});
  CHECK(stats.clamped_fixations == 1);

  write_text(dir.path / "bad.csv", "1,2\nthree,4\n");
  CHECK_THROWS(load_sample(dir.path / "s.png", dir.path / "bad.csv", 32, 2.0));
}

TEST_CASE("manifest paths resolve against the manifest") {
  TempDir dir("bvap_manifest");
  const auto samples = synth_dataset(3, 16, 4);
  const fs::path manifest = write_dataset(dir.path, samples);
  const auto entries = read_manifest(manifest);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].image.parent_path() == dir.path);
  const auto loaded = load_manifest(manifest, 16, default_density_sigma(16));
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].fixations.points == samples[i].fixations.points);
    CHECK(test::max_abs_diff(loaded[i].image, samples[i].image) <= 0.5 / 255.0 + 1e-12);
  }
  CHECK_THROWS_WITH(read_manifest(dir.path / "none.tsv"), doctest::Contains("none.tsv"));
}

TEST_CASE("synthetic dataset") {
  const auto a = synth_dataset(30, 32, 9), b = synth_dataset(30, 32, 9);
  const auto geo = synth_patches(30, 32, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(test::vec(a[i].image) == test::vec(b[i].image));
    CHECK(a[i].fixations.points == b[i].fixations.points);
    CHECK(a[i].fixations.points.size() == 15);
    CHECK(std::abs(sum(a[i].density).item() - 1.0) <= 1e-9);
    for (const double v : a[i].image.values()) CHECK((v >= 0.0 && v <= 1.0));
    for (const auto& p : a[i].fixations.points) {
      CHECK((p.x >= 0 && p.x < 32 && p.y >= 0 && p.y < 32));
      CHECK(std::hypot(p.x - geo[i].cx, p.y - geo[i].cy) <= 3 * geo[i].radius);
    }
    // patch/background intensity contrast
    const std::int64_t cx = std::llround(geo[i].cx), cy = std::llround(geo[i].cy);
    double inside = 0, corner_far = 0;
    for (int c = 0; c < 3; ++c) inside += a[i].image.at(0, c, cy, cx) / 3;
    const std::int64_t fx = cx < 16 ? 31 : 0, fy = cy < 16 ? 31 : 0;
    for (int c = 0; c < 3; ++c) corner_far += a[i].image.at(0, c, fy, fx) / 3;
    CHECK(std::abs(inside - corner_far) >= 0.4);
  }
  CHECK(test::vec(synth_dataset(1, 32, 10)[0].image) != test::vec(a[0].image));
}

TEST_CASE("checkpoint round trip is byte-identical") {
  TempDir dir("bvap_ckpt");
  Model m(tiny_model(), 1);
  for (auto& e : m.params().entries())
    for (std::size_t i = 0; i < e.slots.square_avg.size(); ++i) {
      e.slots.square_avg[i] = 0.25 + i;
      e.slots.momentum[i] = -1.0 / (i + 3);
    }
  save_checkpoint(m.params(), dir.path / "a.ckpt");
  const ParamStore loaded = load_checkpoint(dir.path / "a.ckpt");
  REQUIRE(loaded.size() == m.params().size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const auto& x = loaded.entries()[i];
    const auto& y = m.params().entries()[i];
    CHECK(x.name == y.name);
    CHECK(x.tensor.shape() == y.tensor.shape());
    CHECK(test::vec(x.tensor) == test::vec(y.tensor));
    CHECK(x.slots.square_avg == y.slots.square_avg);
    CHECK(x.slots.momentum == y.slots.momentum);
  }
  save_checkpoint(loaded, dir.path / "b.ckpt");
  CHECK(slurp(dir.path / "a.ckpt") == slurp(dir.path / "b.ckpt"));
}

TEST_CASE("checkpoint rejects damaged files") {
  TempDir dir("bvap_ckpt_bad");
  ParamStore s;
  s.add("a", Tensor::full({1, 1, 2, 2}, 1.5));
  s.add("b", Tensor::full({1, 2, 1, 1}, -2.0));
  save_checkpoint(s, dir.path / "ok.ckpt");
  const std::string good = slurp(dir.path / "ok.ckpt");

  std::string magic = good;
  magic[0] = 'X';
  std::ofstream(dir.path / "magic.ckpt", std::ios::binary) << magic;
  CHECK_THROWS_WITH(load_checkpoint(dir.path / "magic.ckpt"), doctest::Contains("magic"));

  std::ofstream(dir.path / "trunc.ckpt", std::ios::binary) << good.substr(0, good.size() - 5);
  CHECK_THROWS_WITH(load_checkpoint(dir.path / "trunc.ckpt"), doctest::Contains("truncated"));

  const ParamStore* twice[] = {&s, &s};
  CHECK_THROWS(save_checkpoint(std::span<const ParamStore* const>(twice), dir.path / "dup.ckpt"));
  CHECK_THROWS(load_checkpoint(dir.path / "missing.ckpt"));
}

TEST_CASE("tiny checkpoint stays small") {
  TempDir dir("bvap_ckpt_size");
  ModelConfig c;
  c.backbone.base_size = 64;
  c.backbone.width_factor = 0.125;
  c.fuse_channels = 8;
  Model m(c, 1);
  save_checkpoint(m.params(), dir.path / "t.ckpt");
  CHECK(fs::file_size(dir.path / "t.ckpt") <= 10u * 1024 * 1024);
}

}  // TEST_SUITE

TEST_SUITE("trainer") {

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.weight_decay == 0.0005);
  c.momentum = 1.0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("rmsprop with zero gradient and zero state changes nothing") {
  ParamStore s;
  Tensor p = s.add("p", Tensor::full({1, 1, 2, 2}, 0.7));
  for (double& g : p.mutable_grad()) g = 0.0;
  rmsprop_step(s, TrainConfig{});
  for (const double v : p.values()) CHECK(v == 0.7);
  CHECK_FALSE(p.has_grad());
  CHECK_THROWS_AS(rmsprop_step(s, TrainConfig{}), std::logic_error);
}

TEST_CASE("rmsprop under a constant gradient approaches lr / (1 - momentum)") {
  ParamStore s;
  Tensor p = s.add("p", Tensor::from({1, 1, 1, 2}, {0.0, 0.0}));
  TrainConfig cfg;
  double before[2] = {0, 0}, step[2] = {0, 0};
  for (int t = 0; t < 400; ++t) {
    auto g = p.mutable_grad();
    g[0] = 3.0;
    g[1] = -0.02;
    before[0] = p.values()[0];
    before[1] = p.values()[1];
    rmsprop_step(s, cfg);
    step[0] = p.values()[0] - before[0];
    step[1] = p.values()[1] - before[1];
  }
  const double limit = cfg.learning_rate / (1.0 - cfg.momentum);
  CHECK(step[0] == doctest::Approx(-limit).epsilon(1e-6));
  CHECK(step[1] == doctest::Approx(limit).epsilon(1e-4));
}

TEST_CASE("training is deterministic and resumes exactly from a checkpoint") {
  TempDir dir("bvap_train");
  const auto data = synth_dataset(6, 16, 2);
  TrainConfig cfg;
  cfg.max_steps = 3;
  cfg.batch_size = 2;
  Model a(tiny_model(), 5), b(tiny_model(), 5);
  TrainOptions opts;
  opts.checkpoint_path = dir.path / "a.ckpt";
  const TrainResult ra = train(a, data, {}, cfg, opts);
  const TrainResult rb = train(b, data, {}, cfg);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(std::isnan(ra.history[i].train_loss) == std::isnan(rb.history[i].train_loss));
    if (!std::isnan(ra.history[i].train_loss))
      CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
  }
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(test::vec(a.params().entries()[i].tensor) == test::vec(b.params().entries()[i].tensor));

  // one more step with and without a save/load cycle
  Model c(tiny_model(), 5);
  c.params().assign_from(load_checkpoint(ra.checkpoint));
  const std::size_t idx[] = {0, 1};
  const Tensor x = stack_images(data, idx);
  const AttentionMap z = stack_densities(data, idx);
  for (Model* m : {&a, &c}) {
    m->loss(m->forward(x), z, cfg.weight_decay).backward();
    rmsprop_step(m->params(), cfg);
  }
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& ea = a.params().entries()[i];
    const auto& ec = c.params().entries()[i];
    CHECK(test::vec(ea.tensor) == test::vec(ec.tensor));
    CHECK(ea.slots.momentum == ec.slots.momentum);
  }
}

TEST_CASE("empty validation set runs every epoch") {
  const auto data = synth_dataset(4, 16, 3);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_epochs = 3;
  Model m(tiny_model(), 1);
  const TrainResult r = train(m, data, {}, cfg);
  CHECK(r.epochs == 3);
  CHECK(r.steps == 6);
  CHECK_FALSE(r.early_stopped);
}

TEST_CASE("validation loss drives early stopping") {
  const auto data = synth_dataset(6, 16, 3);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_epochs = 50;
  cfg.learning_rate = 0.05;
  cfg.patience = 1;
  Model m(tiny_model(), 1);
  const TrainResult r = train(m, std::span(data).first(4), std::span(data).subspan(4), cfg);
  CHECK(r.epochs < 50);
  CHECK(r.early_stopped);
  double best = 1e300;
  for (const auto& h : r.history)
    if (!std::isnan(h.val_loss)) best = std::min(best, h.val_loss);
  CHECK(r.best_val_loss == best);
  CHECK(evaluate_loss(m, std::span(data).subspan(4), 2, cfg.weight_decay) ==
        doctest::Approx(best).epsilon(1e-12));
}

}  // TEST_SUITE
