#include "bvap/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>

#include "bvap/checkpoint.hpp"
#include "bvap/gradcheck_suite.hpp"
#include "bvap/image.hpp"
#include "bvap/metrics.hpp"
#include "bvap/trainer.hpp"

namespace bvap {

namespace fs = std::filesystem;

std::vector<SampleRecord> load_data(const std::string& spec, const RunConfig& cfg,
                                    std::uint64_t seed) {
  const std::int64_t size = cfg.model.backbone.base_size;
  if (spec == "synth" || spec.rfind("synth:", 0) == 0) {
    std::size_t n = 20;
    if (spec.size() > 6) {
      const std::string count = spec.substr(6);
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(count, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != count.size() || v < 1)
        throw std::invalid_argument("bad synthetic sample count in '" + spec + "'");
      n = static_cast<std::size_t>(v);
    }
    return synth_dataset(n, size, seed);
  }
  if (!fs::exists(spec)) throw std::runtime_error("manifest not found: " + spec);
  LoadStats stats;
  auto samples = load_manifest(spec, size, cfg.resolved_density_sigma(), &stats);
  if (samples.empty()) throw std::runtime_error("manifest is empty: " + spec);
  if (stats.clamped_fixations > 0)
    std::cerr << "note: " << stats.clamped_fixations
              << " fixations outside their image were clamped\n";
  return samples;
}

Model load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  if (!fs::exists(checkpoint))
    throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  Model model(cfg.model, cfg.train.seed);
  const ParamStore loaded = load_checkpoint(checkpoint);
  for (const auto& e : model.params().entries())
    if (!loaded.contains(e.name))
      throw std::runtime_error("checkpoint " + checkpoint.string() + " lacks parameter '" +
                               e.name + "' (mode or widths differ from the config?)");
  model.params().assign_from(loaded);
  return model;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string data;
  std::string out;
  std::string mode;
  std::string checkpoint;
  std::int64_t seed = -1;
};

RunConfig resolve_config(const Common& c, const fs::path& fallback = {}) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = load_run_config(c.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg = load_run_config(fallback);
  }
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (!c.mode.empty()) set_config_value(cfg, "model.mode", c.mode);
  if (c.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(c.seed);
  validate(cfg);
  return cfg;
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split(
    std::vector<SampleRecord> all, double val_fraction) {
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * all.size()));
  if (n_val >= all.size()) n_val = all.size() - 1;
  std::vector<SampleRecord> val(std::make_move_iterator(all.end() - n_val),
                                std::make_move_iterator(all.end()));
  all.resize(all.size() - n_val);
  return {std::move(all), std::move(val)};
}

std::vector<MetricRow> metric_rows(const std::vector<Tensor>& maps,
                                   std::span<const SampleRecord> samples,
                                   const MetricOptions& opts) {
  std::vector<MetricRow> rows(samples.size());
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(),
                                                      samples.size()));
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < samples.size(); i += workers) {
      const auto others = other_fixations(samples, i);
      rows[i] = evaluate_map(maps[i], samples[i].density, samples[i].fixations, others, opts);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t);
  }
  return rows;
}

std::vector<Tensor> predict_all(const Model& model, std::span<const SampleRecord> samples) {
  std::vector<Tensor> maps;
  maps.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t idx[] = {i};
    maps.push_back(model.predict(stack_images(samples, idx)).values);
  }
  return maps;
}

void print_row(std::ostream& os, const std::string& label, const MetricRow& r) {
  os << label << std::setprecision(4) << " cc=" << r.cc << " nss=" << r.nss
     << " auc_judd=" << r.auc_judd << " auc_borji=" << r.auc_borji << " s_auc=" << r.s_auc
     << " emd=" << r.emd << '\n';
}

struct TrainOutcome {
  TrainResult result;
  double initial_loss = 0;
  double final_loss = 0;
  MetricRow val_metrics;
  bool has_val = false;
  double seconds = 0;
};

TrainOutcome train_run(Model& model, const RunConfig& cfg, std::vector<SampleRecord> data,
                       const fs::path& out_dir) {
  auto [train_set, val_set] = split(std::move(data), cfg.val_fraction);
  TrainOutcome o;
  const double alpha = cfg.train.weight_decay;
  o.initial_loss = evaluate_loss(model, train_set, cfg.train.batch_size, alpha);
  TrainOptions opts;
  opts.checkpoint_path = out_dir / "model.ckpt";
  opts.on_step = [](const LossRecord& r) {
    if (r.step % 25 == 0)
      std::cerr << "step " << r.step << " loss " << r.train_loss
                << (std::isnan(r.val_loss) ? std::string()
                                           : " val " + std::to_string(r.val_loss))
                << '\n';
  };
  const auto t0 = std::chrono::steady_clock::now();
  o.result = train(model, train_set, val_set, cfg.train, opts);
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.final_loss = evaluate_loss(model, train_set, cfg.train.batch_size, alpha);
  write_loss_csv(out_dir / "loss.csv", o.result.history);
  if (!val_set.empty()) {
    o.val_metrics = aggregate(metric_rows(predict_all(model, val_set), val_set, cfg.metrics));
    o.has_val = true;
  }
  return o;
}

void write_summary(const fs::path& path, const RunConfig& cfg, const TrainOutcome& o) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(10);
  os << "# run summary\n";
  os << "steps = " << o.result.steps << "\n";
  os << "epochs = " << o.result.epochs << "\n";
  os << "early_stopped = " << (o.result.early_stopped ? "true" : "false") << "\n";
  os << "aborted = " << (o.result.aborted ? "true" : "false") << "\n";
  os << "seconds = " << o.seconds << "\n";
  os << "initial_train_loss = " << o.initial_loss << "\n";
  os << "final_train_loss = " << o.final_loss << "\n";
  if (o.has_val) {
    const MetricRow& r = o.val_metrics;
    os << "best_val_loss = " << o.result.best_val_loss << "\n";
    os << "val_cc = " << r.cc << "\nval_nss = " << r.nss << "\nval_auc_judd = " << r.auc_judd
       << "\nval_auc_borji = " << r.auc_borji << "\nval_s_auc = " << r.s_auc
       << "\nval_emd = " << r.emd << "\n";
  }
  os << "\n# config\n" << to_text(cfg);
}

void write_config(const fs::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << to_text(cfg);
}

fs::path ensure_dir(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("--out is required");
  fs::create_directories(dir);
  return dir;
}

int cmd_train(const Common& c) {
  RunConfig cfg = resolve_config(c);
  const fs::path out = ensure_dir(c.out);
  auto data = load_data(c.data.empty() ? "synth" : c.data, cfg, cfg.train.seed);
  Model model(cfg.model, cfg.train.seed);
  if (!cfg.pretrained.empty()) import_pretrained(model.params(), cfg.model.backbone, cfg.pretrained);
  write_config(out / "model.cfg", cfg);
  const TrainOutcome o = train_run(model, cfg, std::move(data), out);
  write_summary(out / "summary.txt", cfg, o);
  std::cerr << "trained " << o.result.steps << " steps in " << std::fixed
            << std::setprecision(1) << o.seconds << " s; loss " << std::defaultfloat
            << std::setprecision(6) << o.initial_loss << " -> " << o.final_loss << '\n';
  if (o.result.aborted) {
    std::cerr << "error: training aborted on a non-finite loss\n";
    return 1;
  }
  return 0;
}

std::string checkpoint_config_path(const std::string& ckpt) {
  return (fs::path(ckpt).parent_path() / "model.cfg").string();
}

int cmd_predict(const Common& c, const std::string& image_path) {
  if (c.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  if (c.out.empty()) throw std::invalid_argument("--out is required");
  const RunConfig cfg = resolve_config(c, checkpoint_config_path(c.checkpoint));
  const Model model = load_model(cfg, c.checkpoint);
  const Image img = read_image(image_path);
  const Tensor x = image_to_tensor(img, cfg.model.backbone.base_size);
  const Tensor m = model.predict(x).values;
  const auto S = cfg.model.backbone.base_size;
  Image map{S, S, 1, std::vector<double>(m.values().begin(), m.values().end())};
  Image full = resize_bilinear(map, img.width, img.height);
  const double mx = *std::max_element(full.data.begin(), full.data.end());
  for (double& v : full.data) v = mx > 0 ? v / mx : 0.0;
  write_png(c.out, full);
  return 0;
}

Tensor read_map(const fs::path& path, std::int64_t size) {
  const Image img = read_image(path);
  Image gray{img.width, img.height, 1, std::vector<double>(img.width * img.height, 0.0)};
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x) {
      double s = 0;
      for (std::int64_t ch = 0; ch < img.channels; ++ch) s += img.at(ch, y, x);
      gray.at(0, y, x) = s / static_cast<double>(img.channels);
    }
  const Image r = resize_bilinear(gray, size, size);
  return Tensor::from(Shape{1, 1, size, size}, r.data);
}

int cmd_eval(const Common& c, const std::string& map_dir) {
  if (c.checkpoint.empty() == map_dir.empty())
    throw std::invalid_argument("eval needs exactly one of --checkpoint or --maps");
  if (c.data.empty()) throw std::invalid_argument("--data is required");
  if (c.out.empty()) throw std::invalid_argument("--out is required");
  const RunConfig cfg = resolve_config(
      c, c.checkpoint.empty() ? fs::path() : fs::path(checkpoint_config_path(c.checkpoint)));
  const auto samples = load_data(c.data, cfg, cfg.train.seed);
  const auto S = cfg.model.backbone.base_size;

  std::vector<Tensor> maps(samples.size());
  std::vector<bool> usable(samples.size(), true);
  int errors = 0;
  if (!c.checkpoint.empty()) {
    maps = predict_all(load_model(cfg, c.checkpoint), samples);
  } else {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const fs::path p = fs::path(map_dir) / (samples[i].fixations.image_id + ".png");
      try {
        maps[i] = read_map(p, S);
      } catch (const std::exception& e) {
        std::cerr << "error: " << samples[i].fixations.image_id << ": " << e.what() << '\n';
        usable[i] = false;
        ++errors;
      }
    }
  }

  std::vector<SampleRecord> kept;
  std::vector<Tensor> kept_maps;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (usable[i]) {
      kept.push_back(samples[i]);
      kept_maps.push_back(maps[i]);
    }
  auto rows = metric_rows(kept_maps, kept, cfg.metrics);
  for (auto& r : rows)
    if (!std::isfinite(r.cc) || !std::isfinite(r.nss))
      std::cerr << "note: " << r.image_id << ": constant map, cc/nss undefined\n";
  const fs::path out(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_metric_csv(out, rows);
  print_row(std::cerr, "mean", aggregate(rows));
  return errors == 0 ? 0 : 1;
}

int cmd_synth(const Common& c, std::int64_t count) {
  const RunConfig cfg = resolve_config(c);
  const fs::path out = ensure_dir(c.out);
  const auto samples = synth_dataset(static_cast<std::size_t>(count),
                                     cfg.model.backbone.base_size, cfg.train.seed);
  const fs::path manifest = write_dataset(out, samples);
  std::cerr << "wrote " << samples.size() << " samples, manifest " << manifest.string() << '\n';
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const auto cases = default_grad_cases();
  std::ostringstream report;
  const auto rep = run_grad_cases(cases, report);
  std::cout << report.str();
  if (!c.out.empty()) {
    std::ofstream os(c.out);
    if (!os) throw std::runtime_error("cannot write " + c.out);
    os << report.str();
  }
  std::cerr << rep.passed << " passed, " << rep.failed << " failed, worst error "
            << rep.worst_error << '\n';
  return rep.ok() ? 0 : 1;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& modes) {
  const RunConfig base = resolve_config(c);
  const fs::path out = ensure_dir(c.out);
  const auto data = load_data(c.data.empty() ? "synth:100" : c.data, base, base.train.seed);
  std::vector<std::string> names = modes;
  if (names.empty())
    for (Mode m : {Mode::NCF, Mode::CF, Mode::SF, Mode::DCF, Mode::DenCF, Mode::DenCF_CBP,
                   Mode::full})
      names.emplace_back(mode_name(m));

  std::ofstream csv(out / "ablation.csv");
  if (!csv) throw std::runtime_error("cannot write " + (out / "ablation.csv").string());
  csv << "mode,steps,final_train_loss,best_val_loss,cc,nss,auc_judd,auc_borji,s_auc,emd\n";
  csv << std::setprecision(10);
  int status = 0;
  for (const auto& name : names) {
    RunConfig cfg = base;
    set_config_value(cfg, "model.mode", name);
    validate(cfg);
    const fs::path dir = out / name;
    fs::create_directories(dir);
    std::cerr << "== " << name << '\n';
    Model model(cfg.model, cfg.train.seed);
    if (!cfg.pretrained.empty())
      import_pretrained(model.params(), cfg.model.backbone, cfg.pretrained);
    write_config(dir / "model.cfg", cfg);
    const TrainOutcome o = train_run(model, cfg, data, dir);
    write_summary(dir / "summary.txt", cfg, o);
    if (o.result.aborted) status = 1;
    const MetricRow& r = o.val_metrics;
    csv << name << ',' << o.result.steps << ',' << o.final_loss << ',' << o.result.best_val_loss
        << ',' << r.cc << ',' << r.nss << ',' << r.auc_judd << ',' << r.auc_borji << ','
        << r.s_auc << ',' << r.emd << '\n';
    print_row(std::cerr, name, r);
  }
  return status;
}

void add_common(CLI::App* sub, Common& c, bool data, bool ckpt) {
  sub->add_option("--config", c.config, "key=value run configuration file");
  sub->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  sub->add_option("--out", c.out, "output path");
  sub->add_option("--seed", c.seed, "overrides train.seed");
  sub->add_option("--mode", c.mode, "NCF, CF, SF, DCF, DenCF, DenCF+CBP or full");
  if (data) {
    auto* d = sub->add_option("--data", c.data, "manifest path, or synth[:N]");
    sub->add_option("--manifest", c.data, "manifest path")->excludes(d);
  }
  if (ckpt) sub->add_option("--checkpoint", c.checkpoint, "model checkpoint");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"bvap: visual attention prediction"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common c;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, c, true, false);

  std::string image;
  auto* predict = app.add_subcommand("predict", "write the attention map of one image");
  add_common(predict, c, false, true);
  predict->add_option("--image", image, "input image (PNG, PGM or PPM)")->required();

  std::string map_dir;
  auto* eval = app.add_subcommand("eval", "metric table for a checkpoint or a map directory");
  add_common(eval, c, true, true);
  eval->add_option("--maps", map_dir, "directory of <image id>.png maps");

  std::int64_t count = 20;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  add_common(synth, c, false, false);
  synth->add_option("--count", count, "number of images")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--out", c.out, "also write the report here");

  std::vector<std::string> modes;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate each wiring mode");
  add_common(ablate, c, true, false);
  ablate->add_option("--modes", modes, "subset of modes (default: all seven)");

  auto* keys = app.add_subcommand("keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*keys) {
      const RunConfig defaults;
      for (const auto& k : config_keys())
        std::cout << k.name << " = " << get_config_value(defaults, k.name) << "    # " << k.doc
                  << '\n';
      return 0;
    }
    if (*train) return cmd_train(c);
    if (*predict) return cmd_predict(c, image);
    if (*eval) return cmd_eval(c, map_dir);
    if (*synth) return cmd_synth(c, count);
    if (*gradcheck) return cmd_gradcheck(c);
    if (*ablate) return cmd_ablate(c, modes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace bvap
