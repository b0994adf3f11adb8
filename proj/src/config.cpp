#include "bvap/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace bvap {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view why) {
  throw std::invalid_argument("config key '" + std::string(key) + "': " + std::string(why) +
                              " (got '" + std::string(value) + "')");
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "expected a number");
  return out;
}

std::int64_t to_int(std::string_view key, std::string_view v) {
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "expected an integer");
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "expected a nonnegative integer");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "expected true or false");
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <std::size_t N>
std::array<double, N> to_list(std::string_view key, std::string_view v) {
  std::array<double, N> out{};
  std::size_t k = 0;
  while (true) {
    const auto comma = v.find(',');
    if (k == N) bad(key, v, "expected " + std::to_string(N) + " comma-separated values");
    out[k++] = to_double(key, trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (k != N) bad(key, v, "expected " + std::to_string(N) + " comma-separated values");
  return out;
}

template <std::size_t N>
std::string fmt_list(const std::array<double, N>& a) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + fmt(a[i]);
  return s;
}

struct KeyDef {
  ConfigKey key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define BVAP_DOUBLE(name, field, doc)                                                   \
  KeyDef{{name, doc},                                                                   \
         [](RunConfig& c, std::string_view v) { c.field = to_double(name, v); },        \
         [](const RunConfig& c) { return fmt(c.field); }}
#define BVAP_INT(name, field, doc)                                                      \
  KeyDef{{name, doc},                                                                   \
         [](RunConfig& c, std::string_view v) { c.field = to_int(name, v); },           \
         [](const RunConfig& c) { return std::to_string(c.field); }}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      BVAP_INT("backbone.base_size", model.backbone.base_size, "input side S in pixels, multiple of 8 (224)"),
      BVAP_DOUBLE("backbone.width_factor", model.backbone.width_factor, "scale of the 64,128,256,512,512 widths, in (0,1] (1)"),
      BVAP_DOUBLE("backbone.init_std", model.backbone.init_std, "truncated-normal std of backbone kernels; <= 0 uses He scaling (0)"),
      KeyDef{{"backbone.pretrained", "checkpoint with blocks 1-4 to import, empty for none ()"},
             [](RunConfig& c, std::string_view v) { c.pretrained = std::string(v); },
             [](const RunConfig& c) { return c.pretrained; }},
      KeyDef{{"contrast.sigmas", "five pyramid sigmas at the 224 reference (5,10,20,40,80)"},
             [](RunConfig& c, std::string_view v) { c.model.contrast_sigmas = to_list<kPyramidLevels>("contrast.sigmas", v); },
             [](const RunConfig& c) { return fmt_list(c.model.contrast_sigmas); }},
      KeyDef{{"model.mode", "ablation wiring: NCF, CF, SF, DCF, DenCF, DenCF+CBP or full (full)"},
             [](RunConfig& c, std::string_view v) {
               const auto m = parse_mode(v);
               if (!m) bad("model.mode", v, "unknown mode");
               c.model.mode = *m;
             },
             [](const RunConfig& c) { return std::string(mode_name(c.model.mode)); }},
      BVAP_INT("model.fuse_channels", model.fuse_channels, "width of the fused features; 0 uses max(8, 256*width_factor) (0)"),
      KeyDef{{"head.fusion", "network (stacked blocks) or sum (plain sum of maps) (network)"},
             [](RunConfig& c, std::string_view v) {
               if (v == "network") c.model.head.fusion = FusionKind::network;
               else if (v == "sum") c.model.head.fusion = FusionKind::sum;
               else bad("head.fusion", v, "expected network or sum");
             },
             [](const RunConfig& c) {
               return std::string(c.model.head.fusion == FusionKind::network ? "network" : "sum");
             }},
      KeyDef{{"head.widths", "hidden widths of readout and fusion stacks (32,16)"},
             [](RunConfig& c, std::string_view v) {
               const auto a = to_list<2>("head.widths", v);
               for (std::size_t i = 0; i < 2; ++i) {
                 if (a[i] != static_cast<double>(static_cast<std::int64_t>(a[i])))
                   bad("head.widths", v, "expected integers");
                 c.model.head.hidden[i] = static_cast<std::int64_t>(a[i]);
               }
             },
             [](const RunConfig& c) {
               return std::to_string(c.model.head.hidden[0]) + "," + std::to_string(c.model.head.hidden[1]);
             }},
      BVAP_DOUBLE("head.smoothing_sigma", model.head.smoothing_sigma, "sigma of the final smoothing kernel in pixels (1.5)"),
      KeyDef{{"head.smoothing_size", "odd side of the final smoothing kernel (7)"},
             [](RunConfig& c, std::string_view v) {
               const auto k = to_int("head.smoothing_size", v);
               if (k < 1 || k % 2 == 0) bad("head.smoothing_size", v, "expected an odd positive size");
               c.model.head.smoothing_radius = static_cast<int>(k / 2);
             },
             [](const RunConfig& c) { return std::to_string(2 * c.model.head.smoothing_radius + 1); }},
      BVAP_DOUBLE("head.kl_eps", model.head.kl_eps, "regularization constant inside the KL loss (1e-08)"),
      BVAP_DOUBLE("head.init_std", model.head.init.weight_std, "std of non-backbone kernels; <= 0 uses He scaling (0)"),
      BVAP_DOUBLE("head.bias_init", model.head.init.reduce_bias, "initial bias of every 1x1 reduction (0.1)"),
      BVAP_DOUBLE("train.learning_rate", train.learning_rate, "RMSProp learning rate (0.0001)"),
      BVAP_DOUBLE("train.momentum", train.momentum, "momentum of the update buffer (0.9)"),
      BVAP_DOUBLE("train.weight_decay", train.weight_decay, "alpha of the squared-weight penalty (0.0005)"),
      BVAP_INT("train.batch_size", train.batch_size, "images per step (4)"),
      BVAP_INT("train.max_epochs", train.max_epochs, "epoch limit (100)"),
      BVAP_DOUBLE("train.rms_decay", train.rms_decay, "decay of the squared-gradient average (0.9)"),
      BVAP_DOUBLE("train.rms_eps", train.rms_eps, "added under the square root (1e-08)"),
      KeyDef{{"train.seed", "seed for initialization and shuffling (1)"},
             [](RunConfig& c, std::string_view v) { c.train.seed = to_uint("train.seed", v); },
             [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      BVAP_INT("train.max_steps", train.max_steps, "step limit, 0 for none (0)"),
      BVAP_INT("train.patience", train.patience, "consecutive validation increases before stopping (2)"),
      BVAP_DOUBLE("train.val_fraction", val_fraction, "share of the manifest held out for validation (0.1)"),
      BVAP_DOUBLE("data.density_sigma", density_sigma, "groundtruth blur in map pixels, 0 for 8*S/224 (0)"),
      KeyDef{{"metrics.splits", "random splits for AUC-Borji and shuffled AUC (100)"},
             [](RunConfig& c, std::string_view v) { c.metrics.splits = static_cast<int>(to_int("metrics.splits", v)); },
             [](const RunConfig& c) { return std::to_string(c.metrics.splits); }},
      KeyDef{{"metrics.emd_grid", "EMD lattice side, at most 32 (32)"},
             [](RunConfig& c, std::string_view v) { c.metrics.emd_grid = static_cast<int>(to_int("metrics.emd_grid", v)); },
             [](const RunConfig& c) { return std::to_string(c.metrics.emd_grid); }},
      KeyDef{{"metrics.emd", "compute EMD (true)"},
             [](RunConfig& c, std::string_view v) { c.metrics.compute_emd = to_bool("metrics.emd", v); },
             [](const RunConfig& c) { return std::string(c.metrics.compute_emd ? "true" : "false"); }},
      KeyDef{{"metrics.seed", "seed of the AUC negative sampling (0)"},
             [](RunConfig& c, std::string_view v) { c.metrics.seed = to_uint("metrics.seed", v); },
             [](const RunConfig& c) { return std::to_string(c.metrics.seed); }},
  };
  return table;
}

#undef BVAP_DOUBLE
#undef BVAP_INT

const KeyDef& find_key(std::string_view key) {
  for (const auto& k : key_table())
    if (k.key.name == key) return k;
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

}  // namespace

double RunConfig::resolved_density_sigma() const {
  return density_sigma > 0.0 ? density_sigma : default_density_sigma(model.backbone.base_size);
}

std::span<const ConfigKey> config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& k : key_table()) out.push_back(k.key);
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_key(key).set(cfg, trim(value));
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  return find_key(key).get(cfg);
}

void validate(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0))
    throw std::invalid_argument("train.val_fraction must lie in [0, 1)");
  if (cfg.density_sigma < 0.0) throw std::invalid_argument("data.density_sigma must be >= 0");
  if (cfg.metrics.splits < 1) throw std::invalid_argument("metrics.splits must be >= 1");
  if (cfg.metrics.emd_grid < 1 || cfg.metrics.emd_grid > 32)
    throw std::invalid_argument("metrics.emd_grid must lie in [1, 32]");
}

RunConfig parse_run_config(std::string_view text, std::string_view origin) {
  RunConfig cfg;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos)
      throw std::invalid_argument(where + "expected key = value");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string(origin) + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : key_table()) out += std::string(k.key.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace bvap
