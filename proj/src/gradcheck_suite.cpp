#include "bvap/gradcheck_suite.hpp"

#include <cstdio>
#include <random>

#include "bvap/attention.hpp"
#include "bvap/backbone.hpp"
#include "bvap/contrast.hpp"
#include "bvap/dense_fusion.hpp"
#include "bvap/head.hpp"
#include "bvap/model.hpp"
#include "bvap/ops.hpp"

namespace bvap {

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                     bool rg = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) x = d(rng);
  return Tensor::from(s, std::move(v), rg);
}

// sum(out * r) with a fixed random r, so every output element carries a
// distinct weight.
std::function<Tensor(const Tensor&)> weighted(std::function<Tensor(const Tensor&)> f,
                                              std::uint64_t seed) {
  auto r = std::make_shared<Tensor>();
  return [f = std::move(f), r, seed](const Tensor& x) {
    const Tensor y = f(x);
    if (!r->defined() || r->shape() != y.shape()) {
      std::mt19937_64 rng(seed);
      *r = random_tensor(y.shape(), rng, 0.5, 1.5, false);
    }
    return sum(mul(y, *r));
  };
}

GradCheckResult check(std::function<Tensor(const Tensor&)> f, Tensor input,
                      std::size_t max_elements = 0, std::uint64_t seed = 11) {
  GradCheckOptions opts;
  opts.max_elements = max_elements;
  return grad_check(weighted(std::move(f), seed), std::move(input), opts);
}

// Pools several fixtures of a case; fixtures whose probes all cross a kink
// contribute nothing.
GradCheckResult merge(std::span<const GradCheckResult> parts) {
  GradCheckResult out;
  for (const auto& r : parts) {
    if (r.checked > 0 && (out.checked == 0 || r.max_rel_error > out.max_rel_error)) {
      out.max_rel_error = r.max_rel_error;
      out.worst_index = r.worst_index;
      out.analytic = r.analytic;
      out.numeric = r.numeric;
    }
    out.checked += r.checked;
    out.skipped += r.skipped;
  }
  return out;
}

}  // namespace

std::vector<GradCase> default_grad_cases() {
  std::vector<GradCase> cases;
  auto add = [&cases](std::string name, std::function<GradCheckResult()> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  add("conv2d.input", [] {
    std::mt19937_64 rng(1);
    const Tensor k = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
    const Tensor b = random_tensor({1, 3, 1, 1}, rng, -1, 1, false);
    return check([k, b](const Tensor& x) { return conv2d(x, k, b); }, random_tensor({2, 2, 5, 5}, rng));
  });
  add("conv2d.kernel", [] {
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({2, 2, 5, 5}, rng, -1, 1, false);
    return check([x](const Tensor& k) { return conv2d(x, k, Tensor{}, 2, 1, Padding::valid); },
                 random_tensor({3, 2, 3, 3}, rng));
  });
  add("conv2d.bias", [] {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({2, 2, 5, 5}, rng, -1, 1, false);
    const Tensor k = random_tensor({3, 2, 1, 1}, rng, -1, 1, false);
    return check([x, k](const Tensor& b) { return conv2d(x, k, b); }, random_tensor({1, 3, 1, 1}, rng));
  });
  add("conv2d.dilated", [] {
    std::mt19937_64 rng(4);
    const Tensor k = random_tensor({2, 2, 3, 3}, rng, -1, 1, false);
    return check([k](const Tensor& x) { return conv2d(x, k, Tensor{}, 1, 2, Padding::same); },
                 random_tensor({1, 2, 6, 6}, rng));
  });
  add("relu", [] {
    std::mt19937_64 rng(5);
    return check([](const Tensor& x) { return relu(x); }, random_tensor({1, 2, 4, 4}, rng));
  });
  add("sigmoid", [] {
    std::mt19937_64 rng(6);
    return check([](const Tensor& x) { return sigmoid(x); }, random_tensor({1, 2, 4, 4}, rng, -3, 3));
  });
  add("max_pool2d.valid", [] {
    std::mt19937_64 rng(7);
    return check([](const Tensor& x) { return max_pool2d(x, 2, 2, Padding::valid); },
                 random_tensor({2, 2, 6, 6}, rng));
  });
  add("max_pool2d.same_stride1", [] {
    std::mt19937_64 rng(8);
    return check([](const Tensor& x) { return max_pool2d(x, 2, 1, Padding::same); },
                 random_tensor({1, 2, 5, 5}, rng));
  });
  add("global_avg_pool", [] {
    std::mt19937_64 rng(9);
    return check([](const Tensor& x) { return global_avg_pool(x); }, random_tensor({2, 3, 4, 4}, rng));
  });
  add("nearest_resize", [] {
    std::mt19937_64 rng(10);
    return check([](const Tensor& x) { return nearest_resize(x, 2); }, random_tensor({1, 2, 3, 3}, rng));
  });
  add("concat_slice", [] {
    std::mt19937_64 rng(11);
    const Tensor other = random_tensor({1, 2, 3, 3}, rng, -1, 1, false);
    return check(
        [other](const Tensor& x) {
          const Tensor parts[] = {x, other};
          return slice_channels(concat_channels(parts), 1, 3);
        },
        random_tensor({1, 3, 3, 3}, rng));
  });
  add("gaussian_blur", [] {
    std::mt19937_64 rng(12);
    return check([](const Tensor& x) { return gaussian_blur(x, 1.3, Border::normalized); },
                 random_tensor({1, 2, 7, 6}, rng));
  });
  add("normalize_per_image", [] {
    std::mt19937_64 rng(13);
    return check([](const Tensor& x) { return normalize_per_image(x); },
                 random_tensor({2, 1, 4, 4}, rng, 0.1, 1.0));
  });
  add("contrast.input", [] {
    std::mt19937_64 rng(14);
    ParamStore ps;
    ContrastConfig cfg = ContrastConfig::for_base(16);
    build_contrast(ps, "c", 2, cfg, rng, 0.0);
    return check([ps, cfg](const Tensor& o) { return contrast_features(o, cfg, ps, "c"); },
                 random_tensor({1, 2, 8, 8}, rng));
  });
  add("contrast.merge_weight", [] {
    std::mt19937_64 rng(15);
    ParamStore ps;
    ContrastConfig cfg = ContrastConfig::for_base(16);
    build_contrast(ps, "c", 2, cfg, rng, 0.0);
    const Tensor o = random_tensor({1, 2, 8, 8}, rng, -1, 1, false);
    return check([ps, cfg, o](const Tensor&) { return contrast_features(o, cfg, ps, "c"); },
                 ps.get("c.merge.weight"));
  });
  add("reduction_attention.input", [] {
    std::mt19937_64 rng(16);
    ParamStore ps;
    build_ra_block(ps, "ra", 4, 3, true, rng, {0.0, 0.1});
    return check([ps](const Tensor& x) { return reduction_attention(x, ra_params(ps, "ra")); },
                 random_tensor({2, 4, 4, 4}, rng));
  });
  add("reduction_attention.fc_weight", [] {
    std::mt19937_64 rng(17);
    ParamStore ps;
    build_ra_block(ps, "ra", 4, 3, true, rng, {0.0, 0.1});
    const Tensor x = random_tensor({2, 4, 4, 4}, rng, -1, 1, false);
    return check([ps, x](const Tensor&) { return reduction_attention(x, ra_params(ps, "ra")); },
                 ps.get("ra.fc.weight"));
  });
  add("resize_conv", [] {
    std::mt19937_64 rng(18);
    const Tensor k = random_tensor({2, 2, 3, 3}, rng, -1, 1, false);
    const Tensor b = random_tensor({1, 2, 1, 1}, rng, -1, 1, false);
    return check([k, b](const Tensor& x) { return resize_conv(x, k, b); }, random_tensor({1, 2, 3, 3}, rng));
  });
  auto dense_setup = [](std::mt19937_64& rng, ParamStore& ps, std::array<Tensor, kLevels>& f) {
    const std::array<std::int64_t, kLevels> widths{2, 3, 3, 4, 4};
    build_dense_fusion(ps, widths, DenseFusionConfig{3, true, {0.0, 0.1}}, rng);
    const std::array<std::int64_t, kLevels> sizes{8, 4, 2, 1, 1};
    for (int i = 0; i < kLevels; ++i)
      f[i] = random_tensor({1, widths[i], sizes[i], sizes[i]}, rng, 0.0, 1.0, false);
  };
  for (int i = 1; i <= kLevels - 1; ++i) {
    add("dense_combine.w1_" + std::to_string(i), [dense_setup, i] {
      std::vector<GradCheckResult> parts;
      for (const std::uint64_t seed : {19u, 119u, 219u}) {
        std::mt19937_64 rng(seed);
        ParamStore ps;
        std::array<Tensor, kLevels> f;
        dense_setup(rng, ps, f);
        parts.push_back(check([ps, f](const Tensor&) { return dense_combine(f, ps)[0]; },
                              ps.get(branch_weight_name(1, i))));
      }
      return merge(parts);
    });
  }
  add("dense_combine.f3", [dense_setup] {
    std::mt19937_64 rng(20);
    ParamStore ps;
    std::array<Tensor, kLevels> f;
    dense_setup(rng, ps, f);
    f[2] = f[2].clone(true);
    const auto fixed = f;
    return check(
        [ps, fixed](const Tensor& x) {
          auto g = fixed;
          g[2] = x;
          const auto out = dense_combine(g, ps);
          return concat_channels(out);
        },
        f[2]);
  });
  add("centre_bias.log_var_x", [] {
    ParamStore ps;
    build_prior(ps, 9);
    return check([ps](const Tensor&) { return centre_bias_map(9, ps).values; },
                 ps.get("head.prior.log_var_x"));
  });
  add("centre_bias.log_var_y", [] {
    ParamStore ps;
    build_prior(ps, 8);
    return check([ps](const Tensor&) { return centre_bias_map(8, ps, 2).values; },
                 ps.get("head.prior.log_var_y"));
  });
  add("kl_loss.prediction", [] {
    std::mt19937_64 rng(21);
    const Tensor z = normalize_per_image(random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0, false));
    return grad_check(
        [z](const Tensor& m) {
          return kl_loss(AttentionMap{normalize_per_image(m), true}, AttentionMap{z, true}, 1e-8);
        },
        random_tensor({2, 1, 4, 4}, rng, 0.1, 1.0));
  });
  add("fuse.network", [] {
    std::mt19937_64 rng(22);
    ParamStore ps;
    HeadConfig hc;
    hc.hidden = {4, 3};
    build_prior(ps, 8);
    build_fusion(ps, 2, hc, rng);
    std::vector<AttentionMap> rough;
    for (int k = 0; k < 2; ++k)
      rough.push_back({normalize_per_image(random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0, false)), true});
    return check(
        [ps, hc, rough](const Tensor&) {
          const AttentionMap prior = centre_bias_map(8, ps);
          return fuse(rough, &prior, ps, hc, 2).values;
        },
        ps.get("head.fusion.1.reduce.weight"));
  });
  add("backbone.image", [] {
    BackboneConfig cfg;
    cfg.base_size = 16;
    cfg.width_factor = 0.125;
    cfg.init_std = 0.0;
    const ParamStore ps = build_backbone(cfg, 3);
    std::mt19937_64 rng(23);
    return check([ps, cfg](const Tensor& x) { return forward_backbone(ps, cfg, x).f5; },
                 random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0), 96);
  });
  add("model.total_loss", [] {
    ModelConfig mc;
    mc.backbone.base_size = 16;
    mc.backbone.width_factor = 0.125;
    mc.backbone.init_std = 0.0;
    mc.fuse_channels = 4;
    mc.head.hidden = {4, 3};
    const Model model(mc, 5);
    std::mt19937_64 rng(24);
    const Tensor z = normalize_per_image(random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0, false));
    const Tensor image = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0, false);
    GradCheckOptions opts;
    opts.max_elements = 8;
    return grad_check(
        [&model, image, z](const Tensor&) {
          return model.loss(model.forward(image), AttentionMap{z, true}, 0.0005);
        },
        model.params().get("contrast.f1.merge.weight"), opts);
  });
  return cases;
}

GradSuiteReport run_grad_cases(std::span<const GradCase> cases, std::ostream& out,
                               double tolerance) {
  GradSuiteReport report;
  for (const auto& c : cases) {
    const GradCheckResult r = c.run();
    const bool pass = r.checked > 0 && r.max_rel_error <= tolerance;
    char line[256];
    std::snprintf(line, sizeof(line), "%s %s max_rel_err=%.3e checked=%zu skipped=%zu",
                  pass ? "PASS" : "FAIL", c.name.c_str(), r.max_rel_error, r.checked, r.skipped);
    out << line;
    if (!pass) {
      std::snprintf(line, sizeof(line), " worst_element=%zu analytic=%.12g numeric=%.12g",
                    r.worst_index, r.analytic, r.numeric);
      out << line;
    }
    out << '\n';
    (pass ? report.passed : report.failed) += 1;
    report.worst_error = std::max(report.worst_error, r.max_rel_error);
  }
  return report;
}

}  // namespace bvap
