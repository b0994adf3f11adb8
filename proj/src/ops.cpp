#include "bvap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "bvap/kernels.hpp"
#include "kink_monitor.hpp"

namespace bvap {

using detail::grad_target;
using detail::make_result;
using detail::Node;

namespace {

std::string dims(const Shape& s) { return s.str(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                dims(a.shape()) + " vs " + dims(b.shape()));
}

const double* in_value(Node& self, std::size_t i) {
  return self.inputs[i]->value.data();
}

// --- convolution geometry --------------------------------------------------

struct ConvGeom {
  std::int64_t cin, h, w, cout, kh, kw;
  std::int64_t stride, dil, pad_h, pad_w, ho, wo;

  std::size_t k_rows() const { return static_cast<std::size_t>(cin * kh * kw); }
  std::size_t cols() const { return static_cast<std::size_t>(ho * wo); }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad_h == 0 && pad_w == 0;
  }
};

void im2col(const ConvGeom& g, const double* in, double* col) {
  const std::size_t n = g.cols();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    const double* plane = in + ci * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * n;
        const std::int64_t dy = ky * g.dil - g.pad_h;
        const std::int64_t dx = kx * g.dil - g.pad_w;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          double* dst = row + oy * g.wo;
          const std::int64_t iy = oy * g.stride + dy;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + iy * g.w;
          if (g.stride == 1) {
            const std::int64_t lo = std::clamp<std::int64_t>(-dx, 0, g.wo);
            const std::int64_t hi = std::clamp<std::int64_t>(g.w - dx, lo, g.wo);
            for (std::int64_t ox = 0; ox < lo; ++ox) dst[ox] = 0.0;
            std::memcpy(dst + lo, src + lo + dx, sizeof(double) * (hi - lo));
            for (std::int64_t ox = hi; ox < g.wo; ++ox) dst[ox] = 0.0;
          } else {
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox * g.stride + dx;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* in) {
  const std::size_t n = g.cols();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    double* plane = in + ci * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const double* row =
            col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * n;
        const std::int64_t dy = ky * g.dil - g.pad_h;
        const std::int64_t dx = kx * g.dil - g.pad_w;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride + dy;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = plane + iy * g.w;
          if (g.stride == 1) {
            const std::int64_t lo = std::clamp<std::int64_t>(-dx, 0, g.wo);
            const std::int64_t hi = std::clamp<std::int64_t>(g.w - dx, lo, g.wo);
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox + dx] += src[ox];
          } else {
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox * g.stride + dx;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int dilation, Padding padding) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (stride < 1 || dilation < 1)
    throw std::invalid_argument("conv2d: stride and dilation must be positive");
  if (is.c != ks.c)
    throw std::invalid_argument("conv2d: input " + dims(is) +
                                " has channels " + std::to_string(is.c) +
                                " but kernel " + dims(ks) + " expects " +
                                std::to_string(ks.c));
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(ks.n))
    throw std::invalid_argument("conv2d: bias " + dims(bias.shape()) +
                                " does not match kernel " + dims(ks));
  ConvGeom g{is.c, is.h, is.w, ks.n, ks.h, ks.w, stride, dilation, 0, 0, 0, 0};
  const std::int64_t span_h = dilation * (ks.h - 1) + 1;
  const std::int64_t span_w = dilation * (ks.w - 1) + 1;
  if (padding == Padding::same) {
    if (ks.h % 2 == 0 || ks.w % 2 == 0)
      throw std::invalid_argument("conv2d: same padding needs odd kernel, got " +
                                  dims(ks));
    g.pad_h = dilation * (ks.h - 1) / 2;
    g.pad_w = dilation * (ks.w - 1) / 2;
  }
  g.ho = (is.h + 2 * g.pad_h - span_h) / stride + 1;
  g.wo = (is.w + 2 * g.pad_w - span_w) / stride + 1;
  if (is.h + 2 * g.pad_h < span_h || is.w + 2 * g.pad_w < span_w)
    throw std::invalid_argument("conv2d: kernel " + dims(ks) +
                                " larger than input " + dims(is));

  const Shape os{is.n, ks.n, g.ho, g.wo};
  const std::size_t n = g.cols();
  const std::size_t kr = g.k_rows();
  const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.plane();
  const std::size_t out_stride = static_cast<std::size_t>(ks.n) * n;
  const auto& kt = kernels::active();

  std::vector<double> out(os.numel(), 0.0);
  std::vector<double> col(g.pointwise() ? 0 : kr * n);
  const double* wv = kernel.values().data();
  for (std::int64_t b = 0; b < is.n; ++b) {
    double* ob = out.data() + b * out_stride;
    if (bias.defined()) {
      const auto bv = bias.values();
      for (std::int64_t co = 0; co < ks.n; ++co)
        std::fill(ob + co * n, ob + (co + 1) * n, bv[co]);
    }
    const double* ib = input.values().data() + b * in_stride;
    if (g.pointwise()) {
      kt.gemm_nn(ks.n, n, kr, wv, kr, ib, n, ob, n);
    } else {
      im2col(g, ib, col.data());
      kt.gemm_nn(ks.n, n, kr, wv, kr, col.data(), n, ob, n);
    }
  }

  std::vector<Tensor> ins{input, kernel};
  if (bias.defined()) ins.push_back(bias);
  return make_result(
      "conv2d", os, std::move(out), std::move(ins),
      [g, in_stride, out_stride](Node& self) {
        const auto& kt = kernels::active();
        const std::size_t n = g.cols();
        const std::size_t kr = g.k_rows();
        const std::int64_t batch = self.shape.n;
        const double* dout = self.grad.data();
        const double* x = in_value(self, 0);
        const double* w = in_value(self, 1);
        double* dx = grad_target(self, 0);
        double* dw = grad_target(self, 1);
        double* db = self.inputs.size() > 2 ? grad_target(self, 2) : nullptr;

        std::vector<double> wt;
        if (dx != nullptr) {
          wt.resize(static_cast<std::size_t>(g.cout) * kr);
          for (std::int64_t co = 0; co < g.cout; ++co)
            for (std::size_t k = 0; k < kr; ++k)
              wt[k * g.cout + co] = w[co * kr + k];
        }
        std::vector<double> col(g.pointwise() ? 0 : kr * n);
        for (std::int64_t b = 0; b < batch; ++b) {
          const double* gb = dout + b * out_stride;
          if (db != nullptr)
            for (std::int64_t co = 0; co < g.cout; ++co)
              db[co] += kt.sum(n, gb + co * n);
          if (dw != nullptr) {
            const double* src = x + b * in_stride;
            if (!g.pointwise()) {
              im2col(g, src, col.data());
              src = col.data();
            }
            kt.gemm_nt(g.cout, kr, n, gb, n, src, n, dw, kr);
          }
          if (dx != nullptr) {
            double* dst = dx + b * in_stride;
            if (g.pointwise()) {
              kt.gemm_nn(kr, n, g.cout, wt.data(), g.cout, gb, n, dst, n);
            } else {
              std::fill(col.begin(), col.end(), 0.0);
              kt.gemm_nn(kr, n, g.cout, wt.data(), g.cout, gb, n, col.data(), n);
              col2im_add(g, col.data(), dst);
            }
          }
        }
      });
}

Tensor max_pool2d(const Tensor& input, int window, int stride,
                  Padding padding) {
  if (window < 1 || stride < 1)
    throw std::invalid_argument("max_pool2d: window and stride must be >= 1");
  const Shape& s = input.shape();
  std::int64_t ho, wo, pad_top = 0, pad_left = 0;
  if (padding == Padding::same) {
    ho = (s.h + stride - 1) / stride;
    wo = (s.w + stride - 1) / stride;
    const std::int64_t ph = std::max<std::int64_t>((ho - 1) * stride + window - s.h, 0);
    const std::int64_t pw = std::max<std::int64_t>((wo - 1) * stride + window - s.w, 0);
    pad_top = ph / 2;
    pad_left = pw / 2;
    if (window > s.h + ph || window > s.w + pw)
      throw std::invalid_argument("max_pool2d: window larger than padded input " + dims(s));
  } else {
    if (window > s.h || window > s.w)
      throw std::invalid_argument("max_pool2d: window " + std::to_string(window) +
                                  " larger than input " + dims(s));
    ho = (s.h - window) / stride + 1;
    wo = (s.w - window) / stride + 1;
  }
  const Shape os{s.n, s.c, ho, wo};
  std::vector<double> out(os.numel());
  auto argmax = std::make_shared<std::vector<std::size_t>>(os.numel());
  const auto x = input.values();
  std::size_t o = 0;
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * s.plane();
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = std::numeric_limits<std::size_t>::max();
        for (int ky = 0; ky < window; ++ky) {
          const std::int64_t iy = oy * stride + ky - pad_top;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < window; ++kx) {
            const std::int64_t ix = ox * stride + kx - pad_left;
            if (ix < 0 || ix >= s.w) continue;
            const std::size_t idx = base + iy * s.w + ix;
            if (best_i == std::numeric_limits<std::size_t>::max() || x[idx] > best) {
              best = x[idx];
              best_i = idx;
            }
          }
        }
        out[o] = best;
        (*argmax)[o] = best_i;
      }
    }
  }
  detail::record_kinks(std::span<const std::size_t>(*argmax),
                       [](std::size_t i) { return i; });
  return make_result("max_pool2d", os, std::move(out), {input},
                     [argmax](Node& self) {
                       double* dx = grad_target(self, 0);
                       if (dx == nullptr) return;
                       for (std::size_t i = 0; i < argmax->size(); ++i)
                         dx[(*argmax)[i]] += self.grad[i];
                     });
}

Tensor global_avg_pool(const Tensor& input) {
  const Shape& s = input.shape();
  const std::size_t plane = s.plane();
  const auto& kt = kernels::active();
  std::vector<double> out(static_cast<std::size_t>(s.n * s.c));
  for (std::size_t p = 0; p < out.size(); ++p)
    out[p] = kt.sum(plane, input.values().data() + p * plane) / static_cast<double>(plane);
  return make_result("global_avg_pool", Shape{s.n, s.c, 1, 1}, std::move(out),
                     {input}, [plane](Node& self) {
                       double* dx = grad_target(self, 0);
                       if (dx == nullptr) return;
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t p = 0; p < self.grad.size(); ++p) {
                         const double gval = self.grad[p] * inv;
                         for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += gval;
                       }
                     });
}

Tensor nearest_resize(const Tensor& input, int factor) {
  if (factor < 1) throw std::invalid_argument("nearest_resize: factor must be >= 1");
  const Shape& s = input.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<double> out(os.numel());
  const auto x = input.values();
  for (std::int64_t p = 0; p < s.n * s.c; ++p)
    for (std::int64_t y = 0; y < os.h; ++y)
      for (std::int64_t xx = 0; xx < os.w; ++xx)
        out[(p * os.h + y) * os.w + xx] = x[(p * s.h + y / factor) * s.w + xx / factor];
  return make_result("nearest_resize", os, std::move(out), {input},
                     [s, os, factor](Node& self) {
                       double* dx = grad_target(self, 0);
                       if (dx == nullptr) return;
                       for (std::int64_t p = 0; p < s.n * s.c; ++p)
                         for (std::int64_t y = 0; y < os.h; ++y)
                           for (std::int64_t xx = 0; xx < os.w; ++xx)
                             dx[(p * s.h + y / factor) * s.w + xx / factor] +=
                                 self.grad[(p * os.h + y) * os.w + xx];
                     });
}

// --- activations & elementwise ----------------------------------------------

Tensor relu(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  detail::record_kinks(v, [](double e) { return e > 0.0; });
  return make_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    double* dx = grad_target(self, 0);
    if (dx == nullptr) return;
    const double* xv = in_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xv[i] > 0.0) dx[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-v[i]));
  return make_result("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    double* dx = grad_target(self, 0);
    if (dx == nullptr) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      dx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  kernels::active().axpy(out.size(), 1.0, b.values().data(), out.data());
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& kt = kernels::active();
    for (std::size_t i = 0; i < 2; ++i)
      if (double* d = grad_target(self, i)) kt.axpy(self.grad.size(), 1.0, self.grad.data(), d);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  kernels::active().axpy(out.size(), -1.0, b.values().data(), out.data());
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& kt = kernels::active();
    if (double* d = grad_target(self, 0)) kt.axpy(self.grad.size(), 1.0, self.grad.data(), d);
    if (double* d = grad_target(self, 1)) kt.axpy(self.grad.size(), -1.0, self.grad.data(), d);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double* x = in_value(self, 0);
    const double* y = in_value(self, 1);
    if (double* d = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * y[i];
    if (double* d = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * x[i];
  });
}

Tensor mul_constant(const Tensor& x, double k) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= k;
  return make_result("mul_constant", x.shape(), std::move(out), {x}, [k](Node& self) {
    if (double* d = grad_target(self, 0))
      kernels::active().axpy(self.grad.size(), k, self.grad.data(), d);
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1)
    throw std::invalid_argument("scale_by: scale must be a single value, got " +
                                dims(s.shape()));
  const double k = s.values()[0];
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= k;
  return make_result("scale_by", x.shape(), std::move(out), {x, s}, [](Node& self) {
    const auto& kt = kernels::active();
    const std::size_t n = self.grad.size();
    if (double* d = grad_target(self, 0)) kt.axpy(n, in_value(self, 1)[0], self.grad.data(), d);
    if (double* d = grad_target(self, 1)) d[0] += kt.dot(n, self.grad.data(), in_value(self, 0));
  });
}

Tensor channel_scale(const Tensor& x, const Tensor& weights) {
  const Shape& s = x.shape();
  const Shape& ws = weights.shape();
  if (ws != Shape{s.n, s.c, 1, 1})
    throw std::invalid_argument("channel_scale: weights " + dims(ws) +
                                " do not match feature " + dims(s));
  const std::size_t plane = s.plane();
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto wv = weights.values();
  for (std::size_t p = 0; p < wv.size(); ++p)
    for (std::size_t i = 0; i < plane; ++i) out[p * plane + i] *= wv[p];
  return make_result("channel_scale", s, std::move(out), {x, weights},
                     [plane](Node& self) {
                       const auto& kt = kernels::active();
                       const double* xv = in_value(self, 0);
                       const double* wv = in_value(self, 1);
                       const std::size_t planes = self.grad.size() / plane;
                       double* dx = grad_target(self, 0);
                       double* dw = grad_target(self, 1);
                       for (std::size_t p = 0; p < planes; ++p) {
                         const double* g = self.grad.data() + p * plane;
                         if (dx != nullptr) kt.axpy(plane, wv[p], g, dx + p * plane);
                         if (dw != nullptr) dw[p] += kt.dot(plane, g, xv + p * plane);
                       }
                     });
}

// --- channel plumbing ---------------------------------------------------------

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  std::int64_t total_c = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw std::invalid_argument("concat_channels: " + dims(s) +
                                  " incompatible with " + dims(s0));
    total_c += s.c;
  }
  const Shape os{s0.n, total_c, s0.h, s0.w};
  const std::size_t plane = s0.plane();
  std::vector<double> out(os.numel());
  std::vector<std::int64_t> widths;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t c = p.shape().c;
    widths.push_back(c);
    for (std::int64_t b = 0; b < s0.n; ++b)
      std::memcpy(out.data() + (b * total_c + offset) * plane,
                  p.values().data() + b * c * plane, sizeof(double) * c * plane);
    offset += c;
  }
  return make_result("concat_channels", os, std::move(out),
                     std::vector<Tensor>(parts.begin(), parts.end()),
                     [widths, plane, total_c](Node& self) {
                       const std::int64_t batch = self.shape.n;
                       std::int64_t off = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         const std::int64_t c = widths[i];
                         if (double* d = grad_target(self, i)) {
                           for (std::int64_t b = 0; b < batch; ++b) {
                             const double* g = self.grad.data() + (b * total_c + off) * plane;
                             double* dst = d + b * c * plane;
                             for (std::size_t k = 0; k < static_cast<std::size_t>(c) * plane; ++k)
                               dst[k] += g[k];
                           }
                         }
                         off += c;
                       }
                     });
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c)
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) +
                                "," + std::to_string(begin + count) + ") outside " +
                                dims(s));
  const Shape os{s.n, count, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<double> out(os.numel());
  for (std::int64_t b = 0; b < s.n; ++b)
    std::memcpy(out.data() + b * count * plane,
                x.values().data() + (b * s.c + begin) * plane,
                sizeof(double) * count * plane);
  return make_result("slice_channels", os, std::move(out), {x},
                     [s, begin, count, plane](Node& self) {
                       double* d = grad_target(self, 0);
                       if (d == nullptr) return;
                       for (std::int64_t b = 0; b < s.n; ++b) {
                         const double* g = self.grad.data() + b * count * plane;
                         double* dst = d + (b * s.c + begin) * plane;
                         for (std::size_t k = 0; k < static_cast<std::size_t>(count) * plane; ++k)
                           dst[k] += g[k];
                       }
                     });
}

Tensor channel_mean(const Tensor& x) {
  const Shape& s = x.shape();
  const std::size_t plane = s.plane();
  const Shape os{s.n, 1, s.h, s.w};
  std::vector<double> out(os.numel(), 0.0);
  const auto& kt = kernels::active();
  const double inv = 1.0 / static_cast<double>(s.c);
  for (std::int64_t b = 0; b < s.n; ++b)
    for (std::int64_t c = 0; c < s.c; ++c)
      kt.axpy(plane, 1.0, x.values().data() + (b * s.c + c) * plane,
              out.data() + b * plane);
  for (double& v : out) v *= inv;
  return make_result("channel_mean", os, std::move(out), {x},
                     [s, plane, inv](Node& self) {
                       double* d = grad_target(self, 0);
                       if (d == nullptr) return;
                       const auto& kt = kernels::active();
                       for (std::int64_t b = 0; b < s.n; ++b)
                         for (std::int64_t c = 0; c < s.c; ++c)
                           kt.axpy(plane, inv, self.grad.data() + b * plane,
                                   d + (b * s.c + c) * plane);
                     });
}

Tensor squared_residuals(const Tensor& x, const Tensor& pyramid) {
  const Shape& s = x.shape();
  const Shape& ps = pyramid.shape();
  if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
    throw std::invalid_argument("squared_residuals: pyramid " + dims(ps) +
                                " does not match feature " + dims(s));
  const std::int64_t levels = ps.c;
  const std::size_t plane = s.plane();
  const Shape os{s.n, s.c * levels, s.h, s.w};
  std::vector<double> out(os.numel());
  const auto xv = x.values();
  const auto pv = pyramid.values();
  for (std::int64_t b = 0; b < s.n; ++b)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t l = 0; l < levels; ++l) {
        const double* xs = xv.data() + (b * s.c + c) * plane;
        const double* ls = pv.data() + (b * levels + l) * plane;
        double* o = out.data() + ((b * s.c + c) * levels + l) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double r = xs[i] - ls[i];
          o[i] = r * r;
        }
      }
  return make_result(
      "squared_residuals", os, std::move(out), {x, pyramid},
      [s, levels, plane](Node& self) {
        const double* xv = in_value(self, 0);
        const double* pv = in_value(self, 1);
        double* dx = grad_target(self, 0);
        double* dp = grad_target(self, 1);
        for (std::int64_t b = 0; b < s.n; ++b)
          for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t l = 0; l < levels; ++l) {
              const std::size_t xo = (b * s.c + c) * plane;
              const std::size_t po = (b * levels + l) * plane;
              const double* g = self.grad.data() + ((b * s.c + c) * levels + l) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double t = 2.0 * (xv[xo + i] - pv[po + i]) * g[i];
                if (dx != nullptr) dx[xo + i] += t;
                if (dp != nullptr) dp[po + i] -= t;
              }
            }
      });
}

// --- gaussian -------------------------------------------------------------------

int gaussian_radius(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian: sigma must be > 0");
  return static_cast<int>(std::lround(3.0 * sigma));
}

std::vector<double> gaussian_taps(double sigma) {
  const int r = gaussian_radius(sigma);
  std::vector<double> g(2 * r + 1);
  double total = 0.0;
  for (int t = -r; t <= r; ++t) {
    g[t + r] = std::exp(-(t * t) / (2.0 * sigma * sigma));
    total += g[t + r];
  }
  for (double& v : g) v /= total;
  return g;
}

Tensor gaussian_kernel2d(double sigma) {
  return gaussian_kernel2d(sigma, gaussian_radius(sigma));
}

Tensor gaussian_kernel2d(double sigma, int r) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian: sigma must be > 0");
  if (r < 0) throw std::invalid_argument("gaussian: radius must be >= 0");
  const std::int64_t k = 2 * r + 1;
  std::vector<double> v(static_cast<std::size_t>(k * k));
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      v[(dy + r) * k + dx + r] = e;
      total += e;
    }
  for (double& e : v) e /= total;
  return Tensor::from(Shape{1, 1, k, k}, std::move(v));
}

namespace {

// out[y][x] += sum_t g[t] * in[y][x + t - r], zero outside.
void blur_rows(const double* in, double* out, std::int64_t h, std::int64_t w,
               const std::vector<double>& g) {
  const auto& kt = kernels::active();
  const std::int64_t r = static_cast<std::int64_t>(g.size() / 2);
  for (std::int64_t y = 0; y < h; ++y) {
    const double* src = in + y * w;
    double* dst = out + y * w;
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(g.size()); ++t) {
      const std::int64_t off = t - r;
      const std::int64_t lo = std::max<std::int64_t>(0, -off);
      const std::int64_t hi = std::min<std::int64_t>(w, w - off);
      if (hi > lo) kt.axpy(hi - lo, g[t], src + lo + off, dst + lo);
    }
  }
}

// out[y][x] += sum_t g[t] * in[y + t - r][x], zero outside.
void blur_cols(const double* in, double* out, std::int64_t h, std::int64_t w,
               const std::vector<double>& g) {
  const auto& kt = kernels::active();
  const std::int64_t r = static_cast<std::int64_t>(g.size() / 2);
  for (std::int64_t y = 0; y < h; ++y) {
    double* dst = out + y * w;
    const std::int64_t lo = std::max<std::int64_t>(0, r - y);
    const std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(g.size()), h + r - y);
    for (std::int64_t t = lo; t < hi; ++t) kt.axpy(w, g[t], in + (y + t - r) * w, dst);
  }
}

// In-bounds kernel mass for each position along an axis of length n.
std::vector<double> border_mass(std::int64_t n, const std::vector<double>& g) {
  const std::int64_t r = static_cast<std::int64_t>(g.size() / 2);
  std::vector<double> m(n, 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(g.size()); ++t) {
      const std::int64_t j = i + t - r;
      if (j >= 0 && j < n) m[i] += g[t];
    }
  return m;
}

}  // namespace

Tensor gaussian_blur(const Tensor& x, double sigma, Border border) {
  const Shape s = x.shape();
  auto g = std::make_shared<const std::vector<double>>(gaussian_taps(sigma));
  const bool norm = border == Border::normalized;
  auto row_mass = std::make_shared<const std::vector<double>>(
      norm ? border_mass(s.w, *g) : std::vector<double>(s.w, 1.0));
  auto col_mass = std::make_shared<const std::vector<double>>(
      norm ? border_mass(s.h, *g) : std::vector<double>(s.h, 1.0));
  const std::size_t plane = s.plane();
  std::vector<double> out(s.numel(), 0.0);
  std::vector<double> tmp(plane);
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    blur_rows(x.values().data() + p * plane, tmp.data(), s.h, s.w, *g);
    if (norm)
      for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t xx = 0; xx < s.w; ++xx) tmp[y * s.w + xx] /= (*row_mass)[xx];
    double* o = out.data() + p * plane;
    blur_cols(tmp.data(), o, s.h, s.w, *g);
    if (norm)
      for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t xx = 0; xx < s.w; ++xx) o[y * s.w + xx] /= (*col_mass)[y];
  }
  return make_result(
      "gaussian_blur", s, std::move(out), {x},
      [s, g, row_mass, col_mass, norm, plane](Node& self) {
        double* dx = grad_target(self, 0);
        if (dx == nullptr) return;
        std::vector<double> d1(plane), d2(plane);
        for (std::int64_t p = 0; p < s.n * s.c; ++p) {
          const double* go = self.grad.data() + p * plane;
          std::copy(go, go + plane, d1.begin());
          if (norm)
            for (std::int64_t y = 0; y < s.h; ++y)
              for (std::int64_t xx = 0; xx < s.w; ++xx) d1[y * s.w + xx] /= (*col_mass)[y];
          std::fill(d2.begin(), d2.end(), 0.0);
          blur_cols(d1.data(), d2.data(), s.h, s.w, *g);
          if (norm)
            for (std::int64_t y = 0; y < s.h; ++y)
              for (std::int64_t xx = 0; xx < s.w; ++xx) d2[y * s.w + xx] /= (*row_mass)[xx];
          blur_rows(d2.data(), dx + p * plane, s.h, s.w, *g);
        }
      });
}

// --- reductions & losses ----------------------------------------------------------

Tensor sum(const Tensor& x) {
  const double total = kernels::active().sum(x.numel(), x.values().data());
  return make_result("sum", Shape{}, {total}, {x}, [](Node& self) {
    double* d = grad_target(self, 0);
    if (d == nullptr) return;
    const double gval = self.grad[0];
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += gval;
  });
}

Tensor sum_squares(const Tensor& x) {
  const auto v = x.values();
  const double total = kernels::active().dot(v.size(), v.data(), v.data());
  return make_result("sum_squares", Shape{}, {total}, {x}, [](Node& self) {
    double* d = grad_target(self, 0);
    if (d == nullptr) return;
    kernels::active().axpy(self.inputs[0]->value.size(), 2.0 * self.grad[0],
                           in_value(self, 0), d);
  });
}

Tensor normalize_per_image(const Tensor& x) {
  const Shape& s = x.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  const auto& kt = kernels::active();
  auto totals = std::make_shared<std::vector<double>>(s.n);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::int64_t b = 0; b < s.n; ++b) {
    double* o = out.data() + b * per;
    const double t = kt.sum(per, o);
    (*totals)[b] = t;
    if (t > 0.0) {
      for (std::size_t i = 0; i < per; ++i) o[i] /= t;
    } else {
      std::fill(o, o + per, 1.0 / static_cast<double>(per));
    }
  }
  return make_result("normalize_per_image", s, std::move(out), {x},
                     [totals, per](Node& self) {
                       double* d = grad_target(self, 0);
                       if (d == nullptr) return;
                       const auto& kt = kernels::active();
                       for (std::size_t b = 0; b < totals->size(); ++b) {
                         const double t = (*totals)[b];
                         if (!(t > 0.0)) continue;
                         const double* g = self.grad.data() + b * per;
                         const double* y = self.value.data() + b * per;
                         const double proj = kt.dot(per, g, y);
                         for (std::size_t i = 0; i < per; ++i) d[b * per + i] += (g[i] - proj) / t;
                       }
                     });
}

Tensor kl_divergence(const Tensor& m, const Tensor& z, double eps) {
  require_same_shape("kl_divergence", m, z);
  const auto mv = m.values();
  const auto zv = z.values();
  for (std::size_t i = 0; i < mv.size(); ++i)
    if (mv[i] < 0.0 || zv[i] < 0.0)
      throw std::invalid_argument("kl_divergence: negative value at index " +
                                  std::to_string(i));
  const std::int64_t batch = m.shape().n;
  double total = 0.0;
  for (std::size_t i = 0; i < mv.size(); ++i)
    if (zv[i] > 0.0) total += zv[i] * std::log(zv[i] / (mv[i] + eps) + eps);
  total /= static_cast<double>(batch);
  return make_result("kl_divergence", Shape{}, {total}, {m, z},
                     [eps, batch](Node& self) {
                       const double* mv = in_value(self, 0);
                       const double* zv = in_value(self, 1);
                       const std::size_t n = self.inputs[0]->value.size();
                       const double gs = self.grad[0] / static_cast<double>(batch);
                       double* dm = grad_target(self, 0);
                       double* dz = grad_target(self, 1);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double den = mv[i] + eps;
                         const double q = zv[i] / den;
                         if (dm != nullptr) dm[i] -= gs * zv[i] * q / (den * (q + eps));
                         if (dz != nullptr)
                           dz[i] += gs * (std::log(q + eps) + q / (q + eps));
                       }
                     });
}

Tensor centre_bias(const Tensor& log_var_x, const Tensor& log_var_y,
                   std::int64_t size, std::int64_t batch) {
  if (size < 2) throw std::invalid_argument("centre_bias: size must be >= 2");
  if (log_var_x.numel() != 1 || log_var_y.numel() != 1)
    throw std::invalid_argument("centre_bias: log variances must be scalars");
  const double vx = std::exp(log_var_x.values()[0]);
  const double vy = std::exp(log_var_y.values()[0]);
  const double c = 0.5 * static_cast<double>(size - 1);
  const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(vx * vy));
  const std::size_t plane = static_cast<std::size_t>(size * size);
  std::vector<double> out(plane * batch);
  for (std::int64_t y = 0; y < size; ++y)
    for (std::int64_t x = 0; x < size; ++x) {
      const double dx = x - c, dy = y - c;
      out[y * size + x] = norm * std::exp(-(dx * dx / (2.0 * vx) + dy * dy / (2.0 * vy)));
    }
  for (std::int64_t b = 1; b < batch; ++b)
    std::copy(out.begin(), out.begin() + plane, out.begin() + b * plane);
  return make_result("centre_bias", Shape{batch, 1, size, size}, std::move(out),
                     {log_var_x, log_var_y},
                     [size, c, vx, vy, plane](Node& self) {
                       double gx = 0.0, gy = 0.0;
                       const std::size_t batch_n = self.grad.size() / plane;
                       for (std::size_t b = 0; b < batch_n; ++b)
                         for (std::int64_t y = 0; y < size; ++y)
                           for (std::int64_t x = 0; x < size; ++x) {
                             const std::size_t i = b * plane + y * size + x;
                             const double dx = x - c, dy = y - c;
                             const double gm = self.grad[i] * self.value[i];
                             gx += gm * (dx * dx / (2.0 * vx) - 0.5);
                             gy += gm * (dy * dy / (2.0 * vy) - 0.5);
                           }
                       if (double* d = grad_target(self, 0)) d[0] += gx;
                       if (double* d = grad_target(self, 1)) d[0] += gy;
                     });
}

}  // namespace bvap
