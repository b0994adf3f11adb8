// Differentiable operations over bvap::Tensor.
//
// Every op is a pure function of its inputs. When grad mode is on and an
// input requires grad, the result records a backward closure.
#pragma once

#include <span>
#include <vector>

#include "bvap/tensor.hpp"

namespace bvap {

enum class Padding { same, valid };

/// Zero border or normalized convolution (each output divided by the kernel
/// mass that fell inside the image, so constants are preserved exactly).
enum class Border { zero, normalized };

// --- convolution & pooling ------------------------------------------------

/// kernel: (Cout, Cin, kh, kw). bias: Cout values in any layout, or an
/// undefined Tensor for no bias. "same" padding requires odd kernel extents
/// and pads dilation*(k-1)/2 zeros on each side.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int dilation = 1, Padding padding = Padding::same);

/// Windowed maximum. "same" pads with -inf so the output is ceil(H/stride);
/// any odd padding goes after. Gradient goes to the first maximum in
/// row-major window order.
Tensor max_pool2d(const Tensor& input, int window, int stride,
                  Padding padding = Padding::valid);

/// (B,C,H,W) -> (B,C,1,1) spatial mean.
Tensor global_avg_pool(const Tensor& input);

/// Replicates every pixel factor x factor.
Tensor nearest_resize(const Tensor& input, int factor);

// --- activations & elementwise --------------------------------------------

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_constant(const Tensor& x, double k);

/// s is a (1,1,1,1) tensor, typically a learnable scalar.
Tensor scale_by(const Tensor& x, const Tensor& s);

/// x: (B,C,H,W), weights: (B,C,1,1); every plane scaled by its weight.
Tensor channel_scale(const Tensor& x, const Tensor& weights);

// --- channel plumbing -------------------------------------------------------

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count);

/// (B,C,H,W) -> (B,1,H,W) channel mean.
Tensor channel_mean(const Tensor& x);

/// (B,C,H,W), (B,L,H,W) -> (B,C*L,H,W) with channel c*L+l = (x_c - p_l)^2.
Tensor squared_residuals(const Tensor& x, const Tensor& pyramid);

// --- gaussian ---------------------------------------------------------------

/// Truncation radius round(3 sigma).
int gaussian_radius(double sigma);

/// Normalized 1-D taps of length 2*radius+1.
std::vector<double> gaussian_taps(double sigma);

/// (1,1,k,k) kernel, k = 2*round(3 sigma)+1, renormalized to sum 1.
Tensor gaussian_kernel2d(double sigma);
/// Same with an explicit radius, e.g. a 7x7 kernel is radius 3.
Tensor gaussian_kernel2d(double sigma, int radius);

/// Separable per-channel blur, equivalent to a "same" convolution with
/// gaussian_kernel2d(sigma).
Tensor gaussian_blur(const Tensor& x, double sigma, Border border);

// --- reductions & losses ----------------------------------------------------

Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// Each batch item divided by its total; a non-positive total yields the
/// uniform map (with zero gradient).
Tensor normalize_per_image(const Tensor& x);

/// Mean over the batch of sum_t z log(z / (m + eps) + eps). Both inputs
/// must be nonnegative and share a shape.
Tensor kl_divergence(const Tensor& m, const Tensor& z, double eps);

/// Centred 2-D Gaussian density over an S x S grid, replicated over `batch`.
/// log_var_x / log_var_y are (1,1,1,1) tensors holding log variances in
/// squared pixels.
Tensor centre_bias(const Tensor& log_var_x, const Tensor& log_var_y,
                   std::int64_t size, std::int64_t batch = 1);

}  // namespace bvap
