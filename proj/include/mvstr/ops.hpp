#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "mvstr/autograd.hpp"
#include "mvstr/tensor.hpp"

// Differentiable tensor operations. Every function records itself on the
// active tape when an input requires a gradient.
namespace mvstr::ops {

// ---- shape ---------------------------------------------------------------

// One entry may be -1 and is inferred.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose(const Tensor& x, int a, int b);
Tensor slice(const Tensor& x, int dim, std::int64_t start, std::int64_t length);
// Zero padding; pads[i] = (before, after) for dimension i. Shorter lists pad
// the trailing dimensions.
Tensor pad(const Tensor& x, const std::vector<std::pair<std::int64_t, std::int64_t>>& pads);
Tensor concat(const std::vector<Tensor>& xs, int dim);
Tensor squeeze(const Tensor& x, int dim);
Tensor unsqueeze(const Tensor& x, int dim);

// ---- elementwise (numpy-style broadcasting) --------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

// ELU with alpha = 1, so elu(x) + 1 > 0 everywhere.
Tensor elu(const Tensor& x);
// elu(x) + 1 without cancellation for negative x; strictly positive.
Tensor elu_plus_one(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
// Per element: 0.5 d^2 if |d| < 1 else |d| - 0.5, with d = a - b.
Tensor smooth_l1(const Tensor& a, const Tensor& b);

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int dim, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int dim, bool keepdim = false);
// Reduces a broadcast result back to `shape` by summation.
Tensor sum_to(const Tensor& x, const Shape& shape);

// ---- linear algebra / nn ---------------------------------------------------

// a[..., m, k] x b[..., k, n]; batch dimensions broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation. x[B,C,H,W], w[O,C,kh,kw]; bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::array<int, 2> stride = {1, 1}, std::array<int, 2> padding = {0, 0});
// x[B,C,D,H,W], w[O,C,kd,kh,kw].
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::array<int, 3> stride = {1, 1, 1}, std::array<int, 3> padding = {0, 0, 0});

// Normalizes over `axis` (default: last); gamma and beta have that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5, int axis = -1);

Tensor softmax(const Tensor& x, int dim);

struct GridSample {
  Tensor output;  // [B,C,H',W']
  Tensor valid;   // [B,H',W'], 1 where all four taps lie inside the source
};

// x[B,C,H,W]; grid[B,H',W',2] holds (u, v) source pixel coordinates with
// integers at pixel centers. Taps outside the image read as zero.
GridSample grid_sample_bilinear(const Tensor& x, const Tensor& grid);

// Bilinear upsampling of the last two dims by an integer factor. Output
// pixel u samples source coordinate u / factor (clamped to the last pixel),
// matching stride-`factor` subsampling that keeps pixel 0 aligned.
Tensor upsample_bilinear(const Tensor& x, int factor);

// Nearest-neighbour upsampling of the last `spatial_dims` dims.
Tensor upsample_nearest(const Tensor& x, int factor, int spatial_dims);

}  // namespace mvstr::ops
