#pragma once

#include <vector>

#include "cmsc/numerics.hpp"
#include "cmsc/tensor.hpp"

namespace cmsc::ref {

// Serial reference kernels. Deliberately written as direct transcriptions of
// the defining formulas, with no parallelism and no loop restructuring; the
// test suites check the optimized kernels against these, and the benchmark
// binary compares their throughput.

// Direct sextuple-loop "same" convolution with zero padding.
Tensor conv2d_naive(const Tensor& input, const Conv2dParams& params);

// Scalar-at-a-time adjoints of conv2d_naive.
ConvGrads conv2d_backward_naive(const Tensor& input, const Conv2dParams& params,
                                const Tensor& grad_out);

// (x - mean)/sqrt(var + eps) * gamma + beta with the given per-channel stats.
Tensor batchnorm_apply_naive(const Tensor& input, const std::vector<double>& mean,
                             const std::vector<double>& var, const std::vector<double>& gamma,
                             const std::vector<double>& beta, double eps);

// Per-window double-loop SSIM with an explicit 11x11 Gaussian window
// (sigma 1.5, K1 0.01, K2 0.03, dynamic range 1).
double ssim_naive(const std::vector<double>& a, const std::vector<double>& b, int width,
                  int height);

}  // namespace cmsc::ref
