#pragma once

#include <vector>

#include "cmsc/tensor.hpp"

namespace cmsc {

enum class Mode { train, eval };

// "Same" convolution parameters: odd kernel, zero padding of (k-1)/2 so the
// spatial size is preserved.
struct Conv2dParams {
    Tensor weight;             // (out_c, in_c, k, k)
    std::vector<double> bias;  // (out_c)

    Conv2dParams() = default;
    Conv2dParams(int out_c, int in_c, int k);

    int out_c() const { return weight.n(); }
    int in_c() const { return weight.c(); }
    int k() const { return weight.h(); }
    int padding() const { return (k() - 1) / 2; }
};

struct BatchNormParams {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double eps = 1e-5;
    double stats_momentum = 0.1;

    BatchNormParams() = default;
    explicit BatchNormParams(int channels)
        : gamma(channels, 1.0),
          beta(channels, 0.0),
          running_mean(channels, 0.0),
          running_var(channels, 1.0) {}

    int channels() const { return static_cast<int>(gamma.size()); }
};

// Forward convolution. Parallelized over (batch, out-channel); each output
// scalar is reduced in a fixed index order, so results are independent of
// thread count.
Tensor conv2d(const Tensor& input, const Conv2dParams& params);

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_weight;
    std::vector<double> grad_bias;
};

ConvGrads conv2d_backward(const Tensor& input, const Conv2dParams& params, const Tensor& grad_out);

struct BatchNormCache {
    Tensor xhat;                   // normalized input
    std::vector<double> inv_std;   // per channel, 1/sqrt(var+eps)
    std::vector<double> gamma;
    Mode mode = Mode::train;
};

struct BatchNormResult {
    Tensor output;
    BatchNormCache cache;
    // Updated running statistics; committed by the caller, never mutated here.
    std::vector<double> new_running_mean;
    std::vector<double> new_running_var;
};

// Train mode normalizes by batch statistics over (n,h,w) per channel and
// folds them into the running stats by EMA:
//   running <- (1 - momentum)*running + momentum*batch.
// Eval mode normalizes by the stored running stats.
BatchNormResult batchnorm_forward(const Tensor& input, const BatchNormParams& params, Mode mode);

struct BatchNormGrads {
    Tensor grad_input;
    std::vector<double> grad_gamma;
    std::vector<double> grad_beta;
};

// Exact adjoint of the train-mode forward; gradients flow through the batch
// statistics.
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& grad_out);

// y = x for x >= 0, slope*x otherwise. The subgradient at exactly 0 is 1.
Tensor leaky_relu(const Tensor& input, double slope);
Tensor leaky_relu_backward(const Tensor& input, double slope, const Tensor& grad_out);

// Merge-and-run mapping: both outputs are the elementwise average (a+b)/2.
std::pair<Tensor, Tensor> merge_and_run_map(const Tensor& a, const Tensor& b);
// Linear map, so the adjoint splits the incoming gradients equally.
std::pair<Tensor, Tensor> merge_and_run_backward(const Tensor& grad_m1, const Tensor& grad_m2);

}  // namespace cmsc
