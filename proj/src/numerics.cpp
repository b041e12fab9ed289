#include "cmsc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cmsc {
namespace {

// Entering an OpenMP region costs microseconds even when the if-clause is
// false, which swamps small kernels; dispatch explicitly instead.
constexpr std::size_t kParallelWork = 1u << 16;

void require_conv_input(const Tensor& input, const Conv2dParams& params) {
    if (params.k() % 2 == 0)
        throw std::invalid_argument("conv2d: kernel size must be odd, got " +
                                    std::to_string(params.k()));
    if (input.c() != params.in_c())
        throw std::invalid_argument("conv2d: input channels do not match weight (input " +
                                    input.shape().str() + ", weight " +
                                    params.weight.shape().str() + ")");
}

}  // namespace

Conv2dParams::Conv2dParams(int out_c, int in_c, int k) : weight(out_c, in_c, k, k), bias(out_c, 0.0) {
    if (k % 2 == 0)
        throw std::invalid_argument("Conv2dParams: kernel size must be odd, got " +
                                    std::to_string(k));
}

Tensor conv2d(const Tensor& input, const Conv2dParams& params) {
    require_conv_input(input, params);
    const int n = input.n(), ic = input.c(), h = input.h(), w = input.w();
    const int oc = params.out_c(), k = params.k(), p = params.padding();
    Tensor out(n, oc, h, w);

    const double* in = input.data();
    const double* wt = params.weight.data();
    double* ob = out.data();

    // One (batch, out-channel) plane; the accumulation order over
    // (in-channel, ky, kx) is fixed, so results do not depend on threading.
    const auto plane = [&](int b, int o) {
        double* out_plane = ob + (static_cast<std::size_t>(b) * oc + o) * h * w;
        const double bias = params.bias[o];
        for (int j = 0; j < h * w; ++j) out_plane[j] = bias;
        for (int i = 0; i < ic; ++i) {
            const double* in_plane = in + (static_cast<std::size_t>(b) * ic + i) * h * w;
            const double* w_plane = wt + (static_cast<std::size_t>(o) * ic + i) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int y = std::max(0, p - ky); y < std::min(h, h + p - ky); ++y) {
                    const double* in_row = in_plane + (y + ky - p) * w;
                    double* out_row = out_plane + y * w;
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = w_plane[ky * k + kx];
                        const int xs = std::max(0, p - kx);
                        const int xe = std::min(w, w + p - kx);
                        const double* src = in_row + kx - p;
                        for (int x = xs; x < xe; ++x) out_row[x] += wv * src[x];
                    }
                }
            }
        }
    };

    if (out.size() * ic * k * k > kParallelWork) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < n; ++b)
            for (int o = 0; o < oc; ++o) plane(b, o);
    } else {
        for (int b = 0; b < n; ++b)
            for (int o = 0; o < oc; ++o) plane(b, o);
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Conv2dParams& params, const Tensor& grad_out) {
    require_conv_input(input, params);
    const int n = input.n(), ic = input.c(), h = input.h(), w = input.w();
    const int oc = params.out_c(), k = params.k(), p = params.padding();
    const Shape expect{n, oc, h, w};
    if (grad_out.shape() != expect)
        throw std::invalid_argument("conv2d_backward: grad_out shape " + grad_out.shape().str() +
                                    " does not match output shape " + expect.str());

    ConvGrads grads;
    grads.grad_input = Tensor(input.shape());
    grads.grad_weight = Tensor(params.weight.shape());
    grads.grad_bias.assign(oc, 0.0);

    const double* in = input.data();
    const double* wt = params.weight.data();
    const double* go = grad_out.data();
    const std::size_t work = grad_out.size() * ic * k * k;

    for (int o = 0; o < oc; ++o) {
        double acc = 0.0;
        for (int b = 0; b < n; ++b) {
            const double* g = go + (static_cast<std::size_t>(b) * oc + o) * h * w;
            for (int j = 0; j < h * w; ++j) acc += g[j];
        }
        grads.grad_bias[o] = acc;
    }

    // d/dW: reduction over (n, y, x) in fixed order for each (o, i, ky, kx).
    double* gw = grads.grad_weight.data();
    const auto weight_block = [&](int o, int i) {
        double* w_plane = gw + (static_cast<std::size_t>(o) * ic + i) * k * k;
        for (int b = 0; b < n; ++b) {
            const double* g_plane = go + (static_cast<std::size_t>(b) * oc + o) * h * w;
            const double* in_plane = in + (static_cast<std::size_t>(b) * ic + i) * h * w;
            for (int ky = 0; ky < k; ++ky) {
                for (int y = std::max(0, p - ky); y < std::min(h, h + p - ky); ++y) {
                    const double* in_row = in_plane + (y + ky - p) * w;
                    const double* g_row = g_plane + y * w;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xs = std::max(0, p - kx);
                        const int xe = std::min(w, w + p - kx);
                        const double* src = in_row + kx - p;
                        double acc = 0.0;
                        for (int x = xs; x < xe; ++x) acc += g_row[x] * src[x];
                        w_plane[ky * k + kx] += acc;
                    }
                }
            }
        }
    };

    // d/dx: gather form (transposed convolution with the flipped kernel).
    double* gi = grads.grad_input.data();
    const auto input_block = [&](int b, int i) {
        double* gin_plane = gi + (static_cast<std::size_t>(b) * ic + i) * h * w;
        for (int o = 0; o < oc; ++o) {
            const double* g_plane = go + (static_cast<std::size_t>(b) * oc + o) * h * w;
            const double* w_plane = wt + (static_cast<std::size_t>(o) * ic + i) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                // input row iy draws from grad_out row y = iy + p - ky.
                for (int iy = std::max(0, ky - p); iy < std::min(h, h + ky - p); ++iy) {
                    const double* g_row = g_plane + (iy + p - ky) * w;
                    double* gin_row = gin_plane + iy * w;
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = w_plane[ky * k + kx];
                        const int xs = std::max(0, kx - p);
                        const int xe = std::min(w, w + kx - p);
                        const double* src = g_row + p - kx;
                        for (int ix = xs; ix < xe; ++ix) gin_row[ix] += wv * src[ix];
                    }
                }
            }
        }
    };

    if (work > kParallelWork) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int o = 0; o < oc; ++o)
            for (int i = 0; i < ic; ++i) weight_block(o, i);
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < ic; ++i) input_block(b, i);
    } else {
        for (int o = 0; o < oc; ++o)
            for (int i = 0; i < ic; ++i) weight_block(o, i);
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < ic; ++i) input_block(b, i);
    }
    return grads;
}

BatchNormResult batchnorm_forward(const Tensor& input, const BatchNormParams& params, Mode mode) {
    const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
    if (c != params.channels())
        throw std::invalid_argument("batchnorm_forward: input " + input.shape().str() + " has " +
                                    std::to_string(c) + " channels, params have " +
                                    std::to_string(params.channels()));
    if (params.eps <= 0.0) throw std::invalid_argument("batchnorm_forward: eps must be > 0");
    const std::size_t count = static_cast<std::size_t>(n) * h * w;
    if (mode == Mode::train && count < 2)
        throw std::invalid_argument(
            "batchnorm_forward: train mode needs n*h*w >= 2 per channel, got " +
            std::to_string(count));

    BatchNormResult res;
    res.output = Tensor(input.shape());
    res.cache.xhat = Tensor(input.shape());
    res.cache.inv_std.assign(c, 0.0);
    res.cache.gamma = params.gamma;
    res.cache.mode = mode;
    res.new_running_mean = params.running_mean;
    res.new_running_var = params.running_var;

    const double* in = input.data();
    double* out = res.output.data();
    double* xhat = res.cache.xhat.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    const auto channel = [&](int ch) {
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* p = in + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) sum += p[j];
            }
            mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* p = in + (static_cast<std::size_t>(b) * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    const double d = p[j] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(count);
            const double m = params.stats_momentum;
            res.new_running_mean[ch] = (1.0 - m) * params.running_mean[ch] + m * mean;
            res.new_running_var[ch] = (1.0 - m) * params.running_var[ch] + m * var;
        } else {
            mean = params.running_mean[ch];
            var = params.running_var[ch];
        }
        const double inv_std = 1.0 / std::sqrt(var + params.eps);
        res.cache.inv_std[ch] = inv_std;
        const double g = params.gamma[ch], bta = params.beta[ch];
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double xh = (in[off + j] - mean) * inv_std;
                xhat[off + j] = xh;
                out[off + j] = g * xh + bta;
            }
        }
    };

    if (input.size() > kParallelWork) {
#pragma omp parallel for schedule(static)
        for (int ch = 0; ch < c; ++ch) channel(ch);
    } else {
        for (int ch = 0; ch < c; ++ch) channel(ch);
    }
    return res;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& grad_out) {
    if (cache.mode != Mode::train)
        throw std::logic_error("batchnorm_backward: cache was built in eval mode");
    require_same_shape(cache.xhat, grad_out, "batchnorm_backward");
    const int n = grad_out.n(), c = grad_out.c(), h = grad_out.h(), w = grad_out.w();
    const double count = static_cast<double>(n) * h * w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    BatchNormGrads grads;
    grads.grad_input = Tensor(grad_out.shape());
    grads.grad_gamma.assign(c, 0.0);
    grads.grad_beta.assign(c, 0.0);

    const double* go = grad_out.data();
    const double* xh = cache.xhat.data();
    double* gi = grads.grad_input.data();

    const auto channel = [&](int ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum_g += go[off + j];
                sum_gx += go[off + j] * xh[off + j];
            }
        }
        grads.grad_beta[ch] = sum_g;
        grads.grad_gamma[ch] = sum_gx;
        const double scale = cache.gamma[ch] * cache.inv_std[ch];
        const double mean_g = sum_g / count;
        const double mean_gx = sum_gx / count;
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j)
                gi[off + j] = scale * (go[off + j] - mean_g - xh[off + j] * mean_gx);
        }
    };

    if (grad_out.size() > kParallelWork) {
#pragma omp parallel for schedule(static)
        for (int ch = 0; ch < c; ++ch) channel(ch);
    } else {
        for (int ch = 0; ch < c; ++ch) channel(ch);
    }
    return grads;
}

Tensor leaky_relu(const Tensor& input, double slope) {
    if (!(slope > 0.0 && slope < 1.0))
        throw std::invalid_argument("leaky_relu: slope must be in (0,1), got " +
                                    std::to_string(slope));
    Tensor out(input.shape());
    const double* in = input.data();
    double* o = out.data();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] >= 0.0 ? in[i] : slope * in[i];
    return out;
}

Tensor leaky_relu_backward(const Tensor& input, double slope, const Tensor& grad_out) {
    require_same_shape(input, grad_out, "leaky_relu_backward");
    Tensor out(input.shape());
    const double* in = input.data();
    const double* g = grad_out.data();
    double* o = out.data();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] >= 0.0 ? g[i] : slope * g[i];
    return out;
}

std::pair<Tensor, Tensor> merge_and_run_map(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "merge_and_run_map");
    Tensor m(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) m.data()[i] = (a.data()[i] + b.data()[i]) / 2.0;
    return {m, m};
}

std::pair<Tensor, Tensor> merge_and_run_backward(const Tensor& grad_m1, const Tensor& grad_m2) {
    require_same_shape(grad_m1, grad_m2, "merge_and_run_backward");
    Tensor g(grad_m1.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
        g.data()[i] = (grad_m1.data()[i] + grad_m2.data()[i]) / 2.0;
    return {g, g};
}

}  // namespace cmsc
