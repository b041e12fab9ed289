// Throughput comparison of the OpenMP kernels against the serial reference
// implementations, plus a training-shaped end-to-end step timing.

#include <chrono>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cmsc/model.hpp"
#include "cmsc/numerics.hpp"
#include "cmsc/reference.hpp"
#include "cmsc/rng.hpp"
#include "cmsc/trainer.hpp"

using namespace cmsc;

namespace {

Tensor random_tensor(Rng& rng, Shape s) {
    Tensor t(s);
    for (double& v : t.values()) v = rng.gaussian();
    return t;
}

template <typename F>
double time_loop(int iters, F&& f) {
    f();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / iters;
}

void bench_conv(const char* label, Shape in_shape, int out_c, int k, int iters) {
    Rng rng(1);
    Tensor input = random_tensor(rng, in_shape);
    Conv2dParams params(out_c, in_shape.c, k);
    for (double& v : params.weight.values()) v = rng.gaussian();
    const double macs = static_cast<double>(input.size()) / in_shape.c * in_shape.c * out_c * k * k;

    double sink = 0.0;
    const double t_omp = time_loop(iters, [&] { sink += conv2d(input, params).data()[0]; });
    const double t_ref =
        time_loop(std::max(1, iters / 8), [&] { sink += ref::conv2d_naive(input, params).data()[0]; });

    std::printf("%-26s omp %8.3f ms (%6.2f GMAC/s)   serial %8.3f ms (%6.2f GMAC/s)   x%.1f\n",
                label, t_omp * 1e3, macs / t_omp / 1e9, t_ref * 1e3, macs / t_ref / 1e9,
                t_ref / t_omp);
    if (sink == 42.0) std::printf("#");  // keep the work alive
}

void bench_conv_backward(const char* label, Shape in_shape, int out_c, int k, int iters) {
    Rng rng(2);
    Tensor input = random_tensor(rng, in_shape);
    Conv2dParams params(out_c, in_shape.c, k);
    for (double& v : params.weight.values()) v = rng.gaussian();
    Tensor grad = random_tensor(rng, {in_shape.n, out_c, in_shape.h, in_shape.w});
    const double macs =
        3.0 * static_cast<double>(input.size()) / in_shape.c * in_shape.c * out_c * k * k;

    double sink = 0.0;
    const double t_omp =
        time_loop(iters, [&] { sink += conv2d_backward(input, params, grad).grad_bias[0]; });
    const double t_ref = time_loop(std::max(1, iters / 8), [&] {
        sink += ref::conv2d_backward_naive(input, params, grad).grad_bias[0];
    });

    std::printf("%-26s omp %8.3f ms (%6.2f GMAC/s)   serial %8.3f ms (%6.2f GMAC/s)   x%.1f\n",
                label, t_omp * 1e3, macs / t_omp / 1e9, t_ref * 1e3, macs / t_ref / 1e9,
                t_ref / t_omp);
    if (sink == 42.0) std::printf("#");
}

void bench_train_step() {
    ModelConfig cfg;
    cfg.stages = 2;
    cfg.modules_per_stage = 2;
    cfg.channels = 8;
    CmscModel model = CmscModel::build(cfg);
    init_weights(model, 3);
    OptimizerState state(cfg);

    Rng rng(4);
    Tensor x(8, 1, 24, 24), y(8, 1, 24, 24);
    for (double& v : x.values()) v = rng.uniform();
    for (double& v : y.values()) v = rng.uniform();

    const double t = time_loop(20, [&] {
        CmscForward fwd = cmsc_forward(model, x, Mode::train);
        CascadedLoss loss = cascaded_loss(fwd.final, fwd.intermediates, y,
                                          model.ensemble_weights, 0.5);
        CmscModel grads = cmsc_backward(model, fwd.cache, loss.grad_final,
                                        loss.grads_intermediate);
        clip_gradients(grads, 0.4);
        sgd_step(model, grads, state, 0.01, 0.9, 1e-4);
        commit_bn_stats(model, fwd.cache);
    });
    std::printf("%-26s %8.3f ms per desk-scale batch (S=2 M=2 c=8, 8x24x24)\n", "train_step",
                t * 1e3);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP: %d threads\n", omp_get_max_threads());
#else
    std::printf("OpenMP: disabled\n");
#endif
    bench_conv("conv 8x8x24x24 k3", {8, 8, 24, 24}, 8, 3, 50);
    bench_conv("conv 8x8x24x24 k5", {8, 8, 24, 24}, 8, 5, 50);
    bench_conv("conv 1x64x128x128 k3", {1, 64, 128, 128}, 64, 3, 3);
    bench_conv_backward("conv_bwd 8x8x24x24 k5", {8, 8, 24, 24}, 8, 5, 30);
    bench_train_step();
    return 0;
}
