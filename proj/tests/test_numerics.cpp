#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cmsc/numerics.hpp"
#include "cmsc/reference.hpp"
#include "cmsc/rng.hpp"
#include "support/fd.hpp"

using namespace cmsc;

namespace {

Tensor random_tensor(Rng& rng, Shape s, double scale = 1.0) {
    Tensor t(s);
    for (double& v : t.values()) v = rng.gaussian(0.0, scale);
    return t;
}

}  // namespace

TEST_CASE("conv2d zero-padding arithmetic on an all-ones 3x3") {
    Tensor input = Tensor::full({1, 1, 3, 3}, 1.0);
    Conv2dParams params(1, 1, 3);
    for (double& v : params.weight.values()) v = 1.0;

    const Tensor out = conv2d(input, params);
    CHECK(out.at(0, 0, 1, 1) == 9.0);
    CHECK(out.at(0, 0, 0, 0) == 4.0);
    CHECK(out.at(0, 0, 0, 2) == 4.0);
    CHECK(out.at(0, 0, 2, 0) == 4.0);
    CHECK(out.at(0, 0, 2, 2) == 4.0);
    CHECK(out.at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d with a delta kernel is the identity") {
    Rng rng(11);
    Tensor input = random_tensor(rng, {2, 3, 5, 7});
    Conv2dParams params(3, 3, 3);
    for (int o = 0; o < 3; ++o) params.weight.at(o, o, 1, 1) = 1.0;

    const Tensor out = conv2d(input, params);
    CHECK(max_abs_diff(out, input) == 0.0);
}

TEST_CASE("conv2d matches the naive sextuple-loop reference") {
    Rng rng(42);
    Tensor input = random_tensor(rng, {2, 3, 8, 8});
    Conv2dParams params(4, 3, 5);
    for (double& v : params.weight.values()) v = rng.gaussian();
    for (double& v : params.bias) v = rng.gaussian();

    const Tensor fast = conv2d(input, params);
    const Tensor slow = ref::conv2d_naive(input, params);
    CHECK(max_abs_diff(fast, slow) <= 1e-12);
}

TEST_CASE("conv2d is linear in input and weight") {
    Rng rng(5);
    Tensor a = random_tensor(rng, {1, 2, 6, 6});
    Tensor b = random_tensor(rng, {1, 2, 6, 6});
    Conv2dParams params(2, 2, 3);
    for (double& v : params.weight.values()) v = rng.gaussian();

    Tensor combo(a.shape());
    for (std::size_t i = 0; i < combo.size(); ++i)
        combo.data()[i] = 2.0 * a.data()[i] - 3.0 * b.data()[i];
    Tensor expect(a.shape());
    const Tensor ca = conv2d(a, params), cb = conv2d(b, params);
    for (std::size_t i = 0; i < expect.size(); ++i)
        expect.data()[i] = 2.0 * ca.data()[i] - 3.0 * cb.data()[i];
    CHECK(max_abs_diff(conv2d(combo, params), expect) <= 1e-12);
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
    Tensor input(1, 3, 4, 4);
    Conv2dParams params(2, 4, 3);
    CHECK_THROWS_WITH_AS(conv2d(input, params),
                         doctest::Contains("1x3x4x4"), std::invalid_argument);
}

TEST_CASE("conv2d_backward zero upstream gradient") {
    Rng rng(3);
    Tensor input = random_tensor(rng, {1, 2, 4, 4});
    Conv2dParams params(2, 2, 3);
    for (double& v : params.weight.values()) v = rng.gaussian();

    const ConvGrads g = conv2d_backward(input, params, Tensor(1, 2, 4, 4));
    for (double v : g.grad_input.values()) CHECK(v == 0.0);
    for (double v : g.grad_weight.values()) CHECK(v == 0.0);
    for (double v : g.grad_bias) CHECK(v == 0.0);
}

TEST_CASE("conv2d_backward scalar chain rule on 1x1x1x1") {
    Tensor input(1, 1, 1, 1);
    input.data()[0] = 3.0;
    Conv2dParams params(1, 1, 1);
    params.weight.data()[0] = -2.0;
    Tensor grad_out(1, 1, 1, 1);
    grad_out.data()[0] = 0.5;

    const ConvGrads g = conv2d_backward(input, params, grad_out);
    CHECK(g.grad_input.data()[0] == -2.0 * 0.5);
    CHECK(g.grad_weight.data()[0] == 3.0 * 0.5);
    CHECK(g.grad_bias[0] == 0.5);
}

TEST_CASE("conv2d_backward matches naive adjoints and finite differences") {
    Rng rng(19);
    Tensor input = random_tensor(rng, {2, 2, 5, 5});
    Conv2dParams params(3, 2, 3);
    for (double& v : params.weight.values()) v = rng.gaussian(0.0, 0.5);
    for (double& v : params.bias) v = rng.gaussian(0.0, 0.5);
    const Tensor contraction = random_tensor(rng, {2, 3, 5, 5});

    const ConvGrads fast = conv2d_backward(input, params, contraction);
    const ConvGrads slow = ref::conv2d_backward_naive(input, params, contraction);
    CHECK(max_abs_diff(fast.grad_input, slow.grad_input) <= 1e-12);
    CHECK(max_abs_diff(fast.grad_weight, slow.grad_weight) <= 1e-12);

    const auto objective = [&] { return dot(contraction, conv2d(input, params)); };
    CHECK(testsupport::fd_check(input.values(), fast.grad_input.values(), objective) <= 1e-6);
    CHECK(testsupport::fd_check(params.weight.values(), fast.grad_weight.values(), objective) <=
          1e-6);
    CHECK(testsupport::fd_check(params.bias, fast.grad_bias, objective) <= 1e-6);
}

TEST_CASE("batchnorm train mode normalizes per channel") {
    Rng rng(7);
    Tensor input = random_tensor(rng, {4, 3, 6, 6}, 2.5);
    BatchNormParams params(3);

    const BatchNormResult res = batchnorm_forward(input, params, Mode::train);
    const std::size_t plane = 36;
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0.0, var = 0.0;
        for (int b = 0; b < 4; ++b)
            for (std::size_t j = 0; j < plane; ++j) mean += res.output.at(b, ch, j / 6, j % 6);
        mean /= 4 * plane;
        for (int b = 0; b < 4; ++b)
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = res.output.at(b, ch, j / 6, j % 6) - mean;
                var += d * d;
            }
        var /= 4 * plane;
        CHECK(std::abs(mean) <= 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("batchnorm constant channel collapses to beta") {
    Tensor input = Tensor::full({2, 1, 3, 3}, 0.7);
    BatchNormParams params(1);
    params.gamma[0] = 2.0;
    params.beta[0] = 3.0;

    const BatchNormResult res = batchnorm_forward(input, params, Mode::train);
    for (double v : res.output.values()) CHECK(v == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("batchnorm eval mode matches the direct formula") {
    Rng rng(23);
    Tensor input = random_tensor(rng, {2, 3, 4, 4});
    BatchNormParams params(3);
    for (int c = 0; c < 3; ++c) {
        params.gamma[c] = rng.gaussian(1.0, 0.2);
        params.beta[c] = rng.gaussian(0.0, 0.2);
        params.running_mean[c] = rng.gaussian(0.0, 0.5);
        params.running_var[c] = 0.5 + rng.uniform();
    }

    const BatchNormResult res = batchnorm_forward(input, params, Mode::eval);
    const Tensor expect = ref::batchnorm_apply_naive(input, params.running_mean,
                                                     params.running_var, params.gamma,
                                                     params.beta, params.eps);
    CHECK(max_abs_diff(res.output, expect) <= 1e-12);
}

TEST_CASE("batchnorm updates running stats by EMA without mutating params") {
    Rng rng(31);
    Tensor input = random_tensor(rng, {2, 1, 3, 3}, 2.0);
    BatchNormParams params(1);
    params.running_mean[0] = 0.25;
    params.running_var[0] = 2.0;

    double mean = 0.0;
    for (double v : input.values()) mean += v;
    mean /= input.size();
    double var = 0.0;
    for (double v : input.values()) var += (v - mean) * (v - mean);
    var /= input.size();

    const BatchNormResult res = batchnorm_forward(input, params, Mode::train);
    CHECK(res.new_running_mean[0] == doctest::Approx(0.9 * 0.25 + 0.1 * mean).epsilon(1e-14));
    CHECK(res.new_running_var[0] == doctest::Approx(0.9 * 2.0 + 0.1 * var).epsilon(1e-14));
    CHECK(params.running_mean[0] == 0.25);
    CHECK(params.running_var[0] == 2.0);
}

TEST_CASE("batchnorm rejects a single spatial-batch element in train mode") {
    Tensor input(1, 3, 1, 1);
    BatchNormParams params(3);
    CHECK_THROWS_AS(batchnorm_forward(input, params, Mode::train), std::invalid_argument);
    CHECK_NOTHROW(batchnorm_forward(input, params, Mode::eval));
}

TEST_CASE("batchnorm_backward projection property and finite differences") {
    Rng rng(13);
    Tensor input = random_tensor(rng, {2, 2, 4, 4});
    BatchNormParams params(2);

    const BatchNormResult fwd = batchnorm_forward(input, params, Mode::train);

    SUBCASE("zero grad_out gives zero gradients") {
        const BatchNormGrads g = batchnorm_backward(fwd.cache, Tensor(2, 2, 4, 4));
        for (double v : g.grad_input.values()) CHECK(v == 0.0);
        for (double v : g.grad_gamma) CHECK(v == 0.0);
        for (double v : g.grad_beta) CHECK(v == 0.0);
    }

    SUBCASE("constant grad_out lands in the mean-subtraction null space") {
        const BatchNormGrads g = batchnorm_backward(fwd.cache, Tensor::full({2, 2, 4, 4}, 0.37));
        for (int ch = 0; ch < 2; ++ch) {
            double sum = 0.0;
            for (int b = 0; b < 2; ++b)
                for (int y = 0; y < 4; ++y)
                    for (int x = 0; x < 4; ++x) sum += g.grad_input.at(b, ch, y, x);
            CHECK(std::abs(sum) <= 1e-12);
        }
    }

    SUBCASE("matches finite differences") {
        for (int c = 0; c < 2; ++c) {
            params.gamma[c] = rng.gaussian(1.0, 0.2);
            params.beta[c] = rng.gaussian(0.0, 0.2);
        }
        const Tensor contraction = random_tensor(rng, {2, 2, 4, 4});
        const BatchNormResult fwd2 = batchnorm_forward(input, params, Mode::train);
        const BatchNormGrads g = batchnorm_backward(fwd2.cache, contraction);
        const auto objective = [&] {
            return dot(contraction, batchnorm_forward(input, params, Mode::train).output);
        };
        CHECK(testsupport::fd_check(input.values(), g.grad_input.values(), objective) <= 1e-6);
        CHECK(testsupport::fd_check(params.gamma, g.grad_gamma, objective) <= 1e-6);
        CHECK(testsupport::fd_check(params.beta, g.grad_beta, objective) <= 1e-6);
    }
}

TEST_CASE("leaky_relu values and the subgradient convention at zero") {
    Tensor x(1, 1, 1, 3);
    x.data()[0] = 2.0;
    x.data()[1] = -1.0;
    x.data()[2] = 0.0;

    const Tensor y = leaky_relu(x, 0.2);
    CHECK(y.data()[0] == 2.0);
    CHECK(y.data()[1] == doctest::Approx(-0.2).epsilon(1e-15));
    CHECK(y.data()[2] == 0.0);

    Tensor g = Tensor::full({1, 1, 1, 3}, 1.0);
    const Tensor gx = leaky_relu_backward(x, 0.2, g);
    CHECK(gx.data()[0] == 1.0);
    CHECK(gx.data()[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(gx.data()[2] == 1.0);  // subgradient at 0 follows the positive branch
}

TEST_CASE("leaky_relu rejects slopes outside (0,1)") {
    Tensor x(1, 1, 1, 1);
    CHECK_THROWS_AS(leaky_relu(x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(leaky_relu(x, 1.0), std::invalid_argument);
}

TEST_CASE("merge_and_run_map averages and is idempotent") {
    Rng rng(77);
    Tensor a = random_tensor(rng, {1, 2, 3, 3});
    Tensor b = random_tensor(rng, {1, 2, 3, 3});

    SUBCASE("fixed point when both inputs agree") {
        const auto [m1, m2] = merge_and_run_map(a, a);
        CHECK(max_abs_diff(m1, a) == 0.0);
        CHECK(max_abs_diff(m2, a) == 0.0);
    }

    SUBCASE("scalar average") {
        Tensor s2 = Tensor::full({1, 1, 1, 1}, 2.0);
        Tensor s4 = Tensor::full({1, 1, 1, 1}, 4.0);
        const auto [m1, m2] = merge_and_run_map(s2, s4);
        CHECK(m1.data()[0] == 3.0);
        CHECK(m2.data()[0] == 3.0);
    }

    SUBCASE("applying the map twice equals applying it once, bit for bit") {
        const auto once = merge_and_run_map(a, b);
        const auto twice = merge_and_run_map(once.first, once.second);
        CHECK(max_abs_diff(once.first, twice.first) == 0.0);
        CHECK(max_abs_diff(once.second, twice.second) == 0.0);
    }

    SUBCASE("backward splits gradients equally") {
        const Tensor g1 = random_tensor(rng, {1, 2, 3, 3});
        const Tensor g2 = random_tensor(rng, {1, 2, 3, 3});
        const auto [ga, gb] = merge_and_run_backward(g1, g2);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            CHECK(ga.data()[i] == (g1.data()[i] + g2.data()[i]) / 2.0);
            CHECK(gb.data()[i] == ga.data()[i]);
        }
    }

    SUBCASE("shape mismatch rejected") {
        Tensor c(1, 2, 3, 4);
        CHECK_THROWS_AS(merge_and_run_map(a, c), std::invalid_argument);
    }
}

#ifdef _OPENMP
TEST_CASE("kernel results are independent of thread count") {
    Rng rng(101);
    Tensor input = random_tensor(rng, {4, 8, 24, 24});
    Conv2dParams params(8, 8, 5);
    for (double& v : params.weight.values()) v = rng.gaussian();
    BatchNormParams bn(8);
    const Tensor grad_out = random_tensor(rng, {4, 8, 24, 24});

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const Tensor conv1 = conv2d(input, params);
    const ConvGrads back1 = conv2d_backward(input, params, grad_out);
    const Tensor bn1 = batchnorm_forward(input, bn, Mode::train).output;
    omp_set_num_threads(4);
    const Tensor conv4 = conv2d(input, params);
    const ConvGrads back4 = conv2d_backward(input, params, grad_out);
    const Tensor bn4 = batchnorm_forward(input, bn, Mode::train).output;
    omp_set_num_threads(saved);

    CHECK(max_abs_diff(conv1, conv4) == 0.0);
    CHECK(max_abs_diff(back1.grad_input, back4.grad_input) == 0.0);
    CHECK(max_abs_diff(back1.grad_weight, back4.grad_weight) == 0.0);
    CHECK(max_abs_diff(bn1, bn4) == 0.0);
}
#endif

TEST_CASE("documented operations keep finite inputs finite") {
    Rng rng(55);
    Tensor input = random_tensor(rng, {2, 3, 8, 8}, 10.0);
    Conv2dParams params(3, 3, 3);
    for (double& v : params.weight.values()) v = rng.gaussian();
    BatchNormParams bn(3);

    CHECK(conv2d(input, params).all_finite());
    CHECK(batchnorm_forward(input, bn, Mode::train).output.all_finite());
    CHECK(leaky_relu(input, 0.2).all_finite());
}
