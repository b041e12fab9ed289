#include "cmsc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "cmsc/model.hpp"
#include "cmsc/rng.hpp"
#include "cmsc/trainer.hpp"

namespace cmsc::gradcheck {
namespace {

constexpr double kStep = 1e-5;
constexpr double kPrimitiveTol = 1e-6;
constexpr double kModelTol = 1e-5;

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

Tensor random_tensor(Rng& rng, Shape s, double scale = 1.0) {
    Tensor t(s);
    for (double& v : t.values()) v = rng.gaussian(0.0, scale);
    return t;
}

// Central-difference check of d(objective)/d(values[i]) against analytic[i].
double check_vector(std::vector<double>& values, const std::vector<double>& analytic,
                    const std::function<double()>& objective) {
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + kStep;
        const double up = objective();
        values[i] = saved - kStep;
        const double down = objective();
        values[i] = saved;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * kStep)));
    }
    return worst;
}

double check_conv(std::uint64_t seed) {
    Rng rng(seed);
    Tensor input = random_tensor(rng, {2, 3, 6, 6});
    Conv2dParams params(2, 3, 3);
    for (double& v : params.weight.values()) v = rng.gaussian(0.0, 0.5);
    for (double& v : params.bias) v = rng.gaussian(0.0, 0.5);
    const Tensor contraction = random_tensor(rng, {2, 2, 6, 6});

    const auto objective = [&] { return dot(contraction, conv2d(input, params)); };
    const ConvGrads grads = conv2d_backward(input, params, contraction);

    double worst = check_vector(input.values(), grads.grad_input.values(), objective);
    worst = std::max(worst,
                     check_vector(params.weight.values(), grads.grad_weight.values(), objective));
    worst = std::max(worst, check_vector(params.bias, grads.grad_bias, objective));
    return worst;
}

double check_batchnorm(std::uint64_t seed) {
    Rng rng(seed);
    Tensor input = random_tensor(rng, {2, 3, 5, 5});
    BatchNormParams params(3);
    for (double& v : params.gamma) v = rng.gaussian(1.0, 0.3);
    for (double& v : params.beta) v = rng.gaussian(0.0, 0.3);
    const Tensor contraction = random_tensor(rng, {2, 3, 5, 5});

    const auto objective = [&] {
        return dot(contraction, batchnorm_forward(input, params, Mode::train).output);
    };
    const BatchNormResult fwd = batchnorm_forward(input, params, Mode::train);
    const BatchNormGrads grads = batchnorm_backward(fwd.cache, contraction);

    double worst = check_vector(input.values(), grads.grad_input.values(), objective);
    worst = std::max(worst, check_vector(params.gamma, grads.grad_gamma, objective));
    worst = std::max(worst, check_vector(params.beta, grads.grad_beta, objective));
    return worst;
}

double check_leaky_relu(std::uint64_t seed) {
    Rng rng(seed);
    Tensor input = random_tensor(rng, {2, 2, 5, 5});
    // Finite differences are only valid away from the kink at 0.
    for (double& v : input.values())
        if (std::abs(v) < 0.05) v = v < 0.0 ? v - 0.05 : v + 0.05;
    const Tensor contraction = random_tensor(rng, {2, 2, 5, 5});
    const double slope = 0.2;

    const auto objective = [&] { return dot(contraction, leaky_relu(input, slope)); };
    const Tensor grad = leaky_relu_backward(input, slope, contraction);
    return check_vector(input.values(), grad.values(), objective);
}

double check_merge_and_run(std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor(rng, {1, 2, 4, 4});
    Tensor b = random_tensor(rng, {1, 2, 4, 4});
    const Tensor r1 = random_tensor(rng, {1, 2, 4, 4});
    const Tensor r2 = random_tensor(rng, {1, 2, 4, 4});

    const auto objective = [&] {
        const auto [m1, m2] = merge_and_run_map(a, b);
        return dot(r1, m1) + dot(r2, m2);
    };
    const auto [ga, gb] = merge_and_run_backward(r1, r2);
    double worst = check_vector(a.values(), ga.values(), objective);
    return std::max(worst, check_vector(b.values(), gb.values(), objective));
}

double check_loss(std::uint64_t seed) {
    Rng rng(seed);
    const int stages = 2;
    Tensor final = random_tensor(rng, {2, 1, 5, 5});
    std::vector<Tensor> intermediates;
    for (int q = 0; q < stages; ++q) intermediates.push_back(random_tensor(rng, {2, 1, 5, 5}));
    const Tensor target = random_tensor(rng, {2, 1, 5, 5});
    const std::vector<double> w = {0.6, 0.4};
    const double alpha = 0.5;

    const auto objective = [&] {
        return cascaded_loss(final, intermediates, target, w, alpha).total;
    };
    const CascadedLoss loss = cascaded_loss(final, intermediates, target, w, alpha);

    double worst = check_vector(final.values(), loss.grad_final.values(), objective);
    for (int q = 0; q < stages; ++q)
        worst = std::max(worst, check_vector(intermediates[q].values(),
                                             loss.grads_intermediate[q].values(), objective));
    return worst;
}

// Smallest distance of any pre-activation from the LeakyReLU kink.
double activation_margin(const CmscCache& cache) {
    double margin = 1e9;
    const auto scan = [&margin](const Tensor& t) {
        for (double v : t.values()) margin = std::min(margin, std::abs(v));
    };
    scan(cache.feature.pre_act);
    for (const SubnetCache& sc : cache.stages) {
        scan(sc.entry.pre_act);
        for (const MscCache& m : sc.modules) {
            scan(m.b1u0.pre_act);
            scan(m.b2u0.pre_act);
            scan(m.pre1);
            scan(m.pre2);
        }
        scan(sc.last.b1u0.pre_act);
        scan(sc.last.b2u0.pre_act);
        scan(sc.last.pre);
    }
    return margin;
}

double check_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.stages = 2;
    cfg.modules_per_stage = 2;
    cfg.channels = 4;

    CmscModel model = CmscModel::build(cfg);
    Tensor input(1, 1, 12, 12);
    Tensor target(1, 1, 12, 12);
    const double alpha = 0.5;

    // Seeds whose pre-activations land within 1e-4 of the kink are reseeded;
    // the objective is not differentiable there.
    std::uint64_t attempt = seed;
    for (;;) {
        init_weights(model, attempt);
        Rng rng(Rng::derive(attempt, 7));
        for (double& v : input.values()) v = rng.uniform();
        for (double& v : target.values()) v = rng.uniform();
        const CmscForward probe = cmsc_forward(model, input, Mode::train);
        if (activation_margin(probe.cache) > 1e-4) break;
        attempt = Rng::derive(attempt, 99);
    }

    const auto objective = [&] {
        const CmscForward fwd = cmsc_forward(model, input, Mode::train);
        return cascaded_loss(fwd.final, fwd.intermediates, target, model.ensemble_weights, alpha)
            .total;
    };

    const CmscForward fwd = cmsc_forward(model, input, Mode::train);
    const CascadedLoss loss =
        cascaded_loss(fwd.final, fwd.intermediates, target, model.ensemble_weights, alpha);
    CmscModel analytic = cmsc_backward(model, fwd.cache, loss.grad_final, loss.grads_intermediate);

    auto params = learnable_params(model);
    auto grads = learnable_params(analytic);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
        worst = std::max(worst, check_vector(*params[i].values, *grads[i].values, objective));
    return worst;
}

CheckResult run_many(const std::string& name, double tol, std::uint64_t base_seed, int num_seeds,
                     double (*check)(std::uint64_t)) {
    std::vector<double> errs(num_seeds, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < num_seeds; ++s) errs[s] = check(Rng::derive(base_seed, s));
    CheckResult res{name, 0.0, tol, num_seeds, false};
    for (double e : errs) res.max_rel_err = std::max(res.max_rel_err, e);
    res.pass = res.max_rel_err <= tol;
    return res;
}

}  // namespace

std::vector<CheckResult> run_suite(std::uint64_t base_seed, int num_seeds) {
    std::vector<CheckResult> results;
    results.push_back(run_many("conv2d", kPrimitiveTol, base_seed, num_seeds, check_conv));
    results.push_back(run_many("batchnorm", kPrimitiveTol, base_seed, num_seeds, check_batchnorm));
    results.push_back(
        run_many("leaky_relu", kPrimitiveTol, base_seed, num_seeds, check_leaky_relu));
    results.push_back(
        run_many("merge_and_run", kPrimitiveTol, base_seed, num_seeds, check_merge_and_run));
    results.push_back(run_many("cascaded_loss", kPrimitiveTol, base_seed, num_seeds, check_loss));
    results.push_back(run_many("full_model", kModelTol, base_seed, num_seeds, check_model));
    return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const CheckResult& r : results)
        if (!r.pass) return false;
    return true;
}

}  // namespace cmsc::gradcheck
