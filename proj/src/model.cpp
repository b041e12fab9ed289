#include "cmsc/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cmsc/rng.hpp"

namespace cmsc {
namespace {

// conv -> BN (-> LeakyReLU when activate is set).
Tensor conv_bn_forward(const ConvBnUnit& unit, const Tensor& x, Mode mode, double slope,
                       bool activate, ConvBnCache& cache) {
    cache.conv_input = x;
    cache.activated = activate;
    Tensor s = conv2d(x, unit.conv);
    BatchNormResult bn = batchnorm_forward(s, unit.bn, mode);
    cache.bn = std::move(bn.cache);
    cache.new_running_mean = std::move(bn.new_running_mean);
    cache.new_running_var = std::move(bn.new_running_var);
    if (!activate) return std::move(bn.output);
    cache.pre_act = std::move(bn.output);
    return leaky_relu(cache.pre_act, slope);
}

// Accumulates parameter gradients into `grads` and returns the gradient with
// respect to the unit input.
Tensor conv_bn_backward(const ConvBnUnit& unit, const ConvBnCache& cache, const Tensor& grad_out,
                        double slope, ConvBnUnit& grads) {
    Tensor g = cache.activated ? leaky_relu_backward(cache.pre_act, slope, grad_out) : grad_out;
    BatchNormGrads bg = batchnorm_backward(cache.bn, g);
    for (std::size_t i = 0; i < bg.grad_gamma.size(); ++i) {
        grads.bn.gamma[i] += bg.grad_gamma[i];
        grads.bn.beta[i] += bg.grad_beta[i];
    }
    ConvGrads cg = conv2d_backward(cache.conv_input, unit.conv, bg.grad_input);
    add_inplace(grads.conv.weight, cg.grad_weight);
    for (std::size_t i = 0; i < cg.grad_bias.size(); ++i) grads.conv.bias[i] += cg.grad_bias[i];
    return std::move(cg.grad_input);
}

// Residual-branch transition H = conv->BN->LeakyReLU->conv->BN.
Tensor branch_forward(const std::array<ConvBnUnit, 2>& branch, const Tensor& x, Mode mode,
                      double slope, ConvBnCache& c0, ConvBnCache& c1) {
    Tensor t = conv_bn_forward(branch[0], x, mode, slope, true, c0);
    return conv_bn_forward(branch[1], t, mode, slope, false, c1);
}

Tensor branch_backward(const std::array<ConvBnUnit, 2>& branch, const ConvBnCache& c0,
                       const ConvBnCache& c1, const Tensor& grad_out, double slope,
                       std::array<ConvBnUnit, 2>& grads) {
    Tensor g = conv_bn_backward(branch[1], c1, grad_out, slope, grads[1]);
    return conv_bn_backward(branch[0], c0, g, slope, grads[0]);
}

void require_pair(const Tensor& x1, const Tensor& x2, const MscModule& module, const char* op) {
    require_same_shape(x1, x2, op);
    const int width = module.branch1[0].conv.in_c();
    if (x1.c() != width)
        throw std::invalid_argument(std::string(op) + ": input " + x1.shape().str() +
                                    " does not match module width " + std::to_string(width));
}

}  // namespace

void ModelConfig::validate() const {
    if (stages < 1) throw std::invalid_argument("ModelConfig: stages must be >= 1");
    if (modules_per_stage < 1)
        throw std::invalid_argument("ModelConfig: modules_per_stage must be >= 1");
    if (channels < 1) throw std::invalid_argument("ModelConfig: channels must be >= 1");
    if (k1 % 2 == 0 || k2 % 2 == 0)
        throw std::invalid_argument("ModelConfig: kernel sizes must be odd");
    if (k1 > k2) throw std::invalid_argument("ModelConfig: expects k1 <= k2");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
        throw std::invalid_argument("ModelConfig: leaky_slope must be in (0,1)");
}

CmscModel CmscModel::build(const ModelConfig& config) {
    config.validate();
    CmscModel m;
    m.config = config;
    const int c = config.channels;
    m.feature_extract = {Conv2dParams(c, 1, 3), BatchNormParams(c)};
    m.subnetworks.resize(config.stages);
    for (Subnetwork& sub : m.subnetworks) {
        sub.entry = {Conv2dParams(c, c, 3), BatchNormParams(c)};
        sub.modules.resize(config.modules_per_stage);
        for (MscModule& mod : sub.modules) {
            for (ConvBnUnit& u : mod.branch1) u = {Conv2dParams(c, c, config.k1), BatchNormParams(c)};
            for (ConvBnUnit& u : mod.branch2) u = {Conv2dParams(c, c, config.k2), BatchNormParams(c)};
        }
    }
    m.reconstructions.assign(config.share_reconstruction ? 1 : config.stages,
                             Conv2dParams(1, c, 3));
    m.ensemble_weights.assign(config.stages, 0.0);
    return m;
}

CmscModel CmscModel::zeros_like(const ModelConfig& config) {
    CmscModel m = build(config);
    for (const ParamRef& p : learnable_params(m)) p.values->assign(p.values->size(), 0.0);
    return m;
}

MscForward msc_forward(const MscModule& module, const Tensor& x1, const Tensor& x2, Mode mode,
                       double slope) {
    require_pair(x1, x2, module, "msc_forward");
    MscForward res;
    Tensor h1 = branch_forward(module.branch1, x1, mode, slope, res.cache.b1u0, res.cache.b1u1);
    Tensor h2 = branch_forward(module.branch2, x2, mode, slope, res.cache.b2u0, res.cache.b2u1);
    auto [m, m2] = merge_and_run_map(x1, x2);
    res.cache.pre1 = add(h1, m);
    res.cache.pre2 = add(h2, m2);
    res.y1 = leaky_relu(res.cache.pre1, slope);
    res.y2 = leaky_relu(res.cache.pre2, slope);
    return res;
}

std::pair<Tensor, Tensor> msc_backward(const MscModule& module, const MscCache& cache,
                                       const Tensor& grad_y1, const Tensor& grad_y2, double slope,
                                       MscModule& grads) {
    Tensor g1 = leaky_relu_backward(cache.pre1, slope, grad_y1);
    Tensor g2 = leaky_relu_backward(cache.pre2, slope, grad_y2);
    auto [gm1, gm2] = merge_and_run_backward(g1, g2);
    Tensor gx1 = branch_backward(module.branch1, cache.b1u0, cache.b1u1, g1, slope, grads.branch1);
    Tensor gx2 = branch_backward(module.branch2, cache.b2u0, cache.b2u1, g2, slope, grads.branch2);
    add_inplace(gx1, gm1);
    add_inplace(gx2, gm2);
    return {std::move(gx1), std::move(gx2)};
}

MscLastForward msc_last_forward(const MscModule& module, const Tensor& x1, const Tensor& x2,
                                Mode mode, double slope) {
    require_pair(x1, x2, module, "msc_last_forward");
    MscLastForward res;
    Tensor h1 = branch_forward(module.branch1, x1, mode, slope, res.cache.b1u0, res.cache.b1u1);
    Tensor h2 = branch_forward(module.branch2, x2, mode, slope, res.cache.b2u0, res.cache.b2u1);
    auto [m, m2] = merge_and_run_map(x1, x2);
    res.cache.pre = add(add(h1, h2), m);
    res.y = leaky_relu(res.cache.pre, slope);
    return res;
}

std::pair<Tensor, Tensor> msc_last_backward(const MscModule& module, const MscLastCache& cache,
                                            const Tensor& grad_y, double slope, MscModule& grads) {
    Tensor g = leaky_relu_backward(cache.pre, slope, grad_y);
    Tensor gx1 = branch_backward(module.branch1, cache.b1u0, cache.b1u1, g, slope, grads.branch1);
    Tensor gx2 = branch_backward(module.branch2, cache.b2u0, cache.b2u1, g, slope, grads.branch2);
    // The average (x1+x2)/2 feeds the fused sum once.
    axpy_inplace(gx1, 0.5, g);
    axpy_inplace(gx2, 0.5, g);
    return {std::move(gx1), std::move(gx2)};
}

SubnetForward subnetwork_forward(const Subnetwork& sub, const Tensor& d_prev, Mode mode,
                                 double slope, bool use_rfl) {
    if (d_prev.c() != sub.entry.conv.in_c())
        throw std::invalid_argument("subnetwork_forward: input " + d_prev.shape().str() +
                                    " does not match entry width " +
                                    std::to_string(sub.entry.conv.in_c()));
    SubnetForward res;
    res.cache.modules.resize(sub.modules.size() - 1);
    Tensor t = conv_bn_forward(sub.entry, d_prev, mode, slope, true, res.cache.entry);
    // Both branch inputs start as the same entry output.
    Tensor x1 = t, x2 = std::move(t);
    for (std::size_t i = 0; i + 1 < sub.modules.size(); ++i) {
        MscForward step = msc_forward(sub.modules[i], x1, x2, mode, slope);
        res.cache.modules[i] = std::move(step.cache);
        x1 = std::move(step.y1);
        x2 = std::move(step.y2);
    }
    MscLastForward last = msc_last_forward(sub.modules.back(), x1, x2, mode, slope);
    res.cache.last = std::move(last.cache);
    res.d_next = std::move(last.y);
    if (use_rfl) add_inplace(res.d_next, d_prev);
    return res;
}

Tensor subnetwork_backward(const Subnetwork& sub, const SubnetCache& cache,
                           const Tensor& grad_d_next, double slope, bool use_rfl,
                           Subnetwork& grads) {
    auto [gx1, gx2] = msc_last_backward(sub.modules.back(), cache.last, grad_d_next, slope,
                                        grads.modules.back());
    for (std::size_t i = sub.modules.size() - 1; i-- > 0;) {
        auto [a, b] = msc_backward(sub.modules[i], cache.modules[i], gx1, gx2, slope,
                                   grads.modules[i]);
        gx1 = std::move(a);
        gx2 = std::move(b);
    }
    add_inplace(gx1, gx2);
    Tensor grad_d_prev = conv_bn_backward(sub.entry, cache.entry, gx1, slope, grads.entry);
    if (use_rfl) add_inplace(grad_d_prev, grad_d_next);
    return grad_d_prev;
}

CmscForward cmsc_forward(const CmscModel& model, const Tensor& x, Mode mode) {
    if (x.c() != 1)
        throw std::invalid_argument("cmsc_forward: expected a 1-channel input, got " +
                                    x.shape().str());
    const ModelConfig& cfg = model.config;
    CmscForward res;
    res.cache.mode = mode;
    res.cache.input = x;
    res.cache.stages.resize(cfg.stages);
    res.cache.features.reserve(cfg.stages + 1);

    Tensor d = conv_bn_forward(model.feature_extract, x, mode, cfg.leaky_slope, true,
                               res.cache.feature);
    res.cache.features.push_back(d);
    for (int q = 0; q < cfg.stages; ++q) {
        SubnetForward sf = subnetwork_forward(model.subnetworks[q], res.cache.features.back(),
                                              mode, cfg.leaky_slope, cfg.use_rfl);
        res.cache.stages[q] = std::move(sf.cache);
        res.cache.features.push_back(std::move(sf.d_next));
    }

    res.intermediates.reserve(cfg.stages);
    for (int q = 0; q < cfg.stages; ++q) {
        Tensor y = conv2d(res.cache.features[q + 1], model.recon(q));
        add_inplace(y, x);  // global residual learning
        res.intermediates.push_back(std::move(y));
    }
    res.cache.intermediates = res.intermediates;

    res.final = Tensor(x.shape());
    for (int q = 0; q < cfg.stages; ++q)
        axpy_inplace(res.final, model.ensemble_weights[q], res.intermediates[q]);
    return res;
}

CmscModel cmsc_backward(const CmscModel& model, const CmscCache& cache, const Tensor& grad_final,
                        const std::vector<Tensor>& grads_intermediate) {
    const ModelConfig& cfg = model.config;
    if (static_cast<int>(grads_intermediate.size()) != cfg.stages)
        throw std::invalid_argument("cmsc_backward: expected " + std::to_string(cfg.stages) +
                                    " intermediate gradients, got " +
                                    std::to_string(grads_intermediate.size()));
    require_same_shape(grad_final, cache.input, "cmsc_backward");

    CmscModel grads = CmscModel::zeros_like(cfg);
    std::vector<Tensor> grad_d(cfg.stages + 1);  // gradients w.r.t. D_0 .. D_S
    for (int q = 0; q < cfg.stages; ++q) {
        grads.ensemble_weights[q] = dot(grad_final, cache.intermediates[q]);
        Tensor g_y = scaled(grad_final, model.ensemble_weights[q]);
        require_same_shape(grads_intermediate[q], g_y, "cmsc_backward");
        add_inplace(g_y, grads_intermediate[q]);
        ConvGrads rg = conv2d_backward(cache.features[q + 1], model.recon(q), g_y);
        add_inplace(grads.recon(q).weight, rg.grad_weight);
        for (std::size_t i = 0; i < rg.grad_bias.size(); ++i)
            grads.recon(q).bias[i] += rg.grad_bias[i];
        grad_d[q + 1] = std::move(rg.grad_input);
    }

    for (int q = cfg.stages; q-- > 0;) {
        Tensor g_prev = subnetwork_backward(model.subnetworks[q], cache.stages[q], grad_d[q + 1],
                                            cfg.leaky_slope, cfg.use_rfl, grads.subnetworks[q]);
        if (grad_d[q].empty())
            grad_d[q] = std::move(g_prev);
        else
            add_inplace(grad_d[q], g_prev);
    }
    conv_bn_backward(model.feature_extract, cache.feature, grad_d[0], cfg.leaky_slope,
                     grads.feature_extract);
    return grads;
}

namespace {

void commit_unit(ConvBnUnit& unit, const ConvBnCache& cache) {
    unit.bn.running_mean = cache.new_running_mean;
    unit.bn.running_var = cache.new_running_var;
}

}  // namespace

void commit_bn_stats(CmscModel& model, const CmscCache& cache) {
    if (cache.mode != Mode::train) return;
    commit_unit(model.feature_extract, cache.feature);
    for (int q = 0; q < model.config.stages; ++q) {
        Subnetwork& sub = model.subnetworks[q];
        const SubnetCache& sc = cache.stages[q];
        commit_unit(sub.entry, sc.entry);
        for (std::size_t i = 0; i + 1 < sub.modules.size(); ++i) {
            commit_unit(sub.modules[i].branch1[0], sc.modules[i].b1u0);
            commit_unit(sub.modules[i].branch1[1], sc.modules[i].b1u1);
            commit_unit(sub.modules[i].branch2[0], sc.modules[i].b2u0);
            commit_unit(sub.modules[i].branch2[1], sc.modules[i].b2u1);
        }
        MscModule& lastm = sub.modules.back();
        commit_unit(lastm.branch1[0], sc.last.b1u0);
        commit_unit(lastm.branch1[1], sc.last.b1u1);
        commit_unit(lastm.branch2[0], sc.last.b2u0);
        commit_unit(lastm.branch2[1], sc.last.b2u1);
    }
}

int depth(const ModelConfig& config) {
    return (config.modules_per_stage * 2 + 1) * config.stages + 2;
}

std::vector<ParamRef> learnable_params(CmscModel& model) {
    std::vector<ParamRef> out;
    auto add_conv = [&out](const std::string& prefix, Conv2dParams& conv) {
        out.push_back({prefix + ".weight", ParamKind::conv_weight, &conv.weight.values()});
        out.push_back({prefix + ".bias", ParamKind::conv_bias, &conv.bias});
    };
    auto add_unit = [&](const std::string& prefix, ConvBnUnit& unit) {
        add_conv(prefix + ".conv", unit.conv);
        out.push_back({prefix + ".bn.gamma", ParamKind::bn_gamma, &unit.bn.gamma});
        out.push_back({prefix + ".bn.beta", ParamKind::bn_beta, &unit.bn.beta});
    };
    add_unit("feature", model.feature_extract);
    for (std::size_t q = 0; q < model.subnetworks.size(); ++q) {
        const std::string sp = "stage" + std::to_string(q);
        add_unit(sp + ".entry", model.subnetworks[q].entry);
        for (std::size_t m = 0; m < model.subnetworks[q].modules.size(); ++m) {
            MscModule& mod = model.subnetworks[q].modules[m];
            const std::string mp = sp + ".msc" + std::to_string(m);
            add_unit(mp + ".b1u0", mod.branch1[0]);
            add_unit(mp + ".b1u1", mod.branch1[1]);
            add_unit(mp + ".b2u0", mod.branch2[0]);
            add_unit(mp + ".b2u1", mod.branch2[1]);
        }
    }
    for (std::size_t r = 0; r < model.reconstructions.size(); ++r)
        add_conv("recon" + std::to_string(r), model.reconstructions[r]);
    out.push_back({"ensemble.w", ParamKind::ensemble, &model.ensemble_weights});
    return out;
}

std::size_t param_count(const CmscModel& model) {
    std::size_t total = 0;
    for (const ParamRef& p : learnable_params(const_cast<CmscModel&>(model)))
        total += p.values->size();
    return total;
}

void init_weights(CmscModel& model, std::uint64_t seed) {
    Rng rng(seed);
    auto he_fill = [&rng](Conv2dParams& conv) {
        const double fan_in = static_cast<double>(conv.in_c()) * conv.k() * conv.k();
        const double stddev = std::sqrt(2.0 / fan_in);
        for (double& v : conv.weight.values()) v = rng.gaussian(0.0, stddev);
        for (double& v : conv.bias) v = 0.0;
    };
    auto reset_bn = [](BatchNormParams& bn) {
        bn.gamma.assign(bn.gamma.size(), 1.0);
        bn.beta.assign(bn.beta.size(), 0.0);
        bn.running_mean.assign(bn.running_mean.size(), 0.0);
        bn.running_var.assign(bn.running_var.size(), 1.0);
    };
    he_fill(model.feature_extract.conv);
    reset_bn(model.feature_extract.bn);
    for (Subnetwork& sub : model.subnetworks) {
        he_fill(sub.entry.conv);
        reset_bn(sub.entry.bn);
        for (MscModule& mod : sub.modules) {
            for (ConvBnUnit& u : mod.branch1) {
                he_fill(u.conv);
                reset_bn(u.bn);
            }
            for (ConvBnUnit& u : mod.branch2) {
                he_fill(u.conv);
                reset_bn(u.bn);
            }
        }
    }
    for (Conv2dParams& r : model.reconstructions) he_fill(r);
    model.ensemble_weights.assign(model.ensemble_weights.size(),
                                  1.0 / static_cast<double>(model.config.stages));
}

}  // namespace cmsc
