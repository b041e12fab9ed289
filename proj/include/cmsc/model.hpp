#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmsc/numerics.hpp"
#include "cmsc/tensor.hpp"

namespace cmsc {

// One conv + batchnorm pair; the activation slope lives in ModelConfig and is
// applied (or not) by the caller.
struct ConvBnUnit {
    Conv2dParams conv;
    BatchNormParams bn;
};

// Two 2-conv residual branches with distinct kernel sizes, coupled by the
// merge-and-run mapping. branch1 uses k1, branch2 uses k2.
struct MscModule {
    std::array<ConvBnUnit, 2> branch1;
    std::array<ConvBnUnit, 2> branch2;
};

// Entry conv (3x3) plus M stacked MSC modules.
struct Subnetwork {
    ConvBnUnit entry;
    std::vector<MscModule> modules;
};

struct ModelConfig {
    int stages = 3;
    int modules_per_stage = 5;
    int channels = 64;
    int k1 = 3;
    int k2 = 5;
    double leaky_slope = 0.2;
    bool use_rfl = true;
    bool use_cascaded_supervision = true;
    bool share_reconstruction = false;

    void validate() const;
};

// Full network: feature extraction, S cascaded subnetworks, per-stage
// reconstruction convs (channels -> 1, no BN, no activation), learned
// ensemble weights.
struct CmscModel {
    ModelConfig config;
    ConvBnUnit feature_extract;
    std::vector<Subnetwork> subnetworks;
    std::vector<Conv2dParams> reconstructions;  // one entry when shared, else S
    std::vector<double> ensemble_weights;       // S entries

    // Zero conv parameters, default BN state, zero ensemble weights.
    static CmscModel build(const ModelConfig& config);

    // Every learnable vector zeroed; the container for gradients and
    // optimizer velocities.
    static CmscModel zeros_like(const ModelConfig& config);

    Conv2dParams& recon(int stage) {
        return reconstructions[config.share_reconstruction ? 0 : stage];
    }
    const Conv2dParams& recon(int stage) const {
        return reconstructions[config.share_reconstruction ? 0 : stage];
    }
};

// ---- caches ----------------------------------------------------------------

struct ConvBnCache {
    Tensor conv_input;
    BatchNormCache bn;
    std::vector<double> new_running_mean;
    std::vector<double> new_running_var;
    Tensor pre_act;  // BN output before activation; empty when not activated
    bool activated = false;
};

struct MscCache {
    ConvBnCache b1u0, b1u1, b2u0, b2u1;
    Tensor pre1, pre2;  // branch sums before the final LeakyReLU
};

struct MscLastCache {
    ConvBnCache b1u0, b1u1, b2u0, b2u1;
    Tensor pre;
};

struct SubnetCache {
    ConvBnCache entry;
    std::vector<MscCache> modules;
    MscLastCache last;
};

struct CmscCache {
    Mode mode = Mode::eval;
    Tensor input;
    ConvBnCache feature;
    std::vector<SubnetCache> stages;
    std::vector<Tensor> features;       // D_0 .. D_S
    std::vector<Tensor> intermediates;  // y_hat_1 .. y_hat_S
};

// ---- forward ----------------------------------------------------------------

struct MscForward {
    Tensor y1, y2;
    MscCache cache;
};

struct MscLastForward {
    Tensor y;
    MscLastCache cache;
};

struct SubnetForward {
    Tensor d_next;
    SubnetCache cache;
};

struct CmscForward {
    Tensor final;
    std::vector<Tensor> intermediates;
    CmscCache cache;
};

// y_i = LeakyReLU(H_i(x_i) + (x1+x2)/2) where H_i = conv->BN->LeakyReLU->conv->BN;
// the branch addition sits between the last BN and the final activation.
MscForward msc_forward(const MscModule& module, const Tensor& x1, const Tensor& x2, Mode mode,
                       double slope);

// y = LeakyReLU(H_1(x1) + H_2(x2) + (x1+x2)/2): the closing module fuses both
// branches by addition.
MscLastForward msc_last_forward(const MscModule& module, const Tensor& x1, const Tensor& x2,
                                Mode mode, double slope);

// Entry conv output is duplicated into both branches, then M-1 MSC modules and
// one closing module; with use_rfl the input is added back (residual-features
// learning).
SubnetForward subnetwork_forward(const Subnetwork& sub, const Tensor& d_prev, Mode mode,
                                 double slope, bool use_rfl);

// Full pipeline: feature extraction, cascade, per-stage reconstruction with
// global residual learning, weighted ensemble of the stage predictions.
CmscForward cmsc_forward(const CmscModel& model, const Tensor& x, Mode mode);

// ---- backward ---------------------------------------------------------------

// Parameter gradients are accumulated into a model-shaped container (BN
// running-stat slots stay zero and are ignored).
std::pair<Tensor, Tensor> msc_backward(const MscModule& module, const MscCache& cache,
                                       const Tensor& grad_y1, const Tensor& grad_y2, double slope,
                                       MscModule& grads);

std::pair<Tensor, Tensor> msc_last_backward(const MscModule& module, const MscLastCache& cache,
                                            const Tensor& grad_y, double slope, MscModule& grads);

Tensor subnetwork_backward(const Subnetwork& sub, const SubnetCache& cache,
                           const Tensor& grad_d_next, double slope, bool use_rfl,
                           Subnetwork& grads);

// Exact adjoint of cmsc_forward for every parameter, ensemble weights
// included. grads_intermediate carries the loss gradient that attaches
// directly to each stage prediction; the ensemble path through `final` is
// added here.
CmscModel cmsc_backward(const CmscModel& model, const CmscCache& cache, const Tensor& grad_final,
                        const std::vector<Tensor>& grads_intermediate);

// Writes the post-batch BN running statistics recorded in the cache back into
// the model.
void commit_bn_stats(CmscModel& model, const CmscCache& cache);

// ---- bookkeeping ------------------------------------------------------------

// Longest conv-layer path from input to output: (M*2 + 1)*S + 2.
int depth(const ModelConfig& config);

enum class ParamKind { conv_weight, conv_bias, bn_gamma, bn_beta, ensemble };

struct ParamRef {
    std::string name;
    ParamKind kind;
    std::vector<double>* values;
};

// Every learnable vector in a fixed traversal order (BN running stats are
// state, not parameters, and are excluded).
std::vector<ParamRef> learnable_params(CmscModel& model);

std::size_t param_count(const CmscModel& model);

// He-gaussian conv weights (variance 2/fan_in), zero biases, identity BN,
// uniform 1/S ensemble.
void init_weights(CmscModel& model, std::uint64_t seed);

// Little-endian binary model file; round-trip is bitwise lossless.
void save_model(const CmscModel& model, const std::string& path);
CmscModel load_model(const std::string& path);

}  // namespace cmsc
