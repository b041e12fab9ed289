#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmsc/imaging.hpp"
#include "cmsc/model.hpp"

namespace cmsc {

struct TrainConfig {
    int patch_size = 41;
    int batch_size = 32;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lr0 = 0.1;
    int lr_decay_every = 10;
    double lr_decay_factor = 10.0;
    double clip_eta = 0.4;
    double alpha = 0.0;  // 0 selects the default 2/(S+2)
    std::vector<int> scales = {2, 3, 4};
    int epochs = 50;
    std::uint64_t seed = 0;
    bool augment_flips = true;
    bool augment_rotations = true;
    bool augment_downscales = true;

    void validate() const;
    // 2/(S+2) unless set explicitly; forced to 1 when cascaded supervision is
    // disabled, which removes the per-stage terms.
    double effective_alpha(int stages, bool use_cascaded_supervision) const;
};

// Velocity buffers, one per learnable vector, zero-initialized.
struct OptimizerState {
    CmscModel velocity;
    explicit OptimizerState(const ModelConfig& config)
        : velocity(CmscModel::zeros_like(config)) {}
};

struct TrainLogRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_final = 0.0;
    std::vector<double> loss_stages;
    double seconds = 0.0;
};

struct CascadedLoss {
    double total = 0.0;
    double final_term = 0.0;               // (1/2K) sum_k |y - final|^2
    std::vector<double> stage_terms;       // (1/2K) sum_k |y - y_q|^2
    Tensor grad_final;                     // alpha/K * (final - y)
    std::vector<Tensor> grads_intermediate;  // (1-alpha)/(S K) * (y_q - y)
};

// total = alpha * final_term + (1-alpha)/S * sum_q stage_terms[q].
// The ensemble-weight gradient flows through the model backward, not here.
CascadedLoss cascaded_loss(const Tensor& final, const std::vector<Tensor>& intermediates,
                           const Tensor& target, const std::vector<double>& w, double alpha);

// Clamps every scalar to [-eta, eta].
void clip_values(std::vector<double>& values, double eta);
void clip_gradients(CmscModel& grads, double eta);

// Classic momentum: g' = g + wd*p; v <- momentum*v + g'; p <- p - lr*v.
// Weight decay skips BN beta and the ensemble weights.
void sgd_step(CmscModel& params, const CmscModel& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay);

double lr_at(int epoch, const TrainConfig& config);

struct PatchPair {
    ImagePlane lr;
    ImagePlane hr;
};

// Non-overlapping co-located tiles; partial edge tiles are discarded.
std::vector<PatchPair> extract_patches(const ImagePlane& lr_plane, const ImagePlane& hr_plane,
                                       int patch_size);

// Identity, horizontal flip, rotations {90,180,270} of both, plus bicubic
// downscales of the original by 0.7 and 0.5.
std::vector<ImagePlane> augment(const ImagePlane& image);
std::vector<ImagePlane> augment_with(const ImagePlane& image, bool flips, bool rotations,
                                     bool downscales);

// Multi-scale training: LR/HR pairs for every configured scale are pooled into
// one shuffled dataset; mini-batch SGD with the cascaded-supervision loss,
// per-scalar clipping and the stepped learning-rate schedule. Deterministic
// under a fixed seed.
std::vector<TrainLogRecord> train(CmscModel& model, const std::string& corpus_dir,
                                  const TrainConfig& config);

void write_train_log_csv(const std::vector<TrainLogRecord>& records, const std::string& path);

// Plain-text key=value configuration; unknown keys are errors. Recognizes
// both trainer keys and model keys (stages, modules, channels, k1, k2, ...).
void apply_config_file(const std::string& path, TrainConfig& train_cfg, ModelConfig& model_cfg);

}  // namespace cmsc
