#include "cmsc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cmsc/rng.hpp"

namespace cmsc {

void TrainConfig::validate() const {
    if (patch_size < 1) throw std::invalid_argument("TrainConfig: patch_size must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (clip_eta <= 0.0) throw std::invalid_argument("TrainConfig: clip_eta must be > 0");
    if (alpha != 0.0 && !(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("TrainConfig: alpha must lie in (0,1)");
    if (lr_decay_every < 1) throw std::invalid_argument("TrainConfig: lr_decay_every must be >= 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (scales.empty()) throw std::invalid_argument("TrainConfig: at least one scale required");
    for (int s : scales)
        if (s < 2 || s > 4)
            throw std::invalid_argument("TrainConfig: scales must be in {2,3,4}, got " +
                                        std::to_string(s));
}

double TrainConfig::effective_alpha(int stages, bool use_cascaded_supervision) const {
    if (!use_cascaded_supervision) return 1.0;
    if (alpha != 0.0) return alpha;
    return 2.0 / (stages + 2.0);
}

CascadedLoss cascaded_loss(const Tensor& final, const std::vector<Tensor>& intermediates,
                           const Tensor& target, const std::vector<double>& w, double alpha) {
    const int stages = static_cast<int>(intermediates.size());
    if (stages == 0) throw std::invalid_argument("cascaded_loss: no intermediate predictions");
    if (w.size() != intermediates.size())
        throw std::invalid_argument("cascaded_loss: " + std::to_string(w.size()) +
                                    " ensemble weights for " + std::to_string(stages) + " stages");
    require_same_shape(final, target, "cascaded_loss");
    for (const Tensor& t : intermediates) require_same_shape(t, target, "cascaded_loss");
    const double batch = static_cast<double>(target.n());

    CascadedLoss loss;
    loss.grad_final = Tensor(final.shape());
    double se = 0.0;
    for (std::size_t i = 0; i < final.size(); ++i) {
        const double d = final.data()[i] - target.data()[i];
        se += d * d;
        loss.grad_final.data()[i] = alpha / batch * d;
    }
    loss.final_term = se / (2.0 * batch);

    loss.stage_terms.resize(stages);
    loss.grads_intermediate.reserve(stages);
    const double stage_scale = (1.0 - alpha) / (stages * batch);
    for (int q = 0; q < stages; ++q) {
        Tensor g(final.shape());
        double sq = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = intermediates[q].data()[i] - target.data()[i];
            sq += d * d;
            g.data()[i] = stage_scale * d;
        }
        loss.stage_terms[q] = sq / (2.0 * batch);
        loss.grads_intermediate.push_back(std::move(g));
    }

    loss.total = alpha * loss.final_term;
    double stage_sum = 0.0;
    for (double t : loss.stage_terms) stage_sum += t;
    loss.total += (1.0 - alpha) / stages * stage_sum;
    return loss;
}

void clip_values(std::vector<double>& values, double eta) {
    if (eta <= 0.0) throw std::invalid_argument("clip_values: eta must be > 0");
    for (double& v : values) v = std::clamp(v, -eta, eta);
}

void clip_gradients(CmscModel& grads, double eta) {
    for (const ParamRef& p : learnable_params(grads)) clip_values(*p.values, eta);
}

void sgd_step(CmscModel& params, const CmscModel& grads, OptimizerState& state, double lr,
              double momentum, double weight_decay) {
    auto p = learnable_params(params);
    auto g = learnable_params(const_cast<CmscModel&>(grads));
    auto v = learnable_params(state.velocity);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool decay = p[i].kind != ParamKind::bn_beta && p[i].kind != ParamKind::ensemble;
        std::vector<double>& pv = *p[i].values;
        const std::vector<double>& gv = *g[i].values;
        std::vector<double>& vv = *v[i].values;
        for (std::size_t j = 0; j < pv.size(); ++j) {
            const double grad = gv[j] + (decay ? weight_decay * pv[j] : 0.0);
            vv[j] = momentum * vv[j] + grad;
            pv[j] -= lr * vv[j];
        }
    }
}

double lr_at(int epoch, const TrainConfig& config) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    return config.lr0 / std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
}

std::vector<PatchPair> extract_patches(const ImagePlane& lr_plane, const ImagePlane& hr_plane,
                                       int patch_size) {
    if (lr_plane.width != hr_plane.width || lr_plane.height != hr_plane.height)
        throw std::invalid_argument("extract_patches: LR and HR planes differ in size");
    std::vector<PatchPair> out;
    const int ny = lr_plane.height / patch_size;
    const int nx = lr_plane.width / patch_size;
    for (int ty = 0; ty < ny; ++ty)
        for (int tx = 0; tx < nx; ++tx) {
            PatchPair pair{ImagePlane(patch_size, patch_size, lr_plane.space),
                           ImagePlane(patch_size, patch_size, hr_plane.space)};
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x) {
                    pair.lr.at(y, x) = lr_plane.at(ty * patch_size + y, tx * patch_size + x);
                    pair.hr.at(y, x) = hr_plane.at(ty * patch_size + y, tx * patch_size + x);
                }
            out.push_back(std::move(pair));
        }
    return out;
}

std::vector<ImagePlane> augment(const ImagePlane& image) {
    return augment_with(image, true, true, true);
}

std::vector<ImagePlane> augment_with(const ImagePlane& image, bool flips, bool rotations,
                                     bool downscales) {
    std::vector<ImagePlane> out;
    out.push_back(image);
    if (flips) out.push_back(hflip(image));
    if (rotations) {
        const std::size_t base = out.size();
        for (std::size_t i = 0; i < base; ++i) {
            out.push_back(rotate90(out[i]));
            out.push_back(rotate180(out[i]));
            out.push_back(rotate270(out[i]));
        }
    }
    if (downscales) {
        for (double s : {0.7, 0.5}) {
            const int w = static_cast<int>(std::lround(image.width * s));
            const int h = static_cast<int>(std::lround(image.height * s));
            if (w >= 1 && h >= 1) out.push_back(bicubic_resize(image, w, h, true));
        }
    }
    return out;
}

namespace {

std::vector<std::filesystem::path> corpus_pngs(const std::string& dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("train: corpus '" + dir + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("train: no PNG images in '" + dir + "'");
    return files;
}

}  // namespace

std::vector<TrainLogRecord> train(CmscModel& model, const std::string& corpus_dir,
                                  const TrainConfig& config) {
    config.validate();
    const ModelConfig& mc = model.config;
    const double alpha = config.effective_alpha(mc.stages, mc.use_cascaded_supervision);
    const int p = config.patch_size;

    // Build the pooled multi-scale patch set up front; order is fixed by the
    // sorted file list, the augmentation order and the scale order.
    std::vector<PatchPair> pool;
    for (const auto& path : corpus_pngs(corpus_dir)) {
        const ImagePlane y = luminance(load_png(path.string()));
        const auto variants = augment_with(y, config.augment_flips, config.augment_rotations,
                                           config.augment_downscales);
        for (int scale : config.scales) {
            for (const ImagePlane& v : variants) {
                if (v.width < scale || v.height < scale) continue;
                DegradedPair pair = degrade(v, scale);
                if (pair.hr.width < p || pair.hr.height < p) continue;
                auto patches = extract_patches(pair.lr, pair.hr, p);
                std::move(patches.begin(), patches.end(), std::back_inserter(pool));
            }
        }
    }
    if (pool.empty())
        throw std::runtime_error("train: corpus produced no " + std::to_string(p) + "x" +
                                 std::to_string(p) + " patches");

    OptimizerState state(mc);
    Rng rng(Rng::derive(config.seed, 1));
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<TrainLogRecord> log;
    log.reserve(config.epochs);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, config);
        rng.shuffle(order);

        TrainLogRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.loss_stages.assign(mc.stages, 0.0);
        std::size_t batches = 0;

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const int k = static_cast<int>(
                std::min<std::size_t>(config.batch_size, order.size() - start));
            Tensor x(k, 1, p, p), target(k, 1, p, p);
            for (int b = 0; b < k; ++b) {
                const PatchPair& pair = pool[order[start + b]];
                std::copy(pair.lr.values.begin(), pair.lr.values.end(),
                          x.values().begin() + static_cast<std::size_t>(b) * p * p);
                std::copy(pair.hr.values.begin(), pair.hr.values.end(),
                          target.values().begin() + static_cast<std::size_t>(b) * p * p);
            }

            CmscForward fwd = cmsc_forward(model, x, Mode::train);
            CascadedLoss loss = cascaded_loss(fwd.final, fwd.intermediates, target,
                                              model.ensemble_weights, alpha);
            CmscModel grads = cmsc_backward(model, fwd.cache, loss.grad_final,
                                            loss.grads_intermediate);
            clip_gradients(grads, config.clip_eta);
            sgd_step(model, grads, state, lr, config.momentum, config.weight_decay);
            commit_bn_stats(model, fwd.cache);

            rec.loss_total += loss.total;
            rec.loss_final += loss.final_term;
            for (int q = 0; q < mc.stages; ++q) rec.loss_stages[q] += loss.stage_terms[q];
            ++batches;
        }

        rec.loss_total /= static_cast<double>(batches);
        rec.loss_final /= static_cast<double>(batches);
        for (double& v : rec.loss_stages) v /= static_cast<double>(batches);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.push_back(std::move(rec));
    }
    return log;
}

void write_train_log_csv(const std::vector<TrainLogRecord>& records, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("write_train_log_csv: cannot open '" + tmp + "'");
        const std::size_t stages = records.empty() ? 0 : records.front().loss_stages.size();
        out << "epoch,lr,loss_total,loss_final";
        for (std::size_t q = 1; q <= stages; ++q) out << ",loss_stage_" << q;
        out << ",seconds\n";
        char buf[64];
        for (const TrainLogRecord& r : records) {
            out << r.epoch;
            std::snprintf(buf, sizeof(buf), ",%.10g,%.10g,%.10g", r.lr, r.loss_total,
                          r.loss_final);
            out << buf;
            for (double v : r.loss_stages) {
                std::snprintf(buf, sizeof(buf), ",%.10g", v);
                out << buf;
            }
            std::snprintf(buf, sizeof(buf), ",%.3f\n", r.seconds);
            out << buf;
        }
        if (!out) throw std::runtime_error("write_train_log_csv: write failed");
    }
    std::filesystem::rename(tmp, path);
}

void apply_config_file(const std::string& path, TrainConfig& train_cfg, ModelConfig& model_cfg) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " is not key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));

        auto as_int = [&] { return std::stoi(value); };
        auto as_double = [&] { return std::stod(value); };
        auto as_bool = [&] {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw std::runtime_error("config: boolean expected for '" + key + "'");
        };

        if (key == "patch_size") train_cfg.patch_size = as_int();
        else if (key == "batch_size") train_cfg.batch_size = as_int();
        else if (key == "momentum") train_cfg.momentum = as_double();
        else if (key == "weight_decay") train_cfg.weight_decay = as_double();
        else if (key == "lr0") train_cfg.lr0 = as_double();
        else if (key == "lr_decay_every") train_cfg.lr_decay_every = as_int();
        else if (key == "lr_decay_factor") train_cfg.lr_decay_factor = as_double();
        else if (key == "clip_eta") train_cfg.clip_eta = as_double();
        else if (key == "alpha") train_cfg.alpha = (value == "auto") ? 0.0 : as_double();
        else if (key == "epochs") train_cfg.epochs = as_int();
        else if (key == "seed") train_cfg.seed = std::stoull(value);
        else if (key == "augment_flips") train_cfg.augment_flips = as_bool();
        else if (key == "augment_rotations") train_cfg.augment_rotations = as_bool();
        else if (key == "augment_downscales") train_cfg.augment_downscales = as_bool();
        else if (key == "scales") {
            train_cfg.scales.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) train_cfg.scales.push_back(std::stoi(item));
        } else if (key == "stages") model_cfg.stages = as_int();
        else if (key == "modules") model_cfg.modules_per_stage = as_int();
        else if (key == "channels") model_cfg.channels = as_int();
        else if (key == "k1") model_cfg.k1 = as_int();
        else if (key == "k2") model_cfg.k2 = as_int();
        else if (key == "leaky_slope") model_cfg.leaky_slope = as_double();
        else if (key == "use_rfl") model_cfg.use_rfl = as_bool();
        else if (key == "use_cascaded_supervision") model_cfg.use_cascaded_supervision = as_bool();
        else if (key == "share_reconstruction") model_cfg.share_reconstruction = as_bool();
        else throw std::runtime_error("config: unknown key '" + key + "'");
    }
}

}  // namespace cmsc
