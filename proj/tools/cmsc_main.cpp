#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmsc/gradcheck.hpp"
#include "cmsc/imaging.hpp"
#include "cmsc/metrics.hpp"
#include "cmsc/model.hpp"
#include "cmsc/trainer.hpp"

namespace {

using namespace cmsc;

void print_model_config(const ModelConfig& cfg) {
    std::printf(
        "config: stages=%d modules=%d channels=%d k1=%d k2=%d slope=%g rfl=%d "
        "cascaded_supervision=%d share_reconstruction=%d\n",
        cfg.stages, cfg.modules_per_stage, cfg.channels, cfg.k1, cfg.k2, cfg.leaky_slope,
        cfg.use_rfl ? 1 : 0, cfg.use_cascaded_supervision ? 1 : 0,
        cfg.share_reconstruction ? 1 : 0);
}

std::string scales_str(const std::vector<int>& scales) {
    std::string s;
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(scales[i]);
    }
    return s;
}

int cmd_train(const std::string& data_dir, const std::string& out_path,
              const std::string& log_path, TrainConfig tcfg, const ModelConfig& mcfg) {
    print_model_config(mcfg);
    std::printf(
        "train: data=%s out=%s scales=%s patch=%d batch=%d epochs=%d lr0=%g momentum=%g "
        "weight_decay=%g clip_eta=%g alpha=%g seed=%llu\n",
        data_dir.c_str(), out_path.c_str(), scales_str(tcfg.scales).c_str(), tcfg.patch_size,
        tcfg.batch_size, tcfg.epochs, tcfg.lr0, tcfg.momentum, tcfg.weight_decay, tcfg.clip_eta,
        tcfg.effective_alpha(mcfg.stages, mcfg.use_cascaded_supervision),
        static_cast<unsigned long long>(tcfg.seed));

    CmscModel model = CmscModel::build(mcfg);
    init_weights(model, tcfg.seed);
    const std::vector<TrainLogRecord> log = train(model, data_dir, tcfg);
    save_model(model, out_path);
    if (!log_path.empty()) write_train_log_csv(log, log_path);
    if (!log.empty())
        std::printf("train: %d epochs, first loss %.6g, last loss %.6g\n",
                    static_cast<int>(log.size()), log.front().loss_total, log.back().loss_total);
    std::printf("train: wrote %s\n", out_path.c_str());
    return 0;
}

int cmd_sr(const std::string& model_path, const std::string& input_path,
           const std::string& output_path, int scale, const std::string& dump_dir) {
    const CmscModel model = load_model(model_path);
    print_model_config(model.config);
    std::printf("sr: model=%s input=%s scale=%d output=%s\n", model_path.c_str(),
                input_path.c_str(), scale, output_path.c_str());

    const RgbImage input = load_png(input_path);
    const int out_w = input.r.width * scale;
    const int out_h = input.r.height * scale;

    ImagePlane y_up, cb_up, cr_up;
    if (input.from_grayscale) {
        y_up = bicubic_resize(luminance(input), out_w, out_h, true);
    } else {
        const YcbcrImage ycc = rgb_to_ycbcr(input);
        y_up = bicubic_resize(ycc.y, out_w, out_h, true);
        cb_up = bicubic_resize(ycc.cb, out_w, out_h, true);
        cr_up = bicubic_resize(ycc.cr, out_w, out_h, true);
    }

    Tensor x(1, 1, out_h, out_w);
    std::copy(y_up.values.begin(), y_up.values.end(), x.values().begin());
    const CmscForward fwd = cmsc_forward(model, x, Mode::eval);

    ImagePlane y_sr(out_w, out_h, ColorSpace::Y);
    for (std::size_t i = 0; i < y_sr.values.size(); ++i)
        y_sr.values[i] = std::min(1.0, std::max(0.0, fwd.final.values()[i]));

    if (!dump_dir.empty()) {
        std::filesystem::create_directories(dump_dir);
        for (std::size_t q = 0; q < fwd.intermediates.size(); ++q) {
            ImagePlane stage(out_w, out_h, ColorSpace::Y);
            for (std::size_t i = 0; i < stage.values.size(); ++i)
                stage.values[i] = std::min(1.0, std::max(0.0, fwd.intermediates[q].values()[i]));
            save_png_gray(stage, dump_dir + "/stage_" + std::to_string(q + 1) + ".png");
        }
        std::printf("sr: dumped %d stage images to %s\n",
                    static_cast<int>(fwd.intermediates.size()), dump_dir.c_str());
    }

    if (input.from_grayscale) {
        save_png_gray(y_sr, output_path);
    } else {
        // Color components are carried by plain bicubic interpolation.
        save_png(ycbcr_to_rgb({y_sr, cb_up, cr_up}), output_path);
    }
    std::printf("sr: wrote %s\n", output_path.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& dataset_dir, int scale,
             const std::string& report_path, bool baseline) {
    const CmscModel model = load_model(model_path);
    print_model_config(model.config);
    std::printf("eval: model=%s dataset=%s scale=%d baseline=%d\n", model_path.c_str(),
                dataset_dir.c_str(), scale, baseline ? 1 : 0);

    const MetricReport report = evaluate(model, dataset_dir, scale);
    std::fputs(format_report_table(report, baseline).c_str(), stdout);
    if (!report_path.empty()) write_report_csv(report, report_path, baseline);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    std::printf("gradcheck: seed=%llu seeds_per_check=20\n",
                static_cast<unsigned long long>(seed));
    const auto results = gradcheck::run_suite(seed, 20);
    for (const auto& r : results)
        std::printf("  %-14s max_rel_err %.3e  (tol %.0e, %d seeds)  %s\n", r.name.c_str(),
                    r.max_rel_err, r.tolerance, r.seeds, r.pass ? "PASS" : "FAIL");
    if (!gradcheck::all_pass(results)) {
        std::fprintf(stderr, "gradcheck: FAILED\n");
        return 2;
    }
    std::printf("gradcheck: all checks passed\n");
    return 0;
}

int cmd_inspect(const std::string& model_path) {
    CmscModel model = load_model(model_path);
    print_model_config(model.config);
    std::printf("depth: %d\n", depth(model.config));
    std::printf("parameters: %zu\n", param_count(model));
    std::printf("ensemble weights:");
    for (double w : model.ensemble_weights) std::printf(" %.12g", w);
    std::printf("\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascaded multi-scale cross super-resolution"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a PNG corpus");
    std::string data_dir, out_path, config_path, log_path;
    TrainConfig tcfg;
    ModelConfig mcfg;
    std::vector<int> scales_opt;
    int stages_opt = 0, modules_opt = 0, channels_opt = 0, k1_opt = 0, k2_opt = 0;
    int epochs_opt = 0, patch_opt = 0, batch_opt = 0;
    std::uint64_t seed_opt = 0;
    bool no_rfl = false, no_cs = false, share_rec = false;
    train_cmd->add_option("--data", data_dir, "training image directory")->required();
    train_cmd->add_option("--out", out_path, "output model file")->required();
    train_cmd->add_option("--config", config_path, "key=value config file");
    train_cmd->add_option("--log", log_path, "training log CSV");
    auto* o_scales = train_cmd->add_option("--scales", scales_opt, "scale factors")->delimiter(',');
    auto* o_stages = train_cmd->add_option("--stages", stages_opt, "cascade stages S");
    auto* o_modules = train_cmd->add_option("--modules", modules_opt, "MSC modules per stage M");
    auto* o_channels = train_cmd->add_option("--channels", channels_opt, "feature channels");
    auto* o_k1 = train_cmd->add_option("--k1", k1_opt, "branch-1 kernel size");
    auto* o_k2 = train_cmd->add_option("--k2", k2_opt, "branch-2 kernel size");
    auto* o_epochs = train_cmd->add_option("--epochs", epochs_opt, "training epochs");
    auto* o_patch = train_cmd->add_option("--patch", patch_opt, "training patch size");
    auto* o_batch = train_cmd->add_option("--batch", batch_opt, "mini-batch size");
    auto* o_seed = train_cmd->add_option("--seed", seed_opt, "RNG seed");
    train_cmd->add_flag("--no-rfl", no_rfl, "disable residual-features learning");
    train_cmd->add_flag("--no-cascaded-supervision", no_cs, "supervise only the final output");
    train_cmd->add_flag("--share-reconstruction", share_rec,
                        "share one reconstruction layer across stages");

    // sr
    auto* sr_cmd = app.add_subcommand("sr", "super-resolve a PNG");
    std::string sr_model, sr_input, sr_output, dump_dir;
    int sr_scale = 0;
    sr_cmd->add_option("--model", sr_model, "model file")->required();
    sr_cmd->add_option("--input", sr_input, "input PNG")->required();
    sr_cmd->add_option("--scale", sr_scale, "upscaling factor")->required();
    sr_cmd->add_option("--output", sr_output, "output PNG")->required();
    sr_cmd->add_option("--dump-stages", dump_dir, "directory for per-stage predictions");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate PSNR/SSIM on a dataset");
    std::string eval_model, eval_dataset, report_path;
    int eval_scale = 0;
    bool baseline = false;
    eval_cmd->add_option("--model", eval_model, "model file")->required();
    eval_cmd->add_option("--dataset", eval_dataset, "PNG dataset directory")->required();
    eval_cmd->add_option("--scale", eval_scale, "scale factor")->required();
    eval_cmd->add_option("--report", report_path, "report CSV path");
    eval_cmd->add_flag("--baseline", baseline, "include the bicubic baseline rows");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::uint64_t grad_seed = 0;
    grad_cmd->add_option("--seed", grad_seed, "base seed");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "print model structure");
    std::string inspect_model;
    inspect_cmd->add_option("--model", inspect_model, "model file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train_cmd) {
            if (!config_path.empty()) apply_config_file(config_path, tcfg, mcfg);
            if (o_scales->count()) tcfg.scales = scales_opt;
            if (o_stages->count()) mcfg.stages = stages_opt;
            if (o_modules->count()) mcfg.modules_per_stage = modules_opt;
            if (o_channels->count()) mcfg.channels = channels_opt;
            if (o_k1->count()) mcfg.k1 = k1_opt;
            if (o_k2->count()) mcfg.k2 = k2_opt;
            if (o_epochs->count()) tcfg.epochs = epochs_opt;
            if (o_patch->count()) tcfg.patch_size = patch_opt;
            if (o_batch->count()) tcfg.batch_size = batch_opt;
            if (o_seed->count()) tcfg.seed = seed_opt;
            if (no_rfl) mcfg.use_rfl = false;
            if (no_cs) mcfg.use_cascaded_supervision = false;
            if (share_rec) mcfg.share_reconstruction = true;
            mcfg.validate();
            tcfg.validate();
            return cmd_train(data_dir, out_path, log_path, tcfg, mcfg);
        }
        if (*sr_cmd) return cmd_sr(sr_model, sr_input, sr_output, sr_scale, dump_dir);
        if (*eval_cmd) return cmd_eval(eval_model, eval_dataset, eval_scale, report_path, baseline);
        if (*grad_cmd) return cmd_gradcheck(grad_seed);
        if (*inspect_cmd) return cmd_inspect(inspect_model);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
