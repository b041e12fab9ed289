#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "cmsc/imaging.hpp"
#include "cmsc/model.hpp"
#include "support/synth.hpp"

using namespace cmsc;

namespace {

std::string cli_path() {
    const char* p = std::getenv("CMSC_CLI");
    REQUIRE_MESSAGE(p != nullptr, "CMSC_CLI must point at the cmsc binary");
    return p;
}

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const std::string out_file =
        (std::filesystem::temp_directory_path() / "cmsc_cli_out.txt").string();
    const std::string cmd = cli_path() + " " + args + " >" + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult res;
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    res.output = std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return res;
}

std::string tmp_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run_cli("").exit_code == 1);
    CHECK(run_cli("--bogus").exit_code == 1);
    CHECK(run_cli("train --data x").exit_code == 1);       // missing --out
    CHECK(run_cli("eval --definitely-not-a-flag").exit_code == 1);
    CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("runtime failures exit with 2") {
    const std::string dir = tmp_dir("cmsc_cli_rt");
    CHECK(run_cli("sr --model " + dir + "/missing.bin --input " + dir +
                  "/missing.png --scale 2 --output " + dir + "/out.png")
              .exit_code == 2);
    CHECK(run_cli("inspect --model " + dir + "/missing.bin").exit_code == 2);
    CHECK(run_cli("eval --model " + dir + "/missing.bin --dataset " + dir + " --scale 2")
              .exit_code == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("train is reproducible and honors config-file/flag precedence") {
    const std::string dir = tmp_dir("cmsc_cli_train");
    testsupport::write_synth_corpus(dir + "/corpus", 11, 1, 36, 36);

    const std::string base = " train --data " + dir + "/corpus --stages 1 --modules 1" +
                             " --channels 2 --patch 12 --batch 4 --scales 2 --epochs 2" +
                             " --seed 9";
    const RunResult r1 = run_cli(base.substr(1) + " --out " + dir + "/m1.bin");
    REQUIRE_MESSAGE(r1.exit_code == 0, r1.output);
    CHECK(r1.output.find("seed=9") != std::string::npos);
    CHECK(r1.output.find("stages=1") != std::string::npos);

    const RunResult r2 = run_cli(base.substr(1) + " --out " + dir + "/m2.bin");
    REQUIRE(r2.exit_code == 0);
    CHECK(file_bytes(dir + "/m1.bin") == file_bytes(dir + "/m2.bin"));

    SUBCASE("flags override the config file") {
        std::ofstream cfg(dir + "/cfg.txt");
        cfg << "epochs=2\nstages=1\nmodules=1\nchannels=2\npatch_size=12\nbatch_size=4\n"
            << "scales=2\nseed=9\n";
        cfg.close();
        // --epochs 0 wins over epochs=2, so training never runs and the file
        // holds the raw initialization.
        const RunResult r3 = run_cli("train --data " + dir + "/corpus --config " + dir +
                                     "/cfg.txt --epochs 0 --out " + dir + "/m3.bin");
        REQUIRE_MESSAGE(r3.exit_code == 0, r3.output);
        ModelConfig mc;
        mc.stages = 1;
        mc.modules_per_stage = 1;
        mc.channels = 2;
        CmscModel expect = CmscModel::build(mc);
        init_weights(expect, 9);
        save_model(expect, dir + "/expect.bin");
        CHECK(file_bytes(dir + "/m3.bin") == file_bytes(dir + "/expect.bin"));
    }

    SUBCASE("unknown config key is a runtime failure") {
        std::ofstream cfg(dir + "/bad.txt");
        cfg << "patch_sz=12\n";
        cfg.close();
        const RunResult r = run_cli("train --data " + dir + "/corpus --config " + dir +
                                    "/bad.txt --out " + dir + "/m4.bin");
        CHECK(r.exit_code == 2);
    }

    SUBCASE("training log CSV is written") {
        const RunResult r = run_cli(base.substr(1) + " --out " + dir + "/m5.bin --log " + dir +
                                    "/log.csv");
        REQUIRE(r.exit_code == 0);
        std::ifstream log(dir + "/log.csv");
        std::string header;
        std::getline(log, header);
        CHECK(header.rfind("epoch,lr,loss_total,loss_final", 0) == 0);
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("sr with a passthrough model is byte-identical to bicubic upscaling") {
    const std::string dir = tmp_dir("cmsc_cli_sr");

    ModelConfig mc;
    mc.stages = 2;
    mc.modules_per_stage = 1;
    mc.channels = 2;
    CmscModel zero = CmscModel::build(mc);
    zero.ensemble_weights = {0.5, 0.5};
    save_model(zero, dir + "/zero.bin");

    SUBCASE("grayscale input stays grayscale") {
        const ImagePlane img = testsupport::synth_plane(3, 20, 14);
        save_png_gray(img, dir + "/in.png");

        const RunResult r = run_cli("sr --model " + dir + "/zero.bin --input " + dir +
                                    "/in.png --scale 2 --output " + dir + "/out.png");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);

        const RgbImage loaded = load_png(dir + "/in.png");
        save_png_gray(bicubic_resize(luminance(loaded), 40, 28, true), dir + "/ref.png");
        CHECK(file_bytes(dir + "/out.png") == file_bytes(dir + "/ref.png"));
        CHECK(load_png(dir + "/out.png").from_grayscale);
    }

    SUBCASE("color input reattaches bicubic chroma") {
        RgbImage color;
        color.r = testsupport::synth_plane(4, 16, 12);
        color.g = testsupport::synth_plane(5, 16, 12);
        color.b = testsupport::synth_plane(6, 16, 12);
        save_png(color, dir + "/inc.png");

        const RunResult r = run_cli("sr --model " + dir + "/zero.bin --input " + dir +
                                    "/inc.png --scale 2 --output " + dir + "/outc.png");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);

        const YcbcrImage ycc = rgb_to_ycbcr(load_png(dir + "/inc.png"));
        YcbcrImage up{bicubic_resize(ycc.y, 32, 24, true), bicubic_resize(ycc.cb, 32, 24, true),
                      bicubic_resize(ycc.cr, 32, 24, true)};
        save_png(ycbcr_to_rgb(up), dir + "/refc.png");
        CHECK(file_bytes(dir + "/outc.png") == file_bytes(dir + "/refc.png"));
    }

    SUBCASE("dump-stages writes one image per stage") {
        const ImagePlane img = testsupport::synth_plane(7, 18, 18);
        save_png_gray(img, dir + "/ds.png");
        const RunResult r = run_cli("sr --model " + dir + "/zero.bin --input " + dir +
                                    "/ds.png --scale 2 --output " + dir + "/dsout.png" +
                                    " --dump-stages " + dir + "/stages");
        REQUIRE_MESSAGE(r.exit_code == 0, r.output);
        int count = 0;
        for (const auto& e : std::filesystem::directory_iterator(dir + "/stages")) {
            (void)e;
            ++count;
        }
        CHECK(count == 2);
        CHECK(std::filesystem::exists(dir + "/stages/stage_1.png"));
        CHECK(std::filesystem::exists(dir + "/stages/stage_2.png"));
    }

    std::filesystem::remove_all(dir);
}

TEST_CASE("eval emits identical CSV bytes across invocations") {
    const std::string dir = tmp_dir("cmsc_cli_eval");
    testsupport::write_synth_corpus(dir + "/ds", 21, 2, 36, 30);

    ModelConfig mc;
    mc.stages = 1;
    mc.modules_per_stage = 1;
    mc.channels = 2;
    CmscModel zero = CmscModel::build(mc);
    zero.ensemble_weights = {1.0};
    save_model(zero, dir + "/zero.bin");

    const std::string invocation = "eval --model " + dir + "/zero.bin --dataset " + dir +
                                   "/ds --scale 2 --baseline --report ";
    const RunResult r1 = run_cli(invocation + dir + "/a.csv");
    REQUIRE_MESSAGE(r1.exit_code == 0, r1.output);
    const RunResult r2 = run_cli(invocation + dir + "/b.csv");
    REQUIRE(r2.exit_code == 0);
    CHECK(file_bytes(dir + "/a.csv") == file_bytes(dir + "/b.csv"));
    CHECK(r1.output.find("bicubic") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("inspect prints depth 35 and uniform ensemble for the default config") {
    const std::string dir = tmp_dir("cmsc_cli_inspect");
    ModelConfig mc;  // paper defaults: S=3, M=5, 64 channels
    mc.channels = 4; // depth is independent of width; keep the file small
    CmscModel model = CmscModel::build(mc);
    init_weights(model, 123);
    save_model(model, dir + "/default.bin");

    const RunResult r = run_cli("inspect --model " + dir + "/default.bin");
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    CHECK(r.output.find("depth: 35") != std::string::npos);
    CHECK(r.output.find("0.333333333333") != std::string::npos);
    std::filesystem::remove_all(dir);
}
