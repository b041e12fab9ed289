#pragma once

#include <string>
#include <vector>

#include "cmsc/imaging.hpp"
#include "cmsc/model.hpp"

namespace cmsc {

// 10*log10(peak^2/MSE); identical inputs report +infinity.
double psnr(const ImagePlane& a, const ImagePlane& b, double peak = 1.0);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1.
double ssim(const ImagePlane& a, const ImagePlane& b);

struct MetricRow {
    std::string name;
    int scale = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    int scale = 0;
    std::vector<MetricRow> model_rows;
    std::vector<MetricRow> bicubic_rows;
    MetricRow model_mean;
    MetricRow bicubic_mean;
};

// Per image: crop to a scale multiple, degrade, super-resolve the Y plane in
// eval mode, quantize to 8 bits, shave `scale` pixels per side, score against
// the identically shaved HR-Y. The bicubic baseline goes through the same
// pipeline with the degraded plane itself as the prediction.
MetricReport evaluate(const CmscModel& model, const std::string& dataset_dir, int scale);

// CSV: one row per image plus one mean row per method.
void write_report_csv(const MetricReport& report, const std::string& path, bool include_baseline);
std::string format_report_table(const MetricReport& report, bool include_baseline);

}  // namespace cmsc
