#include "cmsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace cmsc {
namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window_1d() {
    std::vector<double> g(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += g[i];
    }
    // Each separable half is normalized, so the outer product sums to 1.
    for (double& v : g) v /= sum;
    return g;
}

// 'valid' correlation with the separable Gaussian: rows first, then columns.
std::vector<double> gauss_filter_valid(const std::vector<double>& img, int width, int height,
                                       const std::vector<double>& g) {
    const int ow = width - kWin + 1;
    const int oh = height - kWin + 1;
    std::vector<double> mid(static_cast<std::size_t>(ow) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kWin; ++t)
                acc += g[t] * img[static_cast<std::size_t>(y) * width + x + t];
            mid[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kWin; ++t)
                acc += g[t] * mid[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

std::vector<std::filesystem::path> sorted_pngs(const std::string& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("evaluate: '" + dir + "' is not a directory");
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("evaluate: no PNG files in '" + dir + "'");
    return files;
}

MetricRow mean_row(const std::vector<MetricRow>& rows, int scale) {
    MetricRow m{"mean", scale, 0.0, 0.0};
    for (const MetricRow& r : rows) {
        m.psnr_db += r.psnr_db;
        m.ssim += r.ssim;
    }
    m.psnr_db /= static_cast<double>(rows.size());
    m.ssim /= static_cast<double>(rows.size());
    return m;
}

void print_rows(std::string& out, const char* method, const std::vector<MetricRow>& rows,
                const MetricRow& mean) {
    char buf[160];
    for (const MetricRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "  %-20s %-8s x%d  %8.4f dB   %.6f\n", r.name.c_str(),
                      method, r.scale, r.psnr_db, r.ssim);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "  %-20s %-8s x%d  %8.4f dB   %.6f\n", "mean", method,
                  mean.scale, mean.psnr_db, mean.ssim);
    out += buf;
}

}  // namespace

double psnr(const ImagePlane& a, const ImagePlane& b, double peak) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("psnr: dimension mismatch " + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) +
                                    "x" + std::to_string(b.height));
    double se = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(a.values.size());
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const ImagePlane& a, const ImagePlane& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("ssim: dimension mismatch");
    if (a.width < kWin || a.height < kWin)
        throw std::invalid_argument("ssim: image must be at least 11x11, got " +
                                    std::to_string(a.width) + "x" + std::to_string(a.height));

    static const std::vector<double> g = gaussian_window_1d();
    const std::size_t n = a.values.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a.values[i] * a.values[i];
        bb[i] = b.values[i] * b.values[i];
        ab[i] = a.values[i] * b.values[i];
    }
    const auto mu1 = gauss_filter_valid(a.values, a.width, a.height, g);
    const auto mu2 = gauss_filter_valid(b.values, a.width, a.height, g);
    const auto s11 = gauss_filter_valid(aa, a.width, a.height, g);
    const auto s22 = gauss_filter_valid(bb, a.width, a.height, g);
    const auto s12 = gauss_filter_valid(ab, a.width, a.height, g);

    double total = 0.0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
        const double var1 = s11[i] - mu1[i] * mu1[i];
        const double var2 = s22[i] - mu2[i] * mu2[i];
        const double cov = s12[i] - mu1[i] * mu2[i];
        total += ((2.0 * mu1[i] * mu2[i] + kC1) * (2.0 * cov + kC2)) /
                 ((mu1[i] * mu1[i] + mu2[i] * mu2[i] + kC1) * (var1 + var2 + kC2));
    }
    return total / static_cast<double>(mu1.size());
}

MetricReport evaluate(const CmscModel& model, const std::string& dataset_dir, int scale) {
    MetricReport report;
    report.scale = scale;
    for (const auto& path : sorted_pngs(dataset_dir)) {
        const RgbImage img = load_png(path.string());
        const ImagePlane y = luminance(img);
        const DegradedPair pair = degrade(y, scale);

        Tensor input(1, 1, pair.lr.height, pair.lr.width);
        std::copy(pair.lr.values.begin(), pair.lr.values.end(), input.values().begin());
        const CmscForward fwd = cmsc_forward(model, input, Mode::eval);

        ImagePlane sr(pair.lr.width, pair.lr.height, ColorSpace::Y);
        std::copy(fwd.final.values().begin(), fwd.final.values().end(), sr.values.begin());
        const ImagePlane hr_sh = shave_border(pair.hr, scale);
        const ImagePlane sr_sh = shave_border(quantize_8bit(sr), scale);
        const ImagePlane bi_sh = shave_border(quantize_8bit(pair.lr), scale);

        const std::string name = path.stem().string();
        report.model_rows.push_back({name, scale, psnr(sr_sh, hr_sh), ssim(sr_sh, hr_sh)});
        report.bicubic_rows.push_back({name, scale, psnr(bi_sh, hr_sh), ssim(bi_sh, hr_sh)});
    }
    report.model_mean = mean_row(report.model_rows, scale);
    report.bicubic_mean = mean_row(report.bicubic_rows, scale);
    return report;
}

void write_report_csv(const MetricReport& report, const std::string& path,
                      bool include_baseline) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("write_report_csv: cannot open '" + tmp + "'");
        out << "name,method,scale,psnr_db,ssim\n";
        char buf[160];
        auto emit = [&](const char* method, const MetricRow& r) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f\n", r.name.c_str(), method,
                          r.scale, r.psnr_db, r.ssim);
            out << buf;
        };
        for (const MetricRow& r : report.model_rows) emit("cmsc", r);
        emit("cmsc", report.model_mean);
        if (include_baseline) {
            for (const MetricRow& r : report.bicubic_rows) emit("bicubic", r);
            emit("bicubic", report.bicubic_mean);
        }
        if (!out) throw std::runtime_error("write_report_csv: write failed");
    }
    std::filesystem::rename(tmp, path);
}

std::string format_report_table(const MetricReport& report, bool include_baseline) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %-20s %-8s %-3s %11s   %s\n", "image", "method", "", "PSNR",
                  "SSIM");
    out += buf;
    print_rows(out, "cmsc", report.model_rows, report.model_mean);
    if (include_baseline) print_rows(out, "bicubic", report.bicubic_rows, report.bicubic_mean);
    return out;
}

}  // namespace cmsc
