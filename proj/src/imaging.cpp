#include "cmsc/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmsc {
namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Keys cubic kernel with a = -0.5.
double cubic(double x) {
    const double ax = std::abs(x);
    if (ax <= 1.0) return (1.5 * ax - 2.5) * ax * ax + 1.0;
    if (ax < 2.0) return ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0;
    return 0.0;
}

struct ResampleTaps {
    int first = 0;                // leftmost source index before clamping
    std::vector<double> weights;  // normalized
};

// One output sample j maps to source coordinate u = (j+0.5)/scale - 0.5; the
// taps cover the (possibly widened) kernel support around u.
std::vector<ResampleTaps> plan_taps(int in_len, int out_len, bool antialias) {
    const double scale = static_cast<double>(out_len) / in_len;
    const bool widen = antialias && scale < 1.0;
    const double kernel_width = widen ? 4.0 / scale : 4.0;
    const int taps = static_cast<int>(std::ceil(kernel_width)) + 2;

    std::vector<ResampleTaps> plan(out_len);
    for (int j = 0; j < out_len; ++j) {
        const double u = (j + 0.5) / scale - 0.5;
        const int left = static_cast<int>(std::floor(u - kernel_width / 2.0));
        plan[j].first = left;
        plan[j].weights.resize(taps);
        double sum = 0.0;
        for (int t = 0; t < taps; ++t) {
            const double x = u - (left + t);
            const double wgt = widen ? cubic(x * scale) : cubic(x);
            plan[j].weights[t] = wgt;
            sum += wgt;
        }
        for (double& wgt : plan[j].weights) wgt /= sum;
    }
    return plan;
}

}  // namespace

YcbcrImage rgb_to_ycbcr(const RgbImage& img) {
    YcbcrImage out;
    out.y = ImagePlane(img.r.width, img.r.height, ColorSpace::Y);
    out.cb = ImagePlane(img.r.width, img.r.height, ColorSpace::Cb);
    out.cr = ImagePlane(img.r.width, img.r.height, ColorSpace::Cr);
    for (std::size_t i = 0; i < img.r.values.size(); ++i) {
        const double r = img.r.values[i], g = img.g.values[i], b = img.b.values[i];
        out.y.values[i] = clamp01((16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
        out.cb.values[i] = clamp01((128.0 - 37.797 * r - 74.203 * g + 112.0 * b) / 255.0);
        out.cr.values[i] = clamp01((128.0 + 112.0 * r - 93.786 * g - 18.214 * b) / 255.0);
    }
    return out;
}

namespace {

// Exact inverse of the forward studio-swing matrix, computed once so the
// round-trip holds to machine precision.
struct YcbcrInverse {
    double m[3][3];
    YcbcrInverse() {
        const double f[3][3] = {{65.481, 128.553, 24.966},
                                {-37.797, -74.203, 112.0},
                                {112.0, -93.786, -18.214}};
        const double det = f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1]) -
                           f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0]) +
                           f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0]);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const int a = (j + 1) % 3, b = (j + 2) % 3;
                const int c = (i + 1) % 3, d = (i + 2) % 3;
                m[i][j] = (f[a][c] * f[b][d] - f[a][d] * f[b][c]) / det;
            }
    }
};

const YcbcrInverse kYcbcrInv;

}  // namespace

RgbImage ycbcr_to_rgb(const YcbcrImage& img) {
    RgbImage out;
    out.r = ImagePlane(img.y.width, img.y.height, ColorSpace::R);
    out.g = ImagePlane(img.y.width, img.y.height, ColorSpace::G);
    out.b = ImagePlane(img.y.width, img.y.height, ColorSpace::B);
    for (std::size_t i = 0; i < img.y.values.size(); ++i) {
        const double y = img.y.values[i] * 255.0 - 16.0;
        const double cb = img.cb.values[i] * 255.0 - 128.0;
        const double cr = img.cr.values[i] * 255.0 - 128.0;
        out.r.values[i] = clamp01(kYcbcrInv.m[0][0] * y + kYcbcrInv.m[0][1] * cb +
                                  kYcbcrInv.m[0][2] * cr);
        out.g.values[i] = clamp01(kYcbcrInv.m[1][0] * y + kYcbcrInv.m[1][1] * cb +
                                  kYcbcrInv.m[1][2] * cr);
        out.b.values[i] = clamp01(kYcbcrInv.m[2][0] * y + kYcbcrInv.m[2][1] * cb +
                                  kYcbcrInv.m[2][2] * cr);
    }
    return out;
}

ImagePlane luminance(const RgbImage& img) {
    if (img.from_grayscale) {
        ImagePlane y = img.r;
        y.space = ColorSpace::Y;
        return y;
    }
    return rgb_to_ycbcr(img).y;
}

ImagePlane bicubic_resize(const ImagePlane& plane, int out_w, int out_h, bool antialias) {
    if (out_w < 1 || out_h < 1)
        throw std::invalid_argument("bicubic_resize: target dimensions must be >= 1");

    // Horizontal pass.
    ImagePlane mid(out_w, plane.height, plane.space);
    const auto hplan = plan_taps(plane.width, out_w, antialias);
    for (int y = 0; y < plane.height; ++y) {
        const double* row = plane.values.data() + static_cast<std::size_t>(y) * plane.width;
        for (int j = 0; j < out_w; ++j) {
            const ResampleTaps& tp = hplan[j];
            double acc = 0.0;
            for (std::size_t t = 0; t < tp.weights.size(); ++t) {
                const int idx = std::clamp(tp.first + static_cast<int>(t), 0, plane.width - 1);
                acc += tp.weights[t] * row[idx];
            }
            mid.at(y, j) = acc;
        }
    }

    // Vertical pass.
    ImagePlane out(out_w, out_h, plane.space);
    const auto vplan = plan_taps(plane.height, out_h, antialias);
    for (int j = 0; j < out_h; ++j) {
        const ResampleTaps& tp = vplan[j];
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (std::size_t t = 0; t < tp.weights.size(); ++t) {
                const int idx = std::clamp(tp.first + static_cast<int>(t), 0, mid.height - 1);
                acc += tp.weights[t] * mid.at(idx, x);
            }
            out.at(j, x) = clamp01(acc);
        }
    }
    return out;
}

DegradedPair degrade(const ImagePlane& hr_plane, int scale) {
    if (scale < 2 || scale > 4)
        throw std::invalid_argument("degrade: scale must be in {2,3,4}, got " +
                                    std::to_string(scale));
    const int cw = hr_plane.width - hr_plane.width % scale;
    const int ch = hr_plane.height - hr_plane.height % scale;
    if (cw < scale || ch < scale)
        throw std::invalid_argument("degrade: image smaller than the scale factor");

    DegradedPair pair;
    pair.hr = ImagePlane(cw, ch, hr_plane.space);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) pair.hr.at(y, x) = hr_plane.at(y, x);

    ImagePlane small = bicubic_resize(pair.hr, cw / scale, ch / scale, true);
    pair.lr = bicubic_resize(small, cw, ch, false);
    return pair;
}

ImagePlane shave_border(const ImagePlane& plane, int s) {
    if (s < 0) throw std::invalid_argument("shave_border: negative amount");
    if (2 * s >= std::min(plane.width, plane.height))
        throw std::invalid_argument("shave_border: shave of " + std::to_string(s) +
                                    " exceeds image " + std::to_string(plane.width) + "x" +
                                    std::to_string(plane.height));
    ImagePlane out(plane.width - 2 * s, plane.height - 2 * s, plane.space);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(y, x) = plane.at(y + s, x + s);
    return out;
}

ImagePlane quantize_8bit(const ImagePlane& plane) {
    ImagePlane out = plane;
    for (double& v : out.values) {
        const double q = std::round(clamp01(v) * 255.0);
        v = q / 255.0;
    }
    return out;
}

ImagePlane hflip(const ImagePlane& plane) {
    ImagePlane out(plane.width, plane.height, plane.space);
    for (int y = 0; y < plane.height; ++y)
        for (int x = 0; x < plane.width; ++x) out.at(y, x) = plane.at(y, plane.width - 1 - x);
    return out;
}

ImagePlane rotate90(const ImagePlane& plane) {
    ImagePlane out(plane.height, plane.width, plane.space);
    for (int y = 0; y < plane.height; ++y)
        for (int x = 0; x < plane.width; ++x) out.at(plane.width - 1 - x, y) = plane.at(y, x);
    return out;
}

ImagePlane rotate180(const ImagePlane& plane) {
    ImagePlane out(plane.width, plane.height, plane.space);
    for (int y = 0; y < plane.height; ++y)
        for (int x = 0; x < plane.width; ++x)
            out.at(plane.height - 1 - y, plane.width - 1 - x) = plane.at(y, x);
    return out;
}

ImagePlane rotate270(const ImagePlane& plane) { return rotate180(rotate90(plane)); }

}  // namespace cmsc
