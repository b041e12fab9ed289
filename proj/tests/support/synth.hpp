#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "cmsc/imaging.hpp"
#include "cmsc/rng.hpp"

// Deterministic synthetic test imagery: smooth gradients plus sharp-edged
// shapes and oriented stripes, so bicubic degradation actually removes
// recoverable high-frequency content.
namespace testsupport {

inline cmsc::ImagePlane synth_plane(std::uint64_t seed, int width, int height) {
    cmsc::Rng rng(seed);
    cmsc::ImagePlane img(width, height);

    const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3);
    const double base = rng.uniform(0.3, 0.6);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            img.at(y, x) = base + gx * (x / static_cast<double>(width) - 0.5) +
                           gy * (y / static_cast<double>(height) - 0.5);

    // Hard-edged rectangles.
    const int rects = 4 + static_cast<int>(rng.below(4));
    for (int r = 0; r < rects; ++r) {
        const int x0 = static_cast<int>(rng.below(width));
        const int y0 = static_cast<int>(rng.below(height));
        const int rw = 3 + static_cast<int>(rng.below(width / 2));
        const int rh = 3 + static_cast<int>(rng.below(height / 2));
        const double v = rng.uniform(0.05, 0.95);
        for (int y = y0; y < std::min(height, y0 + rh); ++y)
            for (int x = x0; x < std::min(width, x0 + rw); ++x) img.at(y, x) = v;
    }

    // Oriented stripe texture patch.
    const double theta = rng.uniform(0.0, 3.14159);
    const double freq = rng.uniform(0.6, 1.4);
    const int px0 = static_cast<int>(rng.below(std::max(1, width / 2)));
    const int py0 = static_cast<int>(rng.below(std::max(1, height / 2)));
    for (int y = py0; y < std::min(height, py0 + height / 2); ++y)
        for (int x = px0; x < std::min(width, px0 + width / 2); ++x) {
            const double s = std::sin(freq * (x * std::cos(theta) + y * std::sin(theta)));
            img.at(y, x) = 0.5 + 0.4 * (s > 0 ? 1.0 : -1.0);
        }

    for (double& v : img.values) v = std::clamp(v, 0.0, 1.0);
    return img;
}

// Writes `count` synthetic grayscale PNGs into dir (created if needed).
inline void write_synth_corpus(const std::string& dir, std::uint64_t seed, int count, int width,
                               int height) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
        const cmsc::ImagePlane img = synth_plane(seed + 17 * i, width, height);
        cmsc::save_png_gray(img, dir + "/img" + std::to_string(i) + ".png");
    }
}

}  // namespace testsupport
