#pragma once

#include <string>
#include <vector>

namespace cmsc {

enum class ColorSpace { Y, R, G, B, Cb, Cr };

// Single-channel 2-D image, values in [0,1] after every public operation.
struct ImagePlane {
    int width = 0;
    int height = 0;
    std::vector<double> values;  // row-major
    ColorSpace space = ColorSpace::Y;

    ImagePlane() = default;
    ImagePlane(int w, int h, ColorSpace s = ColorSpace::Y)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0), space(s) {}

    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct RgbImage {
    ImagePlane r, g, b;
    bool from_grayscale = false;  // source file had a single channel
};

// 8-bit PNG in/out. Grayscale files replicate into all three planes; an alpha
// channel is dropped with a warning on stderr; bit depths over 8 are rejected.
RgbImage load_png(const std::string& path);
void save_png(const RgbImage& image, const std::string& path);
void save_png_gray(const ImagePlane& plane, const std::string& path);

struct YcbcrImage {
    ImagePlane y, cb, cr;
};

// ITU-R BT.601 studio-swing transform on [0,1] samples and its exact
// algebraic inverse.
YcbcrImage rgb_to_ycbcr(const RgbImage& img);
RgbImage ycbcr_to_rgb(const YcbcrImage& img);

// Luminance plane used for super-resolution and scoring: BT.601 Y for color
// input, the sample plane itself for grayscale.
ImagePlane luminance(const RgbImage& img);

// Separable cubic resampling (a = -0.5), clamp-to-edge, weights renormalized
// per output sample. When downscaling with antialias the kernel is widened by
// the scale ratio. Output is clamped to [0,1].
ImagePlane bicubic_resize(const ImagePlane& plane, int out_w, int out_h, bool antialias = true);

struct DegradedPair {
    ImagePlane hr;  // input cropped to a multiple of the scale
    ImagePlane lr;  // bicubic down-then-up, same size as hr
};

// Crops to a multiple of `scale`, downsamples by it (antialias on) and
// upsamples back, so the LR plane has HR dimensions.
DegradedPair degrade(const ImagePlane& hr_plane, int scale);

// Removes s pixels from every side.
ImagePlane shave_border(const ImagePlane& plane, int s);

// Rounds half away from zero onto the 8-bit grid, staying in [0,1].
ImagePlane quantize_8bit(const ImagePlane& plane);

ImagePlane hflip(const ImagePlane& plane);
ImagePlane rotate90(const ImagePlane& plane);   // counter-clockwise
ImagePlane rotate180(const ImagePlane& plane);
ImagePlane rotate270(const ImagePlane& plane);

}  // namespace cmsc
