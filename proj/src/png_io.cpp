#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cmsc/imaging.hpp"

namespace cmsc {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
    const double q = std::round(std::min(1.0, std::max(0.0, v)) * 255.0);
    return static_cast<unsigned char>(q);
}

void write_png_impl(const std::string& path, int width, int height, int channels,
                    const std::vector<unsigned char>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        FilePtr fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw std::runtime_error("save_png: cannot open '" + tmp + "' for writing");

        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("save_png: libpng initialization failed");
        }
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw std::runtime_error("save_png: libpng write error for '" + path + "'");
        }
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                     8, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<png_bytep> rows(height);
        for (int y = 0; y < height; ++y)
            rows[y] = const_cast<png_bytep>(bytes.data() +
                                            static_cast<std::size_t>(y) * width * channels);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

RgbImage load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("load_png: cannot open '" + path + "'");

    unsigned char header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw std::runtime_error("load_png: '" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("load_png: libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("load_png: malformed PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth > 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("load_png: '" + path + "' has bit depth " +
                                 std::to_string(bit_depth) + ", only 8-bit PNGs are supported");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);

    bool had_alpha = (color_type & PNG_COLOR_MASK_ALPHA) != 0 ||
                     png_get_valid(png, info, PNG_INFO_tRNS);
    if (had_alpha) {
        std::fprintf(stderr, "load_png: ignoring alpha channel in '%s'\n", path.c_str());
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);

    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * channels);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    RgbImage img;
    img.r = ImagePlane(width, height, ColorSpace::R);
    img.g = ImagePlane(width, height, ColorSpace::G);
    img.b = ImagePlane(width, height, ColorSpace::B);
    img.from_grayscale = (channels == 1);
    for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i) {
        if (channels == 1) {
            const double v = bytes[i] / 255.0;
            img.r.values[i] = img.g.values[i] = img.b.values[i] = v;
        } else {
            img.r.values[i] = bytes[i * channels + 0] / 255.0;
            img.g.values[i] = bytes[i * channels + 1] / 255.0;
            img.b.values[i] = bytes[i * channels + 2] / 255.0;
        }
    }
    return img;
}

void save_png(const RgbImage& image, const std::string& path) {
    const int w = image.r.width, h = image.r.height;
    if (image.from_grayscale) {
        save_png_gray(image.r, path);
        return;
    }
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
        bytes[i * 3 + 0] = to_byte(image.r.values[i]);
        bytes[i * 3 + 1] = to_byte(image.g.values[i]);
        bytes[i * 3 + 2] = to_byte(image.b.values[i]);
    }
    write_png_impl(path, w, h, 3, bytes);
}

void save_png_gray(const ImagePlane& plane, const std::string& path) {
    std::vector<unsigned char> bytes(static_cast<std::size_t>(plane.width) * plane.height);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(plane.values[i]);
    write_png_impl(path, plane.width, plane.height, 1, bytes);
}

}  // namespace cmsc
