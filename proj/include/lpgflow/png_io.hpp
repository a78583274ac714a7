#ifndef LPGFLOW_PNG_IO_HPP
#define LPGFLOW_PNG_IO_HPP

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "image.hpp"

namespace lpgflow {

namespace detail {

struct FileCloser {
    FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

inline uint8_t to_u8(float v) {
    return uint8_t(std::lround(clamp01(v) * 255.0f));
}

}  // namespace detail

inline void write_png_rgb8(const std::string& path, const Canvas& c) {
    LPG_REQUIRE(c.h > 0 && c.w > 0, "write_png: empty canvas");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoFault("cannot open for write: " + path);
    detail::FileCloser closer{f};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info  = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoFault("png write failed: " + path);
    }
    png_init_io(png, f);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, c.w, c.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(size_t(c.w) * 3);
    for (int y = 0; y < c.h; y++) {
        for (int x = 0; x < c.w; x++)
            for (int ch = 0; ch < 3; ch++)
                row[size_t(x) * 3 + ch] = detail::to_u8(c.at(y, x, ch));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void write_png_gray8(const std::string& path, const GrayMap& g) {
    LPG_REQUIRE(g.h > 0 && g.w > 0, "write_png: empty map");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoFault("cannot open for write: " + path);
    detail::FileCloser closer{f};

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info  = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoFault("png write failed: " + path);
    }
    png_init_io(png, f);
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, g.w, g.h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(size_t(g.w));
    for (int y = 0; y < g.h; y++) {
        for (int x = 0; x < g.w; x++) row[x] = detail::to_u8(g.at(y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads any 8/16-bit color type and normalizes to RGB floats in [0,1].
inline Canvas read_png_rgb8(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoFault("cannot open for read: " + path);
    detail::FileCloser closer{f};

    uint8_t sig[8];
    if (std::fread(sig, 1, 8, f) != 8 || png_sig_cmp(sig, 0, 8))
        throw CorruptFile("not a png file: " + path);
    std::rewind(f);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info  = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptFile("png decode failed: " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    png_set_expand(png);  // palette -> rgb, gray<8 -> 8, tRNS -> alpha
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    LPG_REQUIRE(png_get_channels(png, info) == 3, "png read: unexpected channel count");

    Canvas c = make_canvas(h, w);
    std::vector<uint8_t> row(size_t(w) * 3);
    for (int y = 0; y < h; y++) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; x++)
            for (int ch = 0; ch < 3; ch++)
                c.at(y, x, ch) = float(row[size_t(x) * 3 + ch]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return c;
}

// Reads a mask/gray png; values are binarized at 128 when `binarize` is set.
inline GrayMap read_png_gray8(const std::string& path, bool binarize = false) {
    Canvas c  = read_png_rgb8(path);
    GrayMap g = make_gray(c.h, c.w);
    for (int y = 0; y < c.h; y++)
        for (int x = 0; x < c.w; x++) {
            const float v = c.at(y, x, 0);
            g.at(y, x)    = binarize ? (v >= 128.0f / 255.0f ? 1.0f : 0.0f) : v;
        }
    return g;
}

}  // namespace lpgflow

#endif  // LPGFLOW_PNG_IO_HPP
