#ifndef LPGFLOW_IMAGE_HPP
#define LPGFLOW_IMAGE_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "common.hpp"

namespace lpgflow {

// RGB image, row-major [y][x][c], values in [0,1]
struct Canvas {
    int h = 0;
    int w = 0;
    std::vector<float> px;

    float& at(int y, int x, int c) { return px[(size_t(y) * w + x) * 3 + c]; }
    float at(int y, int x, int c) const { return px[(size_t(y) * w + x) * 3 + c]; }
};

// single-channel map, row-major [y][x]; used for depth, edges and masks
struct GrayMap {
    int h = 0;
    int w = 0;
    std::vector<float> v;

    float& at(int y, int x) { return v[size_t(y) * w + x]; }
    float at(int y, int x) const { return v[size_t(y) * w + x]; }
};

inline Canvas make_canvas(int h, int w, float fill = 0.0f) {
    LPG_REQUIRE(h > 0 && w > 0, "make_canvas: non-positive dims");
    return Canvas{h, w, std::vector<float>(size_t(h) * w * 3, fill)};
}

inline GrayMap make_gray(int h, int w, float fill = 0.0f) {
    LPG_REQUIRE(h > 0 && w > 0, "make_gray: non-positive dims");
    return GrayMap{h, w, std::vector<float>(size_t(h) * w, fill)};
}

inline void validate_canvas(const Canvas& c, const char* what = "canvas") {
    LPG_REQUIRE(int64_t(c.px.size()) == int64_t(c.h) * c.w * 3,
                std::string(what) + ": pixel buffer size mismatch");
    for (float v : c.px)
        LPG_REQUIRE(std::isfinite(v) && v >= 0.0f && v <= 1.0f,
                    std::string(what) + ": pixel outside [0,1]");
}

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// Rec.601 luma
inline GrayMap luminance(const Canvas& c) {
    GrayMap g = make_gray(c.h, c.w);
    for (int y = 0; y < c.h; y++)
        for (int x = 0; x < c.w; x++)
            g.at(y, x) = 0.299f * c.at(y, x, 0) + 0.587f * c.at(y, x, 1) +
                         0.114f * c.at(y, x, 2);
    return g;
}

inline Canvas replicate_gray(const GrayMap& g) {
    Canvas c = make_canvas(g.h, g.w);
    for (int y = 0; y < g.h; y++)
        for (int x = 0; x < g.w; x++)
            for (int ch = 0; ch < 3; ch++) c.at(y, x, ch) = g.at(y, x);
    return c;
}

// Binary edge map: Sobel magnitude on luminance, kernels normalized so each
// axis response lies in [-1,1] for [0,1] inputs, thresholded. Borders clamp.
inline GrayMap sobel_edges(const Canvas& c, float threshold = 0.25f) {
    const GrayMap lum = luminance(c);
    GrayMap e         = make_gray(c.h, c.w);
    auto sample = [&](int y, int x) {
        y = std::clamp(y, 0, c.h - 1);
        x = std::clamp(x, 0, c.w - 1);
        return lum.at(y, x);
    };
    for (int y = 0; y < c.h; y++) {
        for (int x = 0; x < c.w; x++) {
            const float gx = (sample(y - 1, x + 1) + 2.0f * sample(y, x + 1) +
                              sample(y + 1, x + 1)) -
                             (sample(y - 1, x - 1) + 2.0f * sample(y, x - 1) +
                              sample(y + 1, x - 1));
            const float gy = (sample(y + 1, x - 1) + 2.0f * sample(y + 1, x) +
                              sample(y + 1, x + 1)) -
                             (sample(y - 1, x - 1) + 2.0f * sample(y - 1, x) +
                              sample(y - 1, x + 1));
            const float mag =
                std::sqrt((gx / 4.0f) * (gx / 4.0f) + (gy / 4.0f) * (gy / 4.0f));
            e.at(y, x) = mag > threshold ? 1.0f : 0.0f;
        }
    }
    return e;
}

}  // namespace lpgflow

#endif  // LPGFLOW_IMAGE_HPP
