#ifndef LPGFLOW_SCENE_HPP
#define LPGFLOW_SCENE_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "image.hpp"
#include "rng.hpp"

// Procedural scenes: a handful of anti-aliased flat-color shapes at distinct
// depths over a linear-gradient background, with depth / segmentation / edge
// maps rendered from the same object list so every derived pair agrees.

namespace lpgflow {

// palette index 0 is reserved for the background in segmentation maps
inline const std::array<std::array<uint8_t, 3>, 16>& palette16() {
    static const std::array<std::array<uint8_t, 3>, 16> p = {{
        {0, 0, 0},        // black
        {255, 255, 255},  // white
        {220, 50, 47},    // red
        {60, 160, 70},    // green
        {50, 90, 220},    // blue
        {240, 210, 60},   // yellow
        {60, 200, 200},   // cyan
        {200, 70, 200},   // magenta
        {245, 140, 40},   // orange
        {130, 70, 200},   // purple
        {140, 90, 50},    // brown
        {250, 160, 190},  // pink
        {150, 230, 80},   // lime
        {40, 130, 130},   // teal
        {30, 40, 110},    // navy
        {130, 130, 130},  // gray
    }};
    return p;
}

inline std::array<float, 3> palette_rgb(int index) {
    LPG_REQUIRE(index >= 0 && index < 16, "palette_rgb: index out of range");
    const auto& c = palette16()[index];
    return {float(c[0]) / 255.0f, float(c[1]) / 255.0f, float(c[2]) / 255.0f};
}

struct SceneObject {
    enum Kind { Disc = 0, Rect = 1, Triangle = 2 };
    Kind kind         = Disc;
    int color_index   = 1;  // fill color, palette index
    int depth_rank    = 0;  // 0 = back-most object, n-1 = front-most
    float depth_value = 0;  // (rank+1)/n, near = 1
    float cx = 0, cy = 0;
    float radius = 0;                  // disc
    float hx = 0, hy = 0, rot = 0;     // rectangle half-extents and rotation
    std::array<float, 6> tri{};        // triangle vertices x1,y1,x2,y2,x3,y3
};

struct Scene {
    uint64_t seed = 0;
    Canvas rgb;
    GrayMap depth;  // [0,1], near = 1, background 0
    Canvas seg;     // flat palette color per object, background black
    GrayMap edges;  // sobel threshold of rgb, {0,1}
    std::vector<SceneObject> objects;
};

namespace detail {

inline float coverage16(const SceneObject& o, int px, int py) {
    int hits = 0;
    for (int sy = 0; sy < 4; sy++) {
        for (int sx = 0; sx < 4; sx++) {
            const float x = float(px) + (float(sx) + 0.5f) / 4.0f;
            const float y = float(py) + (float(sy) + 0.5f) / 4.0f;
            bool in       = false;
            switch (o.kind) {
                case SceneObject::Disc: {
                    const float dx = x - o.cx, dy = y - o.cy;
                    in = dx * dx + dy * dy <= o.radius * o.radius;
                    break;
                }
                case SceneObject::Rect: {
                    const float c = std::cos(-o.rot), s = std::sin(-o.rot);
                    const float dx = x - o.cx, dy = y - o.cy;
                    const float rx = dx * c - dy * s, ry = dx * s + dy * c;
                    in = std::fabs(rx) <= o.hx && std::fabs(ry) <= o.hy;
                    break;
                }
                case SceneObject::Triangle: {
                    auto side = [&](float ax, float ay, float bx, float by) {
                        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                    };
                    const float d1 = side(o.tri[0], o.tri[1], o.tri[2], o.tri[3]);
                    const float d2 = side(o.tri[2], o.tri[3], o.tri[4], o.tri[5]);
                    const float d3 = side(o.tri[4], o.tri[5], o.tri[0], o.tri[1]);
                    in = (d1 >= 0 && d2 >= 0 && d3 >= 0) || (d1 <= 0 && d2 <= 0 && d3 <= 0);
                    break;
                }
            }
            if (in) hits++;
        }
    }
    return float(hits) / 16.0f;
}

inline std::vector<SceneObject> sample_objects(int h, int w, RngStream& rng) {
    const int n     = int(rng.next_int(2, 6));
    const float mn  = float(std::min(h, w));
    std::vector<SceneObject> objs(n);

    // distinct depths: shuffle ranks 0..n-1
    std::vector<int> ranks(n);
    for (int i = 0; i < n; i++) ranks[i] = i;
    for (int i = n - 1; i > 0; i--)
        std::swap(ranks[i], ranks[rng.next_int(0, i)]);

    for (int i = 0; i < n; i++) {
        SceneObject& o = objs[i];
        o.kind         = SceneObject::Kind(rng.next_int(0, 2));
        o.color_index  = int(rng.next_int(1, 15));
        o.depth_rank   = ranks[i];
        o.depth_value  = float(ranks[i] + 1) / float(n);
        o.cx           = rng.uniform(0.15f * w, 0.85f * w);
        o.cy           = rng.uniform(0.15f * h, 0.85f * h);
        switch (o.kind) {
            case SceneObject::Disc:
                o.radius = rng.uniform(0.12f, 0.30f) * mn;
                break;
            case SceneObject::Rect:
                o.hx  = rng.uniform(0.10f, 0.28f) * mn;
                o.hy  = rng.uniform(0.10f, 0.28f) * mn;
                o.rot = rng.uniform(0.0f, 3.14159265f);
                break;
            case SceneObject::Triangle: {
                // angle-separated spokes keep the triangle non-degenerate
                float a[3];
                for (int tries = 0;; tries++) {
                    for (auto& v : a) v = rng.uniform(0.0f, 6.2831853f);
                    std::sort(a, a + 3);
                    const float g1 = a[1] - a[0], g2 = a[2] - a[1];
                    const float g3 = 6.2831853f - a[2] + a[0];
                    if ((g1 > 0.5f && g2 > 0.5f && g3 > 0.5f) || tries > 50) break;
                }
                for (int v = 0; v < 3; v++) {
                    const float r = rng.uniform(0.14f, 0.32f) * mn;
                    o.tri[2 * v]     = o.cx + r * std::cos(a[v]);
                    o.tri[2 * v + 1] = o.cy + r * std::sin(a[v]);
                }
                break;
            }
        }
    }
    // paint order: back to front
    std::sort(objs.begin(), objs.end(),
              [](const SceneObject& a, const SceneObject& b) {
                  return a.depth_rank < b.depth_rank;
              });
    return objs;
}

}  // namespace detail

inline Scene gen_scene(uint64_t seed, int h = 32, int w = 32) {
    LPG_REQUIRE(h >= 8 && w >= 8, "gen_scene: canvas too small");
    RngStream rng(seed, "scene");

    for (int attempt = 0; attempt < 50; attempt++) {
        // gradient background between two random colors
        float c0[3], c1[3];
        for (auto& v : c0) v = rng.next_float();
        for (auto& v : c1) v = rng.next_float();
        const float phi = rng.uniform(0.0f, 6.2831853f);
        const float dx = std::cos(phi), dy = std::sin(phi);
        const float pmin = std::min(0.0f, dx) + std::min(0.0f, dy);
        const float pmax = std::max(0.0f, dx) + std::max(0.0f, dy);

        Scene sc;
        sc.seed    = seed;
        sc.rgb     = make_canvas(h, w);
        sc.depth   = make_gray(h, w, 0.0f);
        sc.seg     = make_canvas(h, w, 0.0f);
        sc.objects = detail::sample_objects(h, w, rng);

        std::vector<int> seg_pixels(sc.objects.size(), 0);
        for (int y = 0; y < h; y++) {
            for (int x = 0; x < w; x++) {
                const float proj =
                    (float(x) + 0.5f) / float(w) * dx + (float(y) + 0.5f) / float(h) * dy;
                const float s = (proj - pmin) / (pmax - pmin);
                float col[3];
                for (int c = 0; c < 3; c++) col[c] = c0[c] + (c1[c] - c0[c]) * s;

                int front = -1;  // object owning this pixel in depth/seg
                for (size_t i = 0; i < sc.objects.size(); i++) {
                    const float cov = detail::coverage16(sc.objects[i], x, y);
                    if (cov > 0.0f) {
                        const auto rgb = palette_rgb(sc.objects[i].color_index);
                        for (int c = 0; c < 3; c++)
                            col[c] = col[c] * (1.0f - cov) + rgb[c] * cov;
                    }
                    if (cov >= 0.5f) front = int(i);  // later objects are nearer
                }
                for (int c = 0; c < 3; c++) sc.rgb.at(y, x, c) = clamp01(col[c]);
                if (front >= 0) {
                    sc.depth.at(y, x) = sc.objects[front].depth_value;
                    // segmentation color keyed by object slot so ids stay
                    // distinct even when two objects share a fill color
                    const auto segc = palette_rgb(1 + front);
                    for (int c = 0; c < 3; c++) sc.seg.at(y, x, c) = segc[c];
                    seg_pixels[front]++;
                }
            }
        }

        bool all_visible = true;
        for (int count : seg_pixels) all_visible = all_visible && count > 0;
        if (!all_visible) continue;  // a fully occluded object; redraw the scene

        sc.edges = sobel_edges(sc.rgb);
        return sc;
    }
    throw ContractViolation("gen_scene: could not place mutually visible objects");
}

}  // namespace lpgflow

#endif  // LPGFLOW_SCENE_HPP
