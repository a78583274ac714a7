#ifndef LPGFLOW_LPG_HPP
#define LPGFLOW_LPG_HPP

#include <array>
#include <optional>
#include <vector>

#include "image.hpp"
#include "rng.hpp"

// Left-prompt-guided canvas plumbing: the reference image sits on the left
// half of a double-width canvas, the target on the right, and a binary mask
// (1 = generate) selects what the model must fill in. The left half is never
// masked; consumers crop it away after sampling.

namespace lpgflow {

using PolyPoint = std::array<float, 2>;  // (x, y)

// even-odd scanline fill at pixel centers
inline void fill_polygon(GrayMap& m, const std::vector<PolyPoint>& poly,
                         float value = 1.0f) {
    if (poly.size() < 3) return;
    std::vector<float> xs;
    for (int y = 0; y < m.h; y++) {
        const float yc = float(y) + 0.5f;
        xs.clear();
        for (size_t i = 0; i < poly.size(); i++) {
            const PolyPoint& p = poly[i];
            const PolyPoint& q = poly[(i + 1) % poly.size()];
            if ((p[1] <= yc) != (q[1] <= yc)) {
                xs.push_back(p[0] + (yc - p[1]) * (q[0] - p[0]) / (q[1] - p[1]));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (size_t i = 0; i + 1 < xs.size(); i += 2) {
            int x0 = int(std::ceil(xs[i] - 0.5f));
            int x1 = int(std::ceil(xs[i + 1] - 0.5f)) - 1;
            x0     = std::max(x0, 0);
            x1     = std::min(x1, m.w - 1);
            for (int x = x0; x <= x1; x++) m.at(y, x) = value;
        }
    }
}

inline std::vector<PolyPoint> angle_sorted(std::vector<PolyPoint> pts) {
    float cx = 0.0f, cy = 0.0f;
    for (const auto& p : pts) {
        cx += p[0];
        cy += p[1];
    }
    cx /= float(pts.size());
    cy /= float(pts.size());
    std::sort(pts.begin(), pts.end(), [&](const PolyPoint& a, const PolyPoint& b) {
        const float aa = std::atan2(a[1] - cy, a[0] - cx);
        const float ab = std::atan2(b[1] - cy, b[0] - cx);
        if (aa != ab) return aa < ab;
        if (a[0] != b[0]) return a[0] < b[0];
        return a[1] < b[1];
    });
    return pts;
}

inline void validate_binary_mask(const GrayMap& m, const char* what = "mask") {
    for (float v : m.v)
        LPG_REQUIRE(v == 0.0f || v == 1.0f, std::string(what) + ": values must be 0 or 1");
}

// z0_hat = I' * (1 - M), mask broadcast over channels
inline std::vector<float> masked_latent(const Canvas& stitched, const GrayMap& mask) {
    LPG_REQUIRE(stitched.h == mask.h && stitched.w == mask.w,
                "masked_latent: shape mismatch");
    validate_binary_mask(mask);
    std::vector<float> out(stitched.px.size());
    for (int y = 0; y < stitched.h; y++)
        for (int x = 0; x < stitched.w; x++) {
            const float keep = 1.0f - mask.at(y, x);
            for (int c = 0; c < 3; c++)
                out[(size_t(y) * stitched.w + x) * 3 + c] = stitched.at(y, x, c) * keep;
        }
    return out;
}

struct StitchedInput {
    Canvas canvas;              // H x 2W x 3
    GrayMap mask;               // H x 2W, {0,1}, left half all zero
    std::vector<float> masked;  // H x 2W x 3, canvas * (1 - mask)
};

struct MaskMode {
    enum Kind { Full, Polygon, Bitmap } kind = Full;
    std::vector<PolyPoint> poly;  // stitched coordinates, right half only
    GrayMap bitmap;               // stitched size, e.g. loaded from a dataset

    static MaskMode full() { return MaskMode{}; }
    static MaskMode polygon(std::vector<PolyPoint> p) {
        MaskMode m;
        m.kind = Polygon;
        m.poly = std::move(p);
        return m;
    }
    static MaskMode bitmap_mask(GrayMap g) {
        MaskMode m;
        m.kind   = Bitmap;
        m.bitmap = std::move(g);
        return m;
    }
};

inline StitchedInput stitch(const Canvas& reference, const Canvas& target,
                            const MaskMode& mode) {
    LPG_REQUIRE(reference.h == target.h && reference.w == target.w,
                "stitch: reference/target dims differ");
    const int h = reference.h, w = reference.w;

    StitchedInput s;
    s.canvas = make_canvas(h, 2 * w);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            for (int c = 0; c < 3; c++) {
                s.canvas.at(y, x, c)     = reference.at(y, x, c);
                s.canvas.at(y, x + w, c) = target.at(y, x, c);
            }

    s.mask = make_gray(h, 2 * w, 0.0f);
    switch (mode.kind) {
        case MaskMode::Full:
            for (int y = 0; y < h; y++)
                for (int x = w; x < 2 * w; x++) s.mask.at(y, x) = 1.0f;
            break;
        case MaskMode::Polygon:
            fill_polygon(s.mask, mode.poly);
            break;
        case MaskMode::Bitmap:
            LPG_REQUIRE(mode.bitmap.h == h && mode.bitmap.w == 2 * w,
                        "stitch: bitmap mask dims differ");
            validate_binary_mask(mode.bitmap);
            s.mask = mode.bitmap;
            break;
    }
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            LPG_REQUIRE(s.mask.at(y, x) == 0.0f, "stitch: mask reaches the left half");

    s.masked = masked_latent(s.canvas, s.mask);
    return s;
}

inline Canvas crop_right(const Canvas& stitched) {
    LPG_REQUIRE(stitched.w % 2 == 0, "crop_right: odd width");
    const int w = stitched.w / 2;
    Canvas out  = make_canvas(stitched.h, w);
    for (int y = 0; y < stitched.h; y++)
        for (int x = 0; x < w; x++)
            for (int c = 0; c < 3; c++) out.at(y, x, c) = stitched.at(y, x + w, c);
    return out;
}

// Random simple polygon confined to the right half of the stitched canvas.
// Resamples until right-half coverage lands in [0.10, 0.60].
inline GrayMap random_polygon_mask(int h, int w, RngStream& rng) {
    LPG_REQUIRE(h >= 8 && w >= 8, "random_polygon_mask: canvas too small");
    for (int attempt = 0; attempt < 100; attempt++) {
        const int n = int(rng.next_int(5, 15));
        std::vector<PolyPoint> pts(n);
        for (auto& p : pts) {
            p[0] = rng.uniform(float(w), float(2 * w));
            p[1] = rng.uniform(0.0f, float(h));
        }
        GrayMap m = make_gray(h, 2 * w, 0.0f);
        fill_polygon(m, angle_sorted(pts));
        int64_t filled = 0;
        for (float v : m.v) filled += v != 0.0f;
        const double coverage = double(filled) / (double(h) * w);
        if (coverage >= 0.10 && coverage <= 0.60) return m;
    }
    throw ContractViolation("random_polygon_mask: coverage never reached [0.10,0.60]");
}

struct Match {
    float lx = 0.0f, ly = 0.0f;  // reference-view coordinates
    float rx = 0.0f, ry = 0.0f;  // target-view coordinates
    float conf = 0.0f;
};
using MatchSet = std::vector<Match>;

struct MatchingMaskInfo {
    float crop_x0 = 0, crop_y0 = 0, crop_x1 = 0, crop_y1 = 0;  // target coords
    float bbox_x0 = 0, bbox_y0 = 0, bbox_x1 = 0, bbox_y1 = 0;
    int vertex_count = 0;
};

// Builds a polygon mask from high-confidence correspondences: keep conf >= the
// threshold, crop a random sub-rectangle of their bounding box whose area is a
// crop_range fraction of it, then use 15..30 retained target points inside the
// crop as angle-ordered polygon vertices. Returns nullopt when there are not
// enough usable points; the caller falls back to random_polygon_mask.
inline std::optional<GrayMap> matching_mask(int h, int w, const MatchSet& matches,
                                            RngStream& rng, float conf_threshold = 0.8f,
                                            float crop_lo = 0.2f, float crop_hi = 0.5f,
                                            int vertex_min = 15, int vertex_max = 30,
                                            MatchingMaskInfo* info = nullptr) {
    LPG_REQUIRE(!matches.empty(), "matching_mask: empty match set");

    std::vector<PolyPoint> retained;
    for (const auto& m : matches)
        if (m.conf >= conf_threshold) retained.push_back({m.rx, m.ry});
    if (int(retained.size()) < vertex_min) return std::nullopt;

    float bx0 = retained[0][0], bx1 = retained[0][0];
    float by0 = retained[0][1], by1 = retained[0][1];
    for (const auto& p : retained) {
        bx0 = std::min(bx0, p[0]);
        bx1 = std::max(bx1, p[0]);
        by0 = std::min(by0, p[1]);
        by1 = std::max(by1, p[1]);
    }
    const float bw = bx1 - bx0, bh = by1 - by0;

    // area fraction in crop_range, aspect split between the two axes
    const float area_frac = rng.uniform(crop_lo, crop_hi);
    const float fw        = rng.uniform(area_frac, 1.0f);
    const float fh        = area_frac / fw;
    const float cw        = bw * fw;
    const float ch        = bh * fh;
    const float cx0       = bx0 + rng.uniform(0.0f, bw - cw);
    const float cy0       = by0 + rng.uniform(0.0f, bh - ch);
    const float cx1       = cx0 + cw;
    const float cy1       = cy0 + ch;

    std::vector<PolyPoint> inside;
    for (const auto& p : retained)
        if (p[0] >= cx0 && p[0] <= cx1 && p[1] >= cy0 && p[1] <= cy1)
            inside.push_back(p);
    if (int(inside.size()) < vertex_min) return std::nullopt;

    const int n = int(rng.next_int(vertex_min, std::min<int64_t>(vertex_max, inside.size())));
    // partial Fisher-Yates: first n entries become the sample
    for (int i = 0; i < n; i++) {
        const int j = int(rng.next_int(i, int64_t(inside.size()) - 1));
        std::swap(inside[i], inside[j]);
    }
    inside.resize(n);

    // vertices are in target coordinates; the mask lives on the right half
    std::vector<PolyPoint> verts = angle_sorted(inside);
    for (auto& p : verts) p[0] += float(w);
    GrayMap m = make_gray(h, 2 * w, 0.0f);
    fill_polygon(m, verts);

    if (info) {
        *info = MatchingMaskInfo{cx0, cy0, cx1, cy1, bx0, by0, bx1, by1, n};
    }
    return m;
}

}  // namespace lpgflow

#endif  // LPGFLOW_LPG_HPP
