#ifndef LPGFLOW_EVAL_HPP
#define LPGFLOW_EVAL_HPP

// Image quality metrics (PSNR, SSIM, edge alignment) and heatmap export
// for attention mass captured along a sampling trajectory.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgflow/image.hpp"
#include "lpgflow/png_io.hpp"

namespace lpgflow {

inline double psnr(const Canvas& a, const Canvas& b) {
    LPG_REQUIRE(a.h == b.h && a.w == b.w, "psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.px.size(); i++) {
        const double d = double(a.px[i]) - double(b.px[i]);
        mse += d * d;
    }
    mse /= double(a.px.size());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// uniform 8x8 window on luminance, C1 = 0.01^2, C2 = 0.03^2
inline double ssim(const Canvas& a, const Canvas& b) {
    LPG_REQUIRE(a.h == b.h && a.w == b.w, "ssim: shape mismatch");
    constexpr int win = 8;
    LPG_REQUIRE(a.h >= win && a.w >= win, "ssim: image smaller than window");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const GrayMap la = luminance(a);
    const GrayMap lb = luminance(b);

    double total = 0.0;
    int64_t count = 0;
    for (int y = 0; y + win <= a.h; y++)
        for (int x = 0; x + win <= a.w; x++) {
            double ma = 0.0, mb = 0.0;
            for (int j = 0; j < win; j++)
                for (int i = 0; i < win; i++) {
                    ma += la.at(y + j, x + i);
                    mb += lb.at(y + j, x + i);
                }
            ma /= win * win;
            mb /= win * win;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int j = 0; j < win; j++)
                for (int i = 0; i < win; i++) {
                    const double da = la.at(y + j, x + i) - ma;
                    const double db = lb.at(y + j, x + i) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= win * win;
            vb /= win * win;
            cov /= win * win;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count++;
        }
    return total / double(count);
}

namespace detail {

inline bool near_edge(const GrayMap& e, int y, int x) {
    for (int dy = -1; dy <= 1; dy++)
        for (int dx = -1; dx <= 1; dx++) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= e.h || xx < 0 || xx >= e.w) continue;
            if (e.at(yy, xx) != 0.0f) return true;
        }
    return false;
}

}  // namespace detail

// F1 between the generated image's edges and the condition edge map,
// with one pixel of dilation tolerance on both sides.
inline double edge_alignment(const Canvas& generated, const GrayMap& condition_edges) {
    LPG_REQUIRE(generated.h == condition_edges.h && generated.w == condition_edges.w,
                "edge_alignment: shape mismatch");
    const GrayMap pred = sobel_edges(generated);
    const GrayMap& ref = condition_edges;

    int64_t pred_total = 0, pred_hit = 0, ref_total = 0, ref_hit = 0;
    for (int y = 0; y < pred.h; y++)
        for (int x = 0; x < pred.w; x++) {
            if (pred.at(y, x) != 0.0f) {
                pred_total++;
                if (detail::near_edge(ref, y, x)) pred_hit++;
            }
            if (ref.at(y, x) != 0.0f) {
                ref_total++;
                if (detail::near_edge(pred, y, x)) ref_hit++;
            }
        }
    if (pred_total == 0 || ref_total == 0) return 0.0;
    const double precision = double(pred_hit) / double(pred_total);
    const double recall    = double(ref_hit) / double(ref_total);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// ------------------------------------------------------------------ report

struct ImageMetrics {
    std::string name;
    double psnr           = 0.0;
    double ssim           = 0.0;
    double edge_alignment = 0.0;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    std::vector<std::string> skipped;
    std::vector<std::string> metrics;  // which of the three were computed
};

inline double metric_mean(const MetricReport& r, double ImageMetrics::*field) {
    LPG_REQUIRE(!r.per_image.empty(), "report: no evaluated images");
    double acc = 0.0;
    for (const auto& m : r.per_image) acc += m.*field;
    return acc / double(r.per_image.size());
}

inline double metric_std(const MetricReport& r, double ImageMetrics::*field) {
    const double mean = metric_mean(r, field);
    double acc        = 0.0;
    for (const auto& m : r.per_image) {
        const double d = m.*field - mean;
        acc += d * d;
    }
    return std::sqrt(acc / double(r.per_image.size()));
}

inline nlohmann::json report_to_json(const MetricReport& r,
                                     const std::string& config_digest = "") {
    nlohmann::json per = nlohmann::json::array();
    const bool want_psnr = std::count(r.metrics.begin(), r.metrics.end(), "psnr") > 0;
    const bool want_ssim = std::count(r.metrics.begin(), r.metrics.end(), "ssim") > 0;
    const bool want_edge = std::count(r.metrics.begin(), r.metrics.end(), "edge") > 0;
    for (const auto& m : r.per_image) {
        nlohmann::json e;
        e["name"] = m.name;
        if (want_psnr) e["psnr"] = m.psnr;
        if (want_ssim) e["ssim"] = m.ssim;
        if (want_edge) e["edge_alignment"] = m.edge_alignment;
        per.push_back(e);
    }
    nlohmann::json agg;
    agg["count"] = r.per_image.size();
    if (!r.per_image.empty()) {
        if (want_psnr) {
            agg["psnr_mean"] = metric_mean(r, &ImageMetrics::psnr);
            agg["psnr_std"]  = metric_std(r, &ImageMetrics::psnr);
        }
        if (want_ssim) {
            agg["ssim_mean"] = metric_mean(r, &ImageMetrics::ssim);
            agg["ssim_std"]  = metric_std(r, &ImageMetrics::ssim);
        }
        if (want_edge) {
            agg["edge_alignment_mean"] = metric_mean(r, &ImageMetrics::edge_alignment);
            agg["edge_alignment_std"]  = metric_std(r, &ImageMetrics::edge_alignment);
        }
    }
    nlohmann::json out;
    out["per_image"]     = per;
    out["aggregate"]     = agg;
    out["skipped"]       = r.skipped;
    out["config_digest"] = config_digest;
    return out;
}

// ---------------------------------------------------------------- heatmaps

struct AttnRecord {
    int step  = 0;
    int layer = 0;
    GrayMap mass;  // left-canvas attention mass per right-canvas token
};

// One grayscale PNG per record, max-normalized, upscaled by patch pixels.
// Returns the written paths.
inline std::vector<std::string> write_attention_heatmaps(
    const std::vector<AttnRecord>& records, const std::string& out_dir,
    const std::string& prefix = "attn", int upscale = 1) {
    LPG_REQUIRE(!records.empty(), "heatmaps: empty trajectory");
    LPG_REQUIRE(upscale >= 1, "heatmaps: bad upscale");
    std::vector<std::string> paths;
    for (const auto& rec : records) {
        float peak = 0.0f;
        for (float v : rec.mass.v) peak = std::max(peak, v);
        GrayMap img = make_gray(rec.mass.h * upscale, rec.mass.w * upscale);
        for (int y = 0; y < img.h; y++)
            for (int x = 0; x < img.w; x++) {
                const float v = rec.mass.at(y / upscale, x / upscale);
                img.at(y, x)  = peak > 0.0f ? v / peak : 0.0f;
            }
        char name[128];
        std::snprintf(name, sizeof(name), "%s_step%03d_layer%02d.png", prefix.c_str(),
                      rec.step, rec.layer);
        const std::string path = out_dir + "/" + name;
        write_png_gray8(path, img);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace lpgflow

#endif
