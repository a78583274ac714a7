#ifndef LPGFLOW_TASKDATA_HPP
#define LPGFLOW_TASKDATA_HPP

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lpg.hpp"
#include "png_io.hpp"
#include "scene.hpp"

namespace lpgflow {

enum class TaskKind {
    Canny2Img = 0,
    Depth2Img,
    Seg2Img,
    Img2Canny,
    Img2Depth,
    Img2Seg,
    Colorize,
    Deblur,
    Superres,
    Refinpaint,
};

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::Canny2Img: return "canny2img";
        case TaskKind::Depth2Img: return "depth2img";
        case TaskKind::Seg2Img: return "seg2img";
        case TaskKind::Img2Canny: return "img2canny";
        case TaskKind::Img2Depth: return "img2depth";
        case TaskKind::Img2Seg: return "img2seg";
        case TaskKind::Colorize: return "colorize";
        case TaskKind::Deblur: return "deblur";
        case TaskKind::Superres: return "superres";
        case TaskKind::Refinpaint: return "refinpaint";
    }
    return "?";
}

inline TaskKind parse_task(const std::string& s) {
    for (int i = 0; i <= int(TaskKind::Refinpaint); i++)
        if (s == task_name(TaskKind(i))) return TaskKind(i);
    throw ContractViolation("unknown task kind: " + s);
}

// caption vocabulary: 0 unused, 1..10 task kinds, 16..31 palette colors,
// 32..34 shape kinds; default token_vocab_size 40 leaves headroom
inline int task_token(TaskKind k) { return 1 + int(k); }
inline int color_token(int palette_index) { return 16 + palette_index; }
inline int shape_token(SceneObject::Kind k) { return 32 + int(k); }

// short deterministic caption: the task word plus shape/color words for up to
// two front-most objects
inline std::vector<int> caption_tokens(TaskKind task, const Scene& scene) {
    std::vector<int> toks = {task_token(task)};
    std::vector<const SceneObject*> objs;
    for (const auto& o : scene.objects) objs.push_back(&o);
    std::sort(objs.begin(), objs.end(), [](const SceneObject* a, const SceneObject* b) {
        return a->depth_rank > b->depth_rank;
    });
    for (size_t i = 0; i < objs.size() && i < 2; i++) {
        toks.push_back(shape_token(objs[i]->kind));
        toks.push_back(color_token(objs[i]->color_index));
    }
    return toks;
}

struct TaskSpec {
    TaskKind kind             = TaskKind::Colorize;
    int sr_factor             = 4;
    float noise_sigma         = 0.1f;
    float matching_mask_prob  = 0.25f;
};

// ------------------------------------------------------------- degradations

inline Canvas degrade_noise(const Canvas& c, float sigma, RngStream& rng) {
    Canvas out = c;
    for (auto& v : out.px) v = clamp01(v + sigma * rng.next_normal());
    return out;
}

inline Canvas degrade_superres(const Canvas& c, int factor) {
    LPG_REQUIRE(factor >= 1, "superres: factor must be >= 1");
    LPG_REQUIRE(c.h % factor == 0 && c.w % factor == 0,
                "superres: dims not divisible by factor");
    Canvas out = make_canvas(c.h, c.w);
    for (int by = 0; by < c.h / factor; by++)
        for (int bx = 0; bx < c.w / factor; bx++)
            for (int ch = 0; ch < 3; ch++) {
                double acc = 0.0;
                for (int y = 0; y < factor; y++)
                    for (int x = 0; x < factor; x++)
                        acc += c.at(by * factor + y, bx * factor + x, ch);
                const float avg = float(acc / double(factor * factor));
                for (int y = 0; y < factor; y++)
                    for (int x = 0; x < factor; x++)
                        out.at(by * factor + y, bx * factor + x, ch) = avg;
            }
    return out;
}

inline Canvas degrade_grayscale(const Canvas& c) {
    return replicate_gray(luminance(c));
}

// restoration-task dispatcher; generation/perception tasks don't degrade
inline Canvas degrade(const Canvas& c, TaskKind kind, const TaskSpec& spec,
                      RngStream& rng) {
    switch (kind) {
        case TaskKind::Deblur: return degrade_noise(c, spec.noise_sigma, rng);
        case TaskKind::Superres: return degrade_superres(c, spec.sr_factor);
        case TaskKind::Colorize: return degrade_grayscale(c);
        default: throw ContractViolation("degrade: not a restoration task");
    }
}

// ------------------------------------------------------------- homographies

struct Homography {
    // row-major 3x3, maps reference-view coordinates to target coordinates
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return Homography{}; }
    static Homography translation(double tx, double ty) {
        Homography h;
        h.m = {1, 0, tx, 0, 1, ty, 0, 0, 1};
        return h;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    std::array<double, 2> apply(double x, double y) const {
        const double wz = m[6] * x + m[7] * y + m[8];
        return {(m[0] * x + m[1] * y + m[2]) / wz, (m[3] * x + m[4] * y + m[5]) / wz};
    }

    Homography mul(const Homography& o) const {
        Homography r;
        for (int i = 0; i < 3; i++)
            for (int j = 0; j < 3; j++) {
                double acc = 0;
                for (int k = 0; k < 3; k++) acc += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = acc;
            }
        return r;
    }
};

inline float bilinear_sample(const Canvas& c, double x, double y, int ch) {
    const double fx = std::floor(x), fy = std::floor(y);
    const int x0 = std::clamp(int(fx), 0, c.w - 1);
    const int y0 = std::clamp(int(fy), 0, c.h - 1);
    const int x1 = std::min(x0 + 1, c.w - 1);
    const int y1 = std::min(y0 + 1, c.h - 1);
    const float ax = float(x - fx), ay = float(y - fy);
    return c.at(y0, x0, ch) * (1.0f - ax) * (1.0f - ay) +
           c.at(y0, x1, ch) * ax * (1.0f - ay) +
           c.at(y1, x0, ch) * (1.0f - ax) * ay + c.at(y1, x1, ch) * ax * ay;
}

struct WarpResult {
    Canvas view;       // synthetic reference view of the scene
    MatchSet matches;  // exact grid correspondences, confidences in [0.7, 1.0]
    double overlap = 0.0;
};

// Renders a second view: view(q) = scene.rgb(H(q)), black outside the scene.
// Correspondences come from a uniform pixel grid, so reprojection is exact up
// to float storage; confidences are synthetic stand-ins for a real matcher.
inline WarpResult warp_view(const Scene& scene, const Homography& H, RngStream& rng,
                            int grid_step = 4) {
    LPG_REQUIRE(std::fabs(H.det()) > 1e-3, "warp_view: near-singular homography");
    const int h = scene.rgb.h, w = scene.rgb.w;

    WarpResult r;
    r.view = make_canvas(h, w);
    int64_t in_bounds = 0;
    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
            const auto p  = H.apply(double(x), double(y));
            const bool in = p[0] >= 0.0 && p[0] < double(w) && p[1] >= 0.0 && p[1] < double(h);
            if (in) {
                in_bounds++;
                for (int c = 0; c < 3; c++)
                    r.view.at(y, x, c) = bilinear_sample(scene.rgb, p[0], p[1], c);
            }
        }
    }
    r.overlap = double(in_bounds) / (double(h) * w);

    for (int y = 0; y < h; y += grid_step) {
        for (int x = 0; x < w; x += grid_step) {
            const auto p = H.apply(double(x), double(y));
            if (p[0] >= 0.0 && p[0] < double(w) && p[1] >= 0.0 && p[1] < double(h)) {
                Match mt;
                mt.lx   = float(x);
                mt.ly   = float(y);
                mt.rx   = float(p[0]);
                mt.ry   = float(p[1]);
                mt.conf = rng.uniform(0.7f, 1.0f);
                r.matches.push_back(mt);
            }
        }
    }
    return r;
}

inline bool overlap_filter(double fraction) {
    LPG_REQUIRE(fraction >= 0.0 && fraction <= 1.0, "overlap_filter: fraction outside [0,1]");
    return fraction >= 0.40 && fraction <= 0.70;
}

enum class MaskChoice { RandomMask, MatchingMask };

inline MaskChoice mask_mode_sampler(RngStream& rng, float matching_prob = 0.25f) {
    return rng.next_float() < matching_prob ? MaskChoice::MatchingMask
                                            : MaskChoice::RandomMask;
}

// --------------------------------------------------------------- train pairs

struct TrainPair {
    Canvas left;
    Canvas right;
    bool full_mask = true;
    GrayMap mask;  // stitched H x 2W when partial
    MatchSet matches;
    TaskKind task = TaskKind::Colorize;
    std::vector<int> caption;
    MaskChoice mask_mode_drawn = MaskChoice::RandomMask;
    bool used_matching_mask    = false;
};

inline Homography sample_refinpaint_homography(int h, int w, RngStream& rng) {
    const double tx    = rng.uniform(0.25f, 0.60f) * w;
    const double ty    = rng.uniform(-0.08f, 0.08f) * h;
    const double ang   = rng.uniform(-0.12f, 0.12f);
    const double scale = rng.uniform(0.95f, 1.08f);
    const double p1    = rng.uniform(-0.001f, 0.001f);
    const double p2    = rng.uniform(-0.001f, 0.001f);
    const double cx = w / 2.0, cy = h / 2.0;

    Homography recenter   = Homography::translation(-cx, -cy);
    Homography rot_scale;
    rot_scale.m = {scale * std::cos(ang), -scale * std::sin(ang), 0,
                   scale * std::sin(ang), scale * std::cos(ang),  0,
                   0,                     0,                      1};
    Homography persp;
    persp.m               = {1, 0, 0, 0, 1, 0, p1, p2, 1};
    Homography back = Homography::translation(cx + tx, cy + ty);
    return back.mul(rot_scale).mul(persp).mul(recenter);
}

inline TrainPair make_pair(const TaskSpec& spec, const Scene& scene, RngStream& rng) {
    TrainPair p;
    p.task    = spec.kind;
    p.caption = caption_tokens(spec.kind, scene);

    switch (spec.kind) {
        case TaskKind::Canny2Img:
            p.left  = replicate_gray(scene.edges);
            p.right = scene.rgb;
            break;
        case TaskKind::Depth2Img:
            p.left  = replicate_gray(scene.depth);
            p.right = scene.rgb;
            break;
        case TaskKind::Seg2Img:
            p.left  = scene.seg;
            p.right = scene.rgb;
            break;
        case TaskKind::Img2Canny:
            p.left  = scene.rgb;
            p.right = replicate_gray(scene.edges);
            break;
        case TaskKind::Img2Depth:
            p.left  = scene.rgb;
            p.right = replicate_gray(scene.depth);
            break;
        case TaskKind::Img2Seg:
            p.left  = scene.rgb;
            p.right = scene.seg;
            break;
        case TaskKind::Colorize:
        case TaskKind::Deblur:
        case TaskKind::Superres:
            p.left  = degrade(scene.rgb, spec.kind, spec, rng);
            p.right = scene.rgb;
            break;
        case TaskKind::Refinpaint: {
            const int h = scene.rgb.h, w = scene.rgb.w;
            WarpResult wr;
            bool kept = false;
            for (int attempt = 0; attempt < 200 && !kept; attempt++) {
                Homography H = sample_refinpaint_homography(h, w, rng);
                wr           = warp_view(scene, H, rng);
                kept         = overlap_filter(wr.overlap);
            }
            LPG_REQUIRE(kept, "make_pair: no homography passed the overlap filter");
            p.left            = wr.view;
            p.right           = scene.rgb;
            p.matches         = wr.matches;
            p.full_mask       = false;
            p.mask_mode_drawn = mask_mode_sampler(rng, spec.matching_mask_prob);
            std::optional<GrayMap> mm;
            if (p.mask_mode_drawn == MaskChoice::MatchingMask)
                mm = matching_mask(h, w, p.matches, rng);
            p.used_matching_mask = mm.has_value();
            p.mask = mm ? *mm : random_polygon_mask(h, w, rng);
            break;
        }
    }
    return p;
}

// builds the stitched model input for a pair
inline StitchedInput stitch_pair(const TrainPair& p) {
    return stitch(p.left, p.right,
                  p.full_mask ? MaskMode::full() : MaskMode::bitmap_mask(p.mask));
}

// ------------------------------------------------------------------ datasets

struct ManifestEntry {
    std::string left;
    std::string right;
    std::string mask;  // "full" or a png path relative to the manifest
    TaskKind task = TaskKind::Colorize;
    std::vector<int> caption;
    uint64_t seed = 0;
};

inline std::string build_dataset(const TaskSpec& spec, int count, uint64_t seed,
                                 const std::string& out_dir, int h = 32, int w = 32) {
    LPG_REQUIRE(count >= 1, "build_dataset: count must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoFault("cannot create dataset dir: " + out_dir);

    const std::string manifest_path = out_dir + "/manifest.jsonl";
    std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
    if (!mf) throw IoFault("cannot write manifest: " + manifest_path);

    for (int i = 0; i < count; i++) {
        const uint64_t scene_seed = derive_seed(seed, "scene", uint64_t(i));
        Scene scene               = gen_scene(scene_seed, h, w);
        RngStream pair_rng(derive_seed(seed, "pair", uint64_t(i)), "pair");
        TrainPair p = make_pair(spec, scene, pair_rng);

        char stem[32];
        std::snprintf(stem, sizeof(stem), "pair_%05d", i);
        const std::string left_name  = std::string(stem) + "_left.png";
        const std::string right_name = std::string(stem) + "_right.png";
        write_png_rgb8(out_dir + "/" + left_name, p.left);
        write_png_rgb8(out_dir + "/" + right_name, p.right);

        std::string mask_field = "full";
        if (!p.full_mask) {
            mask_field = std::string(stem) + "_mask.png";
            write_png_gray8(out_dir + "/" + mask_field, p.mask);
        }

        nlohmann::json line;
        line["left"]           = left_name;
        line["right"]          = right_name;
        line["mask"]           = mask_field;
        line["task"]           = task_name(p.task);
        line["caption_tokens"] = p.caption;
        line["seed"]           = scene_seed;
        mf << line.dump() << "\n";
    }
    mf.close();
    if (!mf) throw IoFault("manifest write failed: " + manifest_path);
    return manifest_path;
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoFault("cannot open manifest: " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        lineno++;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.left    = j.at("left").get<std::string>();
            e.right   = j.at("right").get<std::string>();
            e.mask    = j.at("mask").get<std::string>();
            e.task    = parse_task(j.at("task").get<std::string>());
            e.caption = j.at("caption_tokens").get<std::vector<int>>();
            e.seed    = j.at("seed").get<uint64_t>();
            entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw CorruptFile("manifest line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return entries;
}

// reloads one pair from disk; base_dir is the manifest's directory
inline TrainPair load_pair(const ManifestEntry& e, const std::string& base_dir) {
    TrainPair p;
    p.left    = read_png_rgb8(base_dir + "/" + e.left);
    p.right   = read_png_rgb8(base_dir + "/" + e.right);
    p.task    = e.task;
    p.caption = e.caption;
    if (e.mask == "full") {
        p.full_mask = true;
    } else {
        p.full_mask = false;
        p.mask      = read_png_gray8(base_dir + "/" + e.mask, /*binarize=*/true);
    }
    return p;
}

}  // namespace lpgflow

#endif  // LPGFLOW_TASKDATA_HPP
