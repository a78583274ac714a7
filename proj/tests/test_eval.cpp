#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "lpgflow/eval.hpp"
#include "lpgflow/png_io.hpp"
#include "lpgflow/rng.hpp"
#include "lpgflow/scene.hpp"

using namespace lpgflow;
namespace fs = std::filesystem;

namespace {

Canvas flat_canvas(int h, int w, float v) {
    Canvas c = make_canvas(h, w);
    for (auto& p : c.px) p = v;
    return c;
}

Canvas add_noise(const Canvas& c, float sigma, uint64_t seed) {
    Canvas out = c;
    RngStream rng(seed, "noise");
    for (auto& p : out.px) p = clamp01(p + sigma * rng.next_normal());
    return out;
}

Canvas step_canvas(int h, int w, int split) {
    Canvas c = make_canvas(h, w);
    for (int y = 0; y < h; y++)
        for (int x = split; x < w; x++)
            for (int ch = 0; ch < 3; ch++) c.at(y, x, ch) = 1.0f;
    return c;
}

fs::path fresh_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("psnr of a half-offset pair is the closed-form 6.0206 dB") {
    Canvas a = flat_canvas(16, 16, 0.0f);
    Canvas b = flat_canvas(16, 16, 0.5f);
    // mse 0.25 -> 10*log10(1/0.25)
    REQUIRE_THAT(psnr(a, b), Catch::Matchers::WithinAbs(10.0 * std::log10(4.0), 1e-3));
    REQUIRE(psnr(a, b) == psnr(b, a));
    REQUIRE(psnr(a, a) == 99.0);
    REQUIRE(psnr(b, b) == 99.0);
    REQUIRE_THROWS_AS(psnr(a, flat_canvas(16, 8, 0.0f)), ContractViolation);
}

TEST_CASE("psnr drops monotonically as noise grows") {
    const Canvas base = gen_scene(9, 32, 32).rgb;
    double prev = psnr(base, base);
    for (float sigma : {0.01f, 0.05f, 0.1f}) {
        const double cur = psnr(base, add_noise(base, sigma, 9));
        REQUIRE(cur < prev);
        REQUIRE(cur > 0.0);
        prev = cur;
    }
}

TEST_CASE("ssim is exactly one on identical images") {
    const Canvas scene = gen_scene(10, 32, 32).rgb;
    REQUIRE_THAT(ssim(scene, scene), Catch::Matchers::WithinAbs(1.0, 1e-9));
    const Canvas flat = flat_canvas(16, 16, 0.3f);
    REQUIRE_THAT(ssim(flat, flat), Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("ssim of black against white collapses to the stabilizer ratio") {
    Canvas black = flat_canvas(16, 16, 0.0f);
    Canvas white = flat_canvas(16, 16, 1.0f);
    // constant windows: structure term is c2/c2, luminance term c1/(1+c1)
    const double want = 1e-4 / (1.0 + 1e-4);
    REQUIRE_THAT(ssim(black, white), Catch::Matchers::WithinAbs(want, 1e-9));
    REQUIRE(ssim(black, white) < 0.01);
}

TEST_CASE("ssim is symmetric and bounded by the identity score") {
    const Canvas a = gen_scene(11, 32, 32).rgb;
    const Canvas b = add_noise(a, 0.1f, 11);
    REQUIRE(ssim(a, b) == ssim(b, a));
    REQUIRE(ssim(a, b) < 1.0);
    REQUIRE(ssim(a, b) > 0.0);
    REQUIRE_THROWS_AS(ssim(flat_canvas(7, 16, 0.0f), flat_canvas(7, 16, 0.0f)),
                      ContractViolation);
    REQUIRE_THROWS_AS(ssim(a, flat_canvas(32, 16, 0.0f)), ContractViolation);
}

TEST_CASE("edge alignment scores a rendered scene against its own edges") {
    const Scene s = gen_scene(12, 32, 32);
    REQUIRE(edge_alignment(s.rgb, s.edges) >= 0.9);
    REQUIRE(edge_alignment(flat_canvas(32, 32, 0.5f), s.edges) == 0.0);
    GrayMap blank = make_gray(32, 32);
    REQUIRE(edge_alignment(s.rgb, blank) == 0.0);
    REQUIRE_THROWS_AS(edge_alignment(s.rgb, make_gray(16, 32)), ContractViolation);
}

TEST_CASE("edge alignment tolerates a one-pixel shift but not four") {
    const Canvas gen = step_canvas(16, 16, 8);
    const GrayMap near = sobel_edges(step_canvas(16, 16, 9));
    REQUIRE(edge_alignment(gen, near) == 1.0);
    const GrayMap far = sobel_edges(step_canvas(16, 16, 12));
    REQUIRE(edge_alignment(gen, far) == 0.0);
}

TEST_CASE("metric aggregates match hand-computed mean and deviation") {
    MetricReport r;
    r.metrics = {"psnr", "ssim"};
    for (double v : {1.0, 2.0, 3.0}) {
        ImageMetrics m;
        m.name = "img" + std::to_string(int(v));
        m.psnr = v;
        m.ssim = 0.5;
        r.per_image.push_back(m);
    }
    REQUIRE_THAT(metric_mean(r, &ImageMetrics::psnr), Catch::Matchers::WithinAbs(2.0, 1e-9));
    REQUIRE_THAT(metric_std(r, &ImageMetrics::psnr),
                 Catch::Matchers::WithinAbs(std::sqrt(2.0 / 3.0), 1e-9));
    REQUIRE_THAT(metric_std(r, &ImageMetrics::ssim), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("the metric report serializes only the requested columns") {
    MetricReport r;
    r.metrics = {"psnr"};
    ImageMetrics m;
    m.name           = "a.png";
    m.psnr           = 30.0;
    m.ssim           = 0.9;
    m.edge_alignment = 0.8;
    r.per_image.push_back(m);
    r.skipped.push_back("b.png");

    const nlohmann::json j = report_to_json(r, "deadbeefdeadbeef");
    REQUIRE(j["per_image"].size() == 1);
    REQUIRE(j["per_image"][0]["name"] == "a.png");
    REQUIRE(j["per_image"][0]["psnr"] == 30.0);
    REQUIRE_FALSE(j["per_image"][0].contains("ssim"));
    REQUIRE(j["aggregate"]["count"] == 1);
    REQUIRE(j["aggregate"]["psnr_mean"] == 30.0);
    REQUIRE_FALSE(j["aggregate"].contains("ssim_mean"));
    REQUIRE(j["skipped"] == nlohmann::json::array({"b.png"}));
    REQUIRE(j["config_digest"] == "deadbeefdeadbeef");
}

TEST_CASE("attention heatmaps land on disk max-normalized") {
    const fs::path dir = fresh_dir("lpg_eval_heatmaps");
    std::vector<AttnRecord> recs;
    for (int step : {0, 10})
        for (int layer : {0, 1}) {
            AttnRecord r;
            r.step  = step;
            r.layer = layer;
            r.mass  = make_gray(4, 4);
            for (int y = 0; y < 4; y++)
                for (int x = 0; x < 4; x++)
                    r.mass.at(y, x) = 0.1f + 0.05f * float(y * 4 + x) + 0.01f * float(layer);
            recs.push_back(r);
        }

    const auto paths = write_attention_heatmaps(recs, dir.string(), "attn", 2);
    REQUIRE(paths.size() == 4);
    REQUIRE(fs::path(paths[0]).filename() == "attn_step000_layer00.png");
    REQUIRE(fs::path(paths[3]).filename() == "attn_step010_layer01.png");
    for (const auto& p : paths) REQUIRE(fs::exists(p));

    const GrayMap img = read_png_gray8(paths[0]);
    REQUIRE(img.h == 8);
    REQUIRE(img.w == 8);
    float peak = 0.0f;
    for (float v : img.v) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
        peak = std::max(peak, v);
    }
    REQUIRE(peak == 1.0f);  // brightest cell saturates after normalization
    // upscale repeats each cell as a 2x2 block
    REQUIRE(img.at(0, 0) == img.at(1, 1));
    REQUIRE(img.at(0, 0) != img.at(0, 2));

    // a uniform map normalizes to solid white, an empty one stays black
    AttnRecord uni;
    uni.step = 1;
    uni.mass = make_gray(4, 4);
    for (auto& v : uni.mass.v) v = 0.25f;
    AttnRecord zero;
    zero.step = 2;
    zero.mass = make_gray(4, 4);
    const auto extra = write_attention_heatmaps({uni, zero}, dir.string());
    const GrayMap u = read_png_gray8(extra[0]);
    for (float v : u.v) REQUIRE(v == 1.0f);
    const GrayMap z = read_png_gray8(extra[1]);
    for (float v : z.v) REQUIRE(v == 0.0f);

    REQUIRE_THROWS_AS(write_attention_heatmaps({}, dir.string()), ContractViolation);
    fs::remove_all(dir);
}
