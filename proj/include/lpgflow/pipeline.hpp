#ifndef LPGFLOW_PIPELINE_HPP
#define LPGFLOW_PIPELINE_HPP

// End-to-end runs: adapter/prompt training over a generated dataset,
// guided sampling from a checkpoint, and directory-level evaluation.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lpgflow/checkpoint.hpp"
#include "lpgflow/config.hpp"
#include "lpgflow/eval.hpp"
#include "lpgflow/flow.hpp"
#include "lpgflow/model.hpp"
#include "lpgflow/optim.hpp"
#include "lpgflow/taskdata.hpp"

namespace lpgflow {

// One training pair preprocessed into model-space buffers.
struct PreparedPair {
    Canvas stitched;             // [0,1] composite, kept for recompose
    GrayMap mask;
    Canvas z0_masked;            // model-space clean content, masked region zeroed
    std::vector<float> z0;       // model-space stitched canvas, flat
    std::vector<int> caption;
};

inline PreparedPair prepare_pair(const TrainPair& p) {
    const StitchedInput s = stitch_pair(p);
    PreparedPair out;
    out.stitched = s.canvas;
    out.mask     = s.mask;
    out.z0       = to_model_space(s.canvas);
    out.z0_masked = make_canvas(s.canvas.h, s.canvas.w);
    for (int y = 0; y < s.canvas.h; y++)
        for (int x = 0; x < s.canvas.w; x++)
            if (s.mask.at(y, x) == 0.0f)
                for (int c = 0; c < 3; c++)
                    out.z0_masked.at(y, x, c) = 2.0f * s.canvas.at(y, x, c) - 1.0f;
    out.caption = p.caption;
    return out;
}

struct TrainArtifacts {
    std::vector<double> losses;
    std::string base_init_path;
    std::string checkpoint_path;
    std::string adapter_path;
    std::string loss_csv_path;
};

inline TrainArtifacts train_run(const RunConfig& cfg, std::ostream* progress = nullptr) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.paths.out_dir, ec);
    if (ec) throw IoFault("train: cannot create " + cfg.paths.out_dir);

    const std::string manifest = cfg.paths.data_dir + "/" + cfg.paths.manifest;
    const auto entries         = load_manifest(manifest);
    if (entries.empty()) throw NoData("train: empty manifest " + manifest);

    std::vector<PreparedPair> pairs;
    pairs.reserve(entries.size());
    for (const auto& e : entries) pairs.push_back(prepare_pair(load_pair(e, cfg.paths.data_dir)));
    const int canvas_h  = pairs[0].stitched.h;
    const int canvas_w2 = pairs[0].stitched.w;

    VelocityModel model(cfg.model, cfg.seed);
    const nlohmann::json cfg_json = run_config_to_json(cfg);
    nlohmann::json meta;
    meta["config"] = cfg_json;
    meta["step"]   = 0;

    TrainArtifacts art;
    art.base_init_path = cfg.paths.out_dir + "/base_init.lpgf";
    save_checkpoint(model_checkpoint(model, meta), art.base_init_path);

    const bool prompt_mode = cfg.tuning_mode == "prompt";
    LoraAdapter adapter;
    PromptTokens prompt;
    std::vector<Tensor> trainable;
    if (prompt_mode) {
        const std::vector<int> description{task_token(parse_task(cfg.task.kind))};
        prompt = init_prompt_tokens(description, model.param("tokens.table"),
                                    cfg.model.num_prompt_tokens);
        trainable.push_back(prompt.tokens);
    } else {
        adapter = model.make_adapter(cfg.seed, cfg.task.kind);
        for (const auto& [name, _] : model.lora_sites()) {
            trainable.push_back(adapter.sites.at(name).a);
            trainable.push_back(adapter.sites.at(name).b);
        }
    }

    AdamWConfig ocfg;
    ocfg.lr           = float(cfg.optimizer.lr);
    ocfg.beta1        = float(cfg.optimizer.beta1);
    ocfg.beta2        = float(cfg.optimizer.beta2);
    ocfg.weight_decay = float(cfg.optimizer.weight_decay);
    AdamW opt(trainable, ocfg);

    RngStream rng(cfg.seed, "train");
    const size_t elems = size_t(canvas_h) * canvas_w2 * 3;
    std::vector<float> eps(elems);

    art.loss_csv_path = cfg.paths.out_dir + "/loss.csv";
    std::ofstream csv(art.loss_csv_path, std::ios::trunc);
    if (!csv.good()) throw IoFault("train: cannot write " + art.loss_csv_path);
    csv << "step,loss\n";

    for (int step = 0; step < cfg.optimizer.train_steps; step++) {
        opt.zero_grad();
        double batch_loss = 0.0;
        for (int b = 0; b < cfg.optimizer.batch_size; b++) {
            const auto& pp = pairs[size_t(rng.next_int(0, int64_t(pairs.size()) - 1))];
            const float t  = rng.next_float();
            for (auto& v : eps) v = rng.next_normal();
            FlowSample fs = interpolate(pp.z0, eps, t);

            const Canvas zt = vec_to_canvas(fs.z_t, canvas_h, canvas_w2);
            Tensor v_pred   = model.forward_tokens(zt, pp.z0_masked, pp.mask, t, pp.caption,
                                                   prompt_mode ? nullptr : &adapter,
                                                   prompt_mode ? &prompt : nullptr);
            std::vector<float> target_flat(elems);
            for (size_t i = 0; i < elems; i++) target_flat[i] = eps[i] - pp.z0[i];
            const std::vector<float> target_tok =
                canvas_to_tokens(vec_to_canvas(target_flat, canvas_h, canvas_w2),
                                 cfg.model.patch_size);
            Tensor target = Tensor::from_vec(target_tok, v_pred.rows(), v_pred.cols(), false);

            Tensor loss = rf_loss_graph(v_pred, target);
            scale(loss, 1.0f / float(cfg.optimizer.batch_size)).backward();
            batch_loss += double(loss.item());
        }
        batch_loss /= double(cfg.optimizer.batch_size);
        if (!is_finite(float(batch_loss)))
            throw NumericFault("train: non-finite batch loss", step);
        opt.step();
        art.losses.push_back(batch_loss);

        char line[64];
        std::snprintf(line, sizeof(line), "%d,%.9g\n", step, batch_loss);
        csv << line;
        if (progress && (step % 100 == 0 || step + 1 == cfg.optimizer.train_steps))
            (*progress) << "step " << step << " loss " << batch_loss << "\n";
    }
    csv.close();
    if (!csv.good()) throw IoFault("train: failed writing " + art.loss_csv_path);

    meta["step"]        = cfg.optimizer.train_steps;
    art.checkpoint_path = cfg.paths.out_dir + "/checkpoint.lpgf";
    save_checkpoint(model_checkpoint(model, meta), art.checkpoint_path);

    nlohmann::json ameta;
    ameta["config_digest"] = config_digest(cfg_json);
    ameta["step"]          = cfg.optimizer.train_steps;
    if (prompt_mode) {
        art.adapter_path = cfg.paths.out_dir + "/prompt.lpgf";
        ameta["task"]    = cfg.task.kind;
        save_checkpoint(prompt_checkpoint(prompt, ameta), art.adapter_path);
    } else {
        art.adapter_path = cfg.paths.out_dir + "/adapter.lpgf";
        save_checkpoint(adapter_checkpoint(adapter, ameta), art.adapter_path);
    }
    return art;
}

// ------------------------------------------------------------------ sample

struct SampleOptions {
    std::string checkpoint_path;
    std::vector<std::string> adapter_paths;
    std::string prompt_path;       // optional prompt-token checkpoint
    std::string left_png;
    std::string out_png;
    std::vector<int> caption;      // defaults to the adapter task token
    int steps             = 50;
    uint64_t seed         = 0;
    std::string attn_dir;          // when set, dump heatmaps every attn_interval
    int attn_interval     = 10;
};

struct SampleResult {
    Canvas right;
    std::vector<AttnRecord> records;
    std::vector<std::string> heatmap_paths;
};

inline ModelConfig model_config_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("config"))
        throw CorruptFile("checkpoint: missing config echo in header");
    return run_config_from_json(ckpt.meta.at("config")).model;
}

inline SampleResult sample_run(const SampleOptions& opt) {
    LPG_REQUIRE(opt.steps >= 1, "sample: steps must be >= 1");
    LPG_REQUIRE(opt.attn_interval >= 1, "sample: attn interval must be >= 1");

    const Checkpoint base_ckpt = load_checkpoint(opt.checkpoint_path);
    const ModelConfig mcfg     = model_config_from_checkpoint(base_ckpt);
    VelocityModel model(mcfg, 0);
    load_model_weights(model, base_ckpt);

    LoraAdapter merged;
    bool has_adapter = false;
    if (!opt.adapter_paths.empty()) {
        std::vector<LoraAdapter> adapters;
        for (const auto& path : opt.adapter_paths)
            adapters.push_back(adapter_from_checkpoint(load_checkpoint(path)));
        merged      = adapters.size() == 1 ? adapters[0] : lora_merge(adapters);
        has_adapter = true;
        for (const auto& [name, dims] : model.lora_sites()) {
            auto it = merged.sites.find(name);
            if (it == merged.sites.end()) continue;
            if (it->second.d_in() != dims.first || it->second.d_out() != dims.second)
                throw DimMismatch("sample: adapter does not fit base at site " + name);
        }
    }
    PromptTokens prompt;
    bool has_prompt = false;
    if (!opt.prompt_path.empty()) {
        prompt     = prompt_from_checkpoint(load_checkpoint(opt.prompt_path));
        has_prompt = true;
    }

    const Canvas left = read_png_rgb8(opt.left_png);
    const Canvas blank = make_canvas(left.h, left.w);
    const StitchedInput stitched = stitch(left, blank, MaskMode::full());

    std::vector<int> caption = opt.caption;
    if (caption.empty()) {
        if (has_adapter && !merged.task.empty()) {
            // merged names join with '+'; condition on every component task
            std::string cur;
            for (char ch : merged.task + "+") {
                if (ch == '+') {
                    if (!cur.empty()) caption.push_back(task_token(parse_task(cur)));
                    cur.clear();
                } else {
                    cur += ch;
                }
            }
        }
        LPG_REQUIRE(!caption.empty(), "sample: no caption tokens and no adapter task");
    }

    PreparedPair pp;
    pp.stitched  = stitched.canvas;
    pp.mask      = stitched.mask;
    pp.caption   = caption;
    pp.z0_masked = make_canvas(stitched.canvas.h, stitched.canvas.w);
    for (int y = 0; y < stitched.canvas.h; y++)
        for (int x = 0; x < stitched.canvas.w; x++)
            if (stitched.mask.at(y, x) == 0.0f)
                for (int c = 0; c < 3; c++)
                    pp.z0_masked.at(y, x, c) = 2.0f * stitched.canvas.at(y, x, c) - 1.0f;

    const int h = stitched.canvas.h, w2 = stitched.canvas.w;
    RngStream noise_rng(opt.seed, "sample-noise");
    std::vector<float> z(size_t(h) * w2 * 3);
    for (auto& v : z) v = noise_rng.next_normal();

    SampleResult result;
    const bool dump = !opt.attn_dir.empty();
    const int tr = h / mcfg.patch_size, tc = w2 / mcfg.patch_size;

    auto velocity = [&](const std::vector<float>& zv, float t, int step) {
        const Canvas zt = vec_to_canvas(zv, h, w2);
        std::vector<AttnProbs> probs;
        const bool capture = dump && step % opt.attn_interval == 0;
        Canvas v = model.predict_velocity(zt, pp.z0_masked, pp.mask, t, pp.caption,
                                          has_adapter ? &merged : nullptr,
                                          has_prompt ? &prompt : nullptr,
                                          capture ? &probs : nullptr);
        if (capture) {
            const int n_cond = int(caption.size()) + (has_prompt ? prompt.tokens.rows() : 0);
            for (int layer = 0; layer < mcfg.num_layers; layer++)
                result.records.push_back(
                    {step, layer, left_mass_map(probs[layer], n_cond, tr, tc)});
        }
        return v.px;
    };

    const std::vector<float> schedule = make_schedule(opt.steps);
    const std::vector<float> z_final  = euler_sample(velocity, z, schedule);

    const Canvas generated = from_model_space(z_final, h, w2);
    const Canvas composed  = recompose(generated, stitched.canvas, stitched.mask);
    result.right           = crop_right(composed);

    if (!opt.out_png.empty()) write_png_rgb8(opt.out_png, result.right);
    if (dump && !result.records.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(opt.attn_dir, ec);
        if (ec) throw IoFault("sample: cannot create " + opt.attn_dir);
        result.heatmap_paths = write_attention_heatmaps(result.records, opt.attn_dir, "attn",
                                                        mcfg.patch_size);
    }
    return result;
}

// -------------------------------------------------------------------- eval

inline MetricReport eval_run(const std::string& pred_dir, const std::string& gt_dir,
                             const std::vector<std::string>& metrics) {
    namespace fs = std::filesystem;
    for (const auto& m : metrics)
        LPG_REQUIRE(m == "psnr" || m == "ssim" || m == "edge", "eval: unknown metric " + m);
    LPG_REQUIRE(!metrics.empty(), "eval: no metrics requested");

    auto list_pngs = [](const std::string& dir) {
        std::vector<std::string> names;
        std::error_code ec;
        fs::directory_iterator it(dir, ec), end;
        if (ec) throw IoFault("eval: cannot read directory " + dir);
        for (; it != end; ++it)
            if (it->path().extension() == ".png") names.push_back(it->path().filename().string());
        std::sort(names.begin(), names.end());
        return names;
    };

    const auto pred_names = list_pngs(pred_dir);
    const auto gt_names   = list_pngs(gt_dir);

    MetricReport report;
    report.metrics = metrics;
    const bool want_psnr = std::count(metrics.begin(), metrics.end(), "psnr") > 0;
    const bool want_ssim = std::count(metrics.begin(), metrics.end(), "ssim") > 0;
    const bool want_edge = std::count(metrics.begin(), metrics.end(), "edge") > 0;

    std::vector<std::string> shared;
    std::set_intersection(pred_names.begin(), pred_names.end(), gt_names.begin(),
                          gt_names.end(), std::back_inserter(shared));
    std::set_symmetric_difference(pred_names.begin(), pred_names.end(), gt_names.begin(),
                                  gt_names.end(), std::back_inserter(report.skipped));

    for (const auto& name : shared) {
        const Canvas pred = read_png_rgb8(pred_dir + "/" + name);
        const Canvas gt   = read_png_rgb8(gt_dir + "/" + name);
        if (pred.h != gt.h || pred.w != gt.w) {
            report.skipped.push_back(name);
            continue;
        }
        ImageMetrics m;
        m.name = name;
        if (want_psnr) m.psnr = psnr(pred, gt);
        if (want_ssim) m.ssim = ssim(pred, gt);
        if (want_edge) m.edge_alignment = edge_alignment(pred, sobel_edges(gt));
        report.per_image.push_back(m);
    }
    if (report.per_image.empty()) throw NoData("eval: no evaluable image pairs");
    return report;
}

}  // namespace lpgflow

#endif
