// lpgflow: paired-canvas datasets, adapter training, guided sampling,
// metric reports and checkpoint inspection behind one binary.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lpgflow/lpgflow.hpp"

using namespace lpgflow;

namespace {

std::optional<uint64_t> seed_flag(const CLI::Option* opt, uint64_t value) {
    if (opt != nullptr && opt->count() > 0) return value;
    return std::nullopt;
}

int run_datagen(const std::string& task, int count, uint64_t seed, const std::string& out_dir,
                int height, int width, TaskSpec spec) {
    spec.kind = parse_task(task);
    const std::string manifest = build_dataset(spec, count, seed, out_dir, height, width);
    std::cout << manifest << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::optional<uint64_t> seed) {
    nlohmann::json j = config_path.empty() ? nlohmann::json::object()
                                           : load_config_json(config_path);
    for (const auto& assignment : overrides) apply_override(j, assignment);
    RunConfig cfg = run_config_from_json(j);
    cfg.seed      = resolve_seed(cfg.seed, seed);

    const TrainArtifacts art = train_run(cfg, &std::cerr);
    std::cout << "base_init " << art.base_init_path << "\n"
              << "checkpoint " << art.checkpoint_path << "\n"
              << "adapter " << art.adapter_path << "\n"
              << "loss_csv " << art.loss_csv_path << "\n"
              << "final_loss " << (art.losses.empty() ? 0.0 : art.losses.back()) << "\n";
    return 0;
}

int run_sample(SampleOptions opt, std::optional<uint64_t> seed) {
    opt.seed = resolve_seed(opt.seed, seed);
    const SampleResult res = sample_run(opt);
    std::cout << opt.out_png << "\n";
    for (const auto& p : res.heatmap_paths) std::cerr << "attn " << p << "\n";
    return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::vector<std::string>& metrics, const std::string& out_path) {
    const MetricReport report = eval_run(pred_dir, gt_dir, metrics);
    const std::string text    = report_to_json(report).dump(2) + "\n";
    if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f.good()) throw IoFault("eval: cannot write " + out_path);
        f << text;
    }
    std::cout << text;
    return 0;
}

int run_inspect(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    int64_t values        = 0;
    for (const auto& [_, t] : ckpt.tensors) values += int64_t(t.rows) * t.cols;
    std::cout << "kind " << ckpt.kind << "\n"
              << "version " << kCheckpointVersion << "\n"
              << "meta " << ckpt.meta.dump() << "\n"
              << "tensors " << ckpt.tensors.size() << " totaling " << values << " values\n";
    for (const auto& [name, t] : ckpt.tensors)
        std::cout << "  " << name << " [" << t.rows << " x " << t.cols << "]\n";
    return 0;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"left-prompt guided rectified-flow toolkit"};
    app.require_subcommand(1);

    auto* datagen = app.add_subcommand("datagen", "render a paired dataset plus manifest");
    std::string dg_task = "colorize", dg_out = "data";
    int dg_count = 10, dg_height = 32, dg_width = 32;
    uint64_t dg_seed = 0;
    TaskSpec dg_spec;
    datagen->add_option("--task", dg_task, "task kind, e.g. colorize or canny2img");
    datagen->add_option("--count", dg_count, "number of training pairs");
    auto* dg_seed_opt = datagen->add_option("--seed", dg_seed, "generation seed");
    datagen->add_option("--out", dg_out, "output directory");
    datagen->add_option("--height", dg_height, "canvas height in pixels");
    datagen->add_option("--width", dg_width, "single-canvas width in pixels");
    datagen->add_option("--sr-factor", dg_spec.sr_factor, "downscale factor for superres");
    datagen->add_option("--noise-sigma", dg_spec.noise_sigma, "noise level for deblur");
    datagen->add_option("--matching-mask-prob", dg_spec.matching_mask_prob,
                        "chance of a matching mask for refinpaint");

    auto* train = app.add_subcommand("train", "fit an adapter or prompt tokens on a dataset");
    std::string tr_config;
    std::vector<std::string> tr_sets;
    uint64_t tr_seed = 0;
    train->add_option("--config", tr_config, "run config JSON file");
    train->add_option("--set", tr_sets, "dotted config override, key.path=value");
    auto* tr_seed_opt = train->add_option("--seed", tr_seed, "override the config seed");

    auto* sample = app.add_subcommand("sample", "generate the right canvas from a left prompt");
    SampleOptions so;
    uint64_t sm_seed = 0;
    sample->add_option("--checkpoint", so.checkpoint_path, "base model checkpoint")
        ->required();
    sample->add_option("--adapter", so.adapter_paths,
                       "adapter checkpoint, repeat to merge several");
    sample->add_option("--prompt", so.prompt_path, "prompt-token checkpoint");
    sample->add_option("--left", so.left_png, "left reference image")->required();
    sample->add_option("--out", so.out_png, "output PNG path")->required();
    sample->add_option("--caption", so.caption, "condition token ids")->delimiter(',');
    sample->add_option("--steps", so.steps, "sampling steps");
    auto* sm_seed_opt = sample->add_option("--seed", sm_seed, "noise seed");
    sample->add_option("--dump-attn", so.attn_dir, "directory for attention heatmaps");
    sample->add_option("--attn-interval", so.attn_interval, "steps between heatmap dumps");

    auto* eval = app.add_subcommand("eval", "score predictions against references");
    std::string ev_pred, ev_gt, ev_out;
    std::vector<std::string> ev_metrics{"psnr", "ssim"};
    eval->add_option("--pred", ev_pred, "directory of predicted PNGs")->required();
    eval->add_option("--gt", ev_gt, "directory of reference PNGs")->required();
    eval->add_option("--metrics", ev_metrics, "subset of psnr,ssim,edge")->delimiter(',');
    eval->add_option("--out", ev_out, "also write the JSON report here");

    auto* inspect = app.add_subcommand("inspect-ckpt", "print a checkpoint header");
    std::string in_path;
    inspect->add_option("path", in_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (datagen->parsed())
        return run_datagen(dg_task, dg_count, resolve_seed(dg_seed, seed_flag(dg_seed_opt, dg_seed)),
                           dg_out, dg_height, dg_width, dg_spec);
    if (train->parsed()) return run_train(tr_config, tr_sets, seed_flag(tr_seed_opt, tr_seed));
    if (sample->parsed()) return run_sample(so, seed_flag(sm_seed_opt, sm_seed));
    if (eval->parsed()) return run_eval(ev_pred, ev_gt, ev_metrics, ev_out);
    if (inspect->parsed()) return run_inspect(in_path);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericFault& e) {
        std::cerr << "error: " << e.what();
        if (e.step >= 0) std::cerr << " (step " << e.step << ")";
        std::cerr << "\n";
        return 3;
    } catch (const DimMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const NoData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const CorruptFile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
