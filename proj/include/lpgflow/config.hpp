#ifndef LPGFLOW_CONFIG_HPP
#define LPGFLOW_CONFIG_HPP

// Run configuration: one strict JSON document. Missing keys fall back to
// defaults, unknown keys are rejected, dotted --set overrides are applied
// to the JSON before parsing.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgflow/model.hpp"
#include "lpgflow/rng.hpp"
#include "lpgflow/taskdata.hpp"

namespace lpgflow {

struct OptimizerConfig {
    double lr           = 1e-4;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double weight_decay = 0.01;
    int batch_size      = 16;
    int train_steps     = 2000;
};

struct FlowConfig {
    int sample_steps       = 50;
    int attn_dump_interval = 10;
    std::string t_sampling = "uniform";
};

struct TaskConfig {
    std::string kind          = "colorize";
    int sr_factor             = 4;
    double noise_sigma        = 0.1;
    double matching_mask_prob = 0.25;
    int pair_count            = 10;
};

struct PathsConfig {
    std::string data_dir = "data";
    std::string out_dir  = "out";
    std::string manifest = "manifest.jsonl";
};

struct RunConfig {
    ModelConfig model;
    OptimizerConfig optimizer;
    FlowConfig flow;
    TaskConfig task;
    PathsConfig paths;
    std::string tuning_mode = "lora";
    uint64_t seed           = 0;

    TaskSpec task_spec() const {
        TaskSpec s;
        s.kind               = parse_task(task.kind);
        s.sr_factor          = task.sr_factor;
        s.noise_sigma        = float(task.noise_sigma);
        s.matching_mask_prob = float(task.matching_mask_prob);
        return s;
    }

    void validate() const {
        model.validate();
        LPG_REQUIRE(optimizer.lr > 0.0, "config: optimizer.lr must be positive");
        LPG_REQUIRE(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "config: beta1 range");
        LPG_REQUIRE(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "config: beta2 range");
        LPG_REQUIRE(optimizer.weight_decay >= 0.0, "config: weight_decay must be >= 0");
        LPG_REQUIRE(optimizer.batch_size >= 1, "config: batch_size must be >= 1");
        LPG_REQUIRE(optimizer.train_steps >= 1, "config: train_steps must be >= 1");
        LPG_REQUIRE(flow.sample_steps >= 1, "config: sample_steps must be >= 1");
        LPG_REQUIRE(flow.attn_dump_interval >= 1, "config: attn_dump_interval must be >= 1");
        LPG_REQUIRE(flow.t_sampling == "uniform", "config: unknown t_sampling mode");
        parse_task(task.kind);
        LPG_REQUIRE(task.sr_factor >= 1, "config: sr_factor must be >= 1");
        LPG_REQUIRE(task.noise_sigma >= 0.0, "config: noise_sigma must be >= 0");
        LPG_REQUIRE(task.matching_mask_prob >= 0.0 && task.matching_mask_prob <= 1.0,
                    "config: matching_mask_prob range");
        LPG_REQUIRE(task.pair_count >= 1, "config: pair_count must be >= 1");
        LPG_REQUIRE(tuning_mode == "lora" || tuning_mode == "prompt",
                    "config: tuning_mode must be lora or prompt");
    }
};

namespace detail {

template <typename T>
void get_field(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ContractViolation(std::string("config: bad value for key '") + key + "'");
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& scope,
                           const std::vector<std::string>& allowed) {
    LPG_REQUIRE(j.is_object(), "config: '" + scope + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == key;
        if (!ok)
            throw ContractViolation("config: unknown key '" +
                                    (scope.empty() ? key : scope + "." + key) + "'");
    }
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["model"] = {{"patch_size", c.model.patch_size},
                  {"hidden_dim", c.model.hidden_dim},
                  {"num_layers", c.model.num_layers},
                  {"num_heads", c.model.num_heads},
                  {"in_channels", c.model.in_channels},
                  {"token_vocab_size", c.model.token_vocab_size},
                  {"num_prompt_tokens", c.model.num_prompt_tokens},
                  {"lora_rank", c.model.lora_rank},
                  {"lora_scale", c.model.lora_scale}};
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"batch_size", c.optimizer.batch_size},
                      {"train_steps", c.optimizer.train_steps}};
    j["flow"] = {{"sample_steps", c.flow.sample_steps},
                 {"attn_dump_interval", c.flow.attn_dump_interval},
                 {"t_sampling", c.flow.t_sampling}};
    j["task"] = {{"kind", c.task.kind},
                 {"sr_factor", c.task.sr_factor},
                 {"noise_sigma", c.task.noise_sigma},
                 {"matching_mask_prob", c.task.matching_mask_prob},
                 {"pair_count", c.task.pair_count}};
    j["paths"] = {{"data_dir", c.paths.data_dir},
                  {"out_dir", c.paths.out_dir},
                  {"manifest", c.paths.manifest}};
    j["tuning_mode"] = c.tuning_mode;
    j["seed"]        = c.seed;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(
        j, "", {"model", "optimizer", "flow", "task", "paths", "tuning_mode", "seed"});
    RunConfig c;
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, "model",
                               {"patch_size", "hidden_dim", "num_layers", "num_heads",
                                "in_channels", "token_vocab_size", "num_prompt_tokens",
                                "lora_rank", "lora_scale"});
        detail::get_field(m, "patch_size", c.model.patch_size);
        detail::get_field(m, "hidden_dim", c.model.hidden_dim);
        detail::get_field(m, "num_layers", c.model.num_layers);
        detail::get_field(m, "num_heads", c.model.num_heads);
        detail::get_field(m, "in_channels", c.model.in_channels);
        detail::get_field(m, "token_vocab_size", c.model.token_vocab_size);
        detail::get_field(m, "num_prompt_tokens", c.model.num_prompt_tokens);
        detail::get_field(m, "lora_rank", c.model.lora_rank);
        detail::get_field(m, "lora_scale", c.model.lora_scale);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::reject_unknown(
            o, "optimizer", {"lr", "beta1", "beta2", "weight_decay", "batch_size", "train_steps"});
        detail::get_field(o, "lr", c.optimizer.lr);
        detail::get_field(o, "beta1", c.optimizer.beta1);
        detail::get_field(o, "beta2", c.optimizer.beta2);
        detail::get_field(o, "weight_decay", c.optimizer.weight_decay);
        detail::get_field(o, "batch_size", c.optimizer.batch_size);
        detail::get_field(o, "train_steps", c.optimizer.train_steps);
    }
    if (j.contains("flow")) {
        const auto& f = j.at("flow");
        detail::reject_unknown(f, "flow", {"sample_steps", "attn_dump_interval", "t_sampling"});
        detail::get_field(f, "sample_steps", c.flow.sample_steps);
        detail::get_field(f, "attn_dump_interval", c.flow.attn_dump_interval);
        detail::get_field(f, "t_sampling", c.flow.t_sampling);
    }
    if (j.contains("task")) {
        const auto& t = j.at("task");
        detail::reject_unknown(
            t, "task", {"kind", "sr_factor", "noise_sigma", "matching_mask_prob", "pair_count"});
        detail::get_field(t, "kind", c.task.kind);
        detail::get_field(t, "sr_factor", c.task.sr_factor);
        detail::get_field(t, "noise_sigma", c.task.noise_sigma);
        detail::get_field(t, "matching_mask_prob", c.task.matching_mask_prob);
        detail::get_field(t, "pair_count", c.task.pair_count);
    }
    if (j.contains("paths")) {
        const auto& pj = j.at("paths");
        detail::reject_unknown(pj, "paths", {"data_dir", "out_dir", "manifest"});
        detail::get_field(pj, "data_dir", c.paths.data_dir);
        detail::get_field(pj, "out_dir", c.paths.out_dir);
        detail::get_field(pj, "manifest", c.paths.manifest);
    }
    detail::get_field(j, "tuning_mode", c.tuning_mode);
    detail::get_field(j, "seed", c.seed);
    c.validate();
    return c;
}

inline nlohmann::json parse_config_text(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("config: invalid JSON: ") + e.what());
    }
}

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw IoFault("config: cannot open " + path);
    return parse_config_text(std::string(std::istreambuf_iterator<char>(f), {}));
}

// --set model.lora_rank=16 style override, applied to the raw JSON
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    LPG_REQUIRE(eq != std::string::npos && eq > 0,
                "config: override must look like key.path=value");
    const std::string path  = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    nlohmann::json* cur = &j;
    size_t start        = 0;
    while (true) {
        const size_t dot      = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos
                                                       ? std::string::npos
                                                       : dot - start);
        LPG_REQUIRE(!key.empty(), "config: empty key segment in override");
        if (dot == std::string::npos) {
            nlohmann::json parsed;
            try {
                parsed = nlohmann::json::parse(value);
            } catch (const nlohmann::json::exception&) {
                parsed = value;  // unquoted strings pass through verbatim
            }
            (*cur)[key] = parsed;
            return;
        }
        cur   = &(*cur)[key];
        start = dot + 1;
    }
}

// precedence: explicit flag > LPGFLOW_SEED env > config file
inline uint64_t resolve_seed(uint64_t config_seed, std::optional<uint64_t> flag_seed) {
    if (flag_seed) return *flag_seed;
    if (const char* env = std::getenv("LPGFLOW_SEED")) {
        char* end          = nullptr;
        const uint64_t val = std::strtoull(env, &end, 10);
        LPG_REQUIRE(end && *end == '\0' && env[0] != '\0',
                    "config: LPGFLOW_SEED must be a decimal integer");
        return val;
    }
    return config_seed;
}

inline std::string config_digest(const nlohmann::json& j) {
    const uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace lpgflow

#endif
