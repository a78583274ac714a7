#ifndef LPGFLOW_MODEL_HPP
#define LPGFLOW_MODEL_HPP

// Diffusion-transformer velocity network over stitched canvases.
// Input channels per pixel: noisy state, masked clean state, mask bit.
// Patches become tokens; task tokens (and optional prompt tokens) are
// prepended and everything runs through unified full attention.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lpgflow/image.hpp"
#include "lpgflow/lora.hpp"
#include "lpgflow/ops.hpp"
#include "lpgflow/rng.hpp"

namespace lpgflow {

struct ModelConfig {
    // patch 4 keeps the per-patch pixel count below hidden_dim, so the patch
    // embedding loses nothing and the output head can span the full target
    int patch_size       = 4;
    int hidden_dim       = 128;
    int num_layers       = 4;
    int num_heads        = 4;
    int in_channels      = 7;   // 2*image_channels + 1 mask plane
    int token_vocab_size = 64;
    int num_prompt_tokens = 50;
    int lora_rank        = 8;
    float lora_scale     = 1.0f;

    static constexpr int kMlpRatio = 4;

    int image_channels() const { return (in_channels - 1) / 2; }
    int head_dim() const { return hidden_dim / num_heads; }
    int patch_dim() const {
        // two image-channel groups at full resolution, mask pooled to one value
        return patch_size * patch_size * image_channels() * 2 + 1;
    }
    int out_dim() const { return patch_size * patch_size * image_channels(); }
    int mlp_dim() const { return hidden_dim * kMlpRatio; }

    void validate() const {
        LPG_REQUIRE(patch_size >= 1, "config: patch_size must be >= 1");
        LPG_REQUIRE(num_layers >= 1 && num_heads >= 1, "config: layers/heads must be >= 1");
        LPG_REQUIRE(hidden_dim % (2 * num_heads) == 0,
                    "config: hidden_dim must be divisible by 2*num_heads");
        LPG_REQUIRE(head_dim() % 4 == 0,
                    "config: head_dim must be a multiple of 4 for the axial rotary split");
        LPG_REQUIRE(in_channels >= 3 && in_channels % 2 == 1,
                    "config: in_channels must be 2*image_channels + 1");
        LPG_REQUIRE(token_vocab_size >= 1, "config: empty token vocab");
        LPG_REQUIRE(num_prompt_tokens >= 1, "config: num_prompt_tokens must be >= 1");
        LPG_REQUIRE(lora_rank >= 1 && lora_rank <= hidden_dim, "config: bad lora_rank");
    }
};

struct PromptTokens {
    Tensor tokens;  // [num_prompt_tokens, hidden_dim]
};

// All prompt rows start at the mean embedding of the task description.
inline PromptTokens init_prompt_tokens(const std::vector<int>& description_ids,
                                       const Tensor& table, int num_prompt_tokens) {
    LPG_REQUIRE(!description_ids.empty(), "prompt init: empty description");
    LPG_REQUIRE(num_prompt_tokens >= 1, "prompt init: need at least one token");
    const int d = table.cols();
    std::vector<double> mean(d, 0.0);
    for (int id : description_ids) {
        LPG_REQUIRE(id >= 0 && id < table.rows(), "prompt init: token id out of vocab");
        for (int j = 0; j < d; j++) mean[j] += table.data()[size_t(id) * d + j];
    }
    std::vector<float> rows(size_t(num_prompt_tokens) * d);
    for (int i = 0; i < num_prompt_tokens; i++)
        for (int j = 0; j < d; j++)
            rows[size_t(i) * d + j] = float(mean[j] / double(description_ids.size()));
    PromptTokens p;
    p.tokens = Tensor::from_vec(rows, num_prompt_tokens, d, true);
    return p;
}

// ----------------------------------------------------------------- patchify

struct PatchTokens {
    int token_rows = 0;
    int token_cols = 0;
    std::vector<float> x;                       // [tokens, patch_dim]
    std::vector<std::pair<int, int>> pos;       // (row, col) per token
};

// zt and z0_masked are H x W2 x C canvases (values unbounded), mask H x W2.
inline PatchTokens patchify(const Canvas& zt, const Canvas& z0_masked, const GrayMap& mask,
                            int p) {
    LPG_REQUIRE(p >= 1, "patchify: patch size must be >= 1");
    LPG_REQUIRE(zt.h == z0_masked.h && zt.w == z0_masked.w, "patchify: canvas shape mismatch");
    LPG_REQUIRE(mask.h == zt.h && mask.w == zt.w, "patchify: mask shape mismatch");
    LPG_REQUIRE(zt.h % p == 0 && zt.w % p == 0, "patchify: dims not divisible by patch");
    constexpr int C = 3;
    const int tr = zt.h / p, tc = zt.w / p;
    const int pd = p * p * C * 2 + 1;

    PatchTokens out;
    out.token_rows = tr;
    out.token_cols = tc;
    out.x.resize(size_t(tr) * tc * pd);
    out.pos.reserve(size_t(tr) * tc);
    for (int r = 0; r < tr; r++)
        for (int c = 0; c < tc; c++) {
            out.pos.emplace_back(r, c);
            float* tok = out.x.data() + (size_t(r) * tc + c) * pd;
            double msum = 0.0;
            for (int y = 0; y < p; y++)
                for (int x = 0; x < p; x++) {
                    const int py = r * p + y, px = c * p + x;
                    const int off = (y * p + x) * C;
                    for (int ch = 0; ch < C; ch++) {
                        tok[off + ch]             = zt.at(py, px, ch);
                        tok[p * p * C + off + ch] = z0_masked.at(py, px, ch);
                    }
                    msum += mask.at(py, px);
                }
            tok[pd - 1] = float(msum / double(p * p));
        }
    return out;
}

// canvas pixels rearranged into the model's output token layout
inline std::vector<float> canvas_to_tokens(const Canvas& c, int p) {
    LPG_REQUIRE(p >= 1 && c.h % p == 0 && c.w % p == 0, "canvas_to_tokens: bad patch grid");
    constexpr int C = 3;
    const int tr = c.h / p, tc = c.w / p;
    std::vector<float> tokens(size_t(tr) * tc * p * p * C);
    for (int r = 0; r < tr; r++)
        for (int cc = 0; cc < tc; cc++) {
            float* tok = tokens.data() + (size_t(r) * tc + cc) * (p * p * C);
            for (int y = 0; y < p; y++)
                for (int x = 0; x < p; x++)
                    for (int ch = 0; ch < C; ch++)
                        tok[(y * p + x) * C + ch] = c.at(r * p + y, cc * p + x, ch);
        }
    return tokens;
}

// tokens [token_rows*token_cols, p*p*C] back to an H x W2 x C canvas
inline Canvas unpatchify(const std::vector<float>& tokens, int token_rows, int token_cols,
                         int p) {
    constexpr int C = 3;
    LPG_REQUIRE(tokens.size() == size_t(token_rows) * token_cols * p * p * C,
                "unpatchify: token buffer size mismatch");
    Canvas out = make_canvas(token_rows * p, token_cols * p);
    for (int r = 0; r < token_rows; r++)
        for (int c = 0; c < token_cols; c++) {
            const float* tok = tokens.data() + (size_t(r) * token_cols + c) * (p * p * C);
            for (int y = 0; y < p; y++)
                for (int x = 0; x < p; x++)
                    for (int ch = 0; ch < C; ch++)
                        out.at(r * p + y, c * p + x, ch) = tok[(y * p + x) * C + ch];
        }
    return out;
}

// ----------------------------------------------------------- rotary angles

// Axial 2-D angles: first half of each head's rotary pairs track the token
// row, second half the column, base 10000. Column indices keep counting
// across the stitch seam so relative offsets stay meaningful there.
inline std::vector<float> axial_rope_angles(const std::vector<std::pair<int, int>>& pos,
                                            int head_dim) {
    LPG_REQUIRE(head_dim % 4 == 0, "rope angles: head_dim must be a multiple of 4");
    const int pairs = head_dim / 2;
    const int per_axis = pairs / 2;
    std::vector<float> omega(per_axis);
    for (int j = 0; j < per_axis; j++)
        omega[j] = float(std::pow(10000.0, -double(j) / double(per_axis)));
    std::vector<float> angles(pos.size() * size_t(pairs));
    for (size_t t = 0; t < pos.size(); t++) {
        float* a = angles.data() + t * pairs;
        for (int j = 0; j < per_axis; j++) {
            a[j]            = float(pos[t].first) * omega[j];
            a[per_axis + j] = float(pos[t].second) * omega[j];
        }
    }
    return angles;
}

inline std::vector<float> sinusoidal_time(float t, int dim) {
    LPG_REQUIRE(dim % 2 == 0, "time embedding: dim must be even");
    const int half = dim / 2;
    std::vector<float> emb(dim);
    for (int j = 0; j < half; j++) {
        // t lives in [0,1]; spread it over the classic 0..1000 position range
        const double freq = std::exp(-std::log(10000.0) * double(j) / double(half));
        const double ang  = double(t) * 1000.0 * freq;
        emb[j]        = float(std::sin(ang));
        emb[half + j] = float(std::cos(ang));
    }
    return emb;
}

// ------------------------------------------------------------------- model

struct AttentionScores {
    int tokens = 0;
    std::vector<float> probs;      // [tokens, tokens] for the chosen head
    std::vector<float> left_mass;  // per right-canvas query, mass on left-canvas keys
};

class VelocityModel {
public:
    VelocityModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        const int d  = cfg_.hidden_dim;
        const int md = cfg_.mlp_dim();
        init_param("patch.w", cfg_.patch_dim(), d, 1.0f / std::sqrt(float(cfg_.patch_dim())), seed);
        init_param("patch.b", 1, d, 0.0f, seed);
        init_param("tokens.table", cfg_.token_vocab_size, d, 0.02f, seed);
        init_param("time.fc1.w", d, d, 1.0f / std::sqrt(float(d)), seed);
        init_param("time.fc1.b", 1, d, 0.0f, seed);
        init_param("time.fc2.w", d, d, 1.0f / std::sqrt(float(d)), seed);
        init_param("time.fc2.b", 1, d, 0.0f, seed);
        for (int i = 0; i < cfg_.num_layers; i++) {
            const std::string blk = "blocks." + std::to_string(i) + ".";
            for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
                init_param(blk + w + ".w", d, d, 1.0f / std::sqrt(float(d)), seed);
                init_param(blk + w + ".b", 1, d, 0.0f, seed);
            }
            init_param(blk + "mlp.fc1.w", d, md, 1.0f / std::sqrt(float(d)), seed);
            init_param(blk + "mlp.fc1.b", 1, md, 0.0f, seed);
            init_param(blk + "mlp.fc2.w", md, d, 1.0f / std::sqrt(float(md)), seed);
            init_param(blk + "mlp.fc2.b", 1, d, 0.0f, seed);
            // zero gate biases keep the frozen random blocks near no-ops, so
            // the residual stream stays close to the raw patch embedding and
            // the adapters read clean content; the 0.3 weight spread still
            // gives every channel a usable spectrum of timestep responses
            for (const char* m : {"shift1", "scale1", "gate1", "shift2", "scale2", "gate2"}) {
                init_param(blk + "mod." + m + ".w", d, d, 0.3f, seed);
                init_param(blk + "mod." + m + ".b", 1, d, 0.0f, seed);
            }
        }
        init_param("final.mod.shift.w", d, d, 0.3f, seed);
        init_param("final.mod.shift.b", 1, d, 0.0f, seed);
        init_param("final.mod.scale.w", d, d, 0.3f, seed);
        init_param("final.mod.scale.b", 1, d, 0.0f, seed);
        // zero output head: an untrained model predicts zero velocity
        init_param("final.proj.w", d, cfg_.out_dim(), 0.0f, seed);
        init_param("final.proj.b", 1, cfg_.out_dim(), 0.0f, seed);
    }

    const ModelConfig& config() const { return cfg_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

    const Tensor& param(const std::string& name) const {
        auto it = params_.find(name);
        LPG_REQUIRE(it != params_.end(), "model: unknown parameter " + name);
        return it->second;
    }

    void set_param(const std::string& name, const std::vector<float>& values) {
        auto it = params_.find(name);
        LPG_REQUIRE(it != params_.end(), "model: unknown parameter " + name);
        if (it->second.numel() != int64_t(values.size()))
            throw DimMismatch("model: size mismatch loading " + name);
        std::copy(values.begin(), values.end(), it->second.data().begin());
    }

    int64_t base_param_count() const {
        int64_t n = 0;
        for (const auto& [_, t] : params_) n += t.numel();
        return n;
    }

    // site name -> (d_in, d_out) for every adapter injection point
    std::vector<std::pair<std::string, std::pair<int, int>>> lora_sites() const {
        const int d = cfg_.hidden_dim;
        std::vector<std::pair<std::string, std::pair<int, int>>> sites;
        for (int i = 0; i < cfg_.num_layers; i++) {
            const std::string blk = "blocks." + std::to_string(i) + ".";
            for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
                sites.emplace_back(blk + w, std::make_pair(d, d));
            sites.emplace_back(blk + "mlp.fc1", std::make_pair(d, cfg_.mlp_dim()));
            sites.emplace_back(blk + "mlp.fc2", std::make_pair(cfg_.mlp_dim(), d));
        }
        sites.emplace_back("final.proj", std::make_pair(d, cfg_.out_dim()));
        return sites;
    }

    LoraAdapter make_adapter(uint64_t seed, const std::string& task) const {
        LoraAdapter ad;
        ad.rank  = cfg_.lora_rank;
        ad.scale = cfg_.lora_scale;
        ad.task  = task;
        for (const auto& [name, dims] : lora_sites()) {
            // the zero-frozen output head gets a full-rank pair so the
            // trainable path is not capped by the adapter rank
            const int r = name == "final.proj" ? std::min(cfg_.hidden_dim, cfg_.out_dim())
                                               : cfg_.lora_rank;
            RngStream rng(seed, ("lora." + task + "." + name).c_str());
            ad.sites.emplace(name, make_lora_site(dims.first, dims.second, r, rng));
        }
        return ad;
    }

    // Token-space forward: [visual tokens, out_dim]. Condition ids are
    // embedded and prepended (then prompt tokens when given); probs_out, when
    // non-null, receives one AttnProbs per layer.
    Tensor forward_tokens(const Canvas& zt, const Canvas& z0_masked, const GrayMap& mask,
                          float t, const std::vector<int>& cond_ids,
                          const LoraAdapter* adapter       = nullptr,
                          const PromptTokens* prompt       = nullptr,
                          std::vector<AttnProbs>* probs_out = nullptr) const {
        LPG_REQUIRE(t >= 0.0f && t <= 1.0f, "forward: t outside [0,1]");
        LPG_REQUIRE(!cond_ids.empty(), "forward: need at least one condition token");
        const int d  = cfg_.hidden_dim;
        const int nh = cfg_.num_heads;

        PatchTokens pt = patchify(zt, z0_masked, mask, cfg_.patch_size);
        const int t_vis = pt.token_rows * pt.token_cols;
        Tensor xin = Tensor::from_vec(pt.x, t_vis, cfg_.patch_dim(), false);
        Tensor x   = lin(xin, "patch");

        Tensor cond = embedding(param("tokens.table"), cond_ids);
        std::vector<Tensor> parts{cond};
        int n_cond = cond.rows();
        if (prompt) {
            LPG_REQUIRE(prompt->tokens.cols() == d, "forward: prompt token width");
            parts.push_back(prompt->tokens);
            n_cond += prompt->tokens.rows();
        }
        parts.push_back(x);
        Tensor seq = concat_rows(parts);

        std::vector<std::pair<int, int>> pos(size_t(n_cond), {0, 0});
        pos.insert(pos.end(), pt.pos.begin(), pt.pos.end());
        const std::vector<float> angles = axial_rope_angles(pos, cfg_.head_dim());

        Tensor temb = Tensor::from_vec(sinusoidal_time(t, d), 1, d, false);
        Tensor ft   = lin(silu(lin(temb, "time.fc1")), "time.fc2");
        Tensor sft  = silu(ft);

        if (probs_out) probs_out->assign(cfg_.num_layers, {});
        for (int i = 0; i < cfg_.num_layers; i++) {
            const std::string blk = "blocks." + std::to_string(i) + ".";
            Tensor shift1 = lin(sft, blk + "mod.shift1");
            Tensor scale1 = lin(sft, blk + "mod.scale1");
            Tensor gate1  = lin(sft, blk + "mod.gate1");
            Tensor shift2 = lin(sft, blk + "mod.shift2");
            Tensor scale2 = lin(sft, blk + "mod.scale2");
            Tensor gate2  = lin(sft, blk + "mod.gate2");

            Tensor h = modulate(layernorm_rows(seq), shift1, scale1);
            Tensor q = site(h, blk + "attn.wq", adapter);
            Tensor k = site(h, blk + "attn.wk", adapter);
            Tensor v = site(h, blk + "attn.wv", adapter);
            q = rope(q, angles, nh);
            k = rope(k, angles, nh);
            AttnProbs* slot = probs_out ? &(*probs_out)[i] : nullptr;
            Tensor att = attention(q, k, v, nh, slot);
            Tensor o   = site(att, blk + "attn.wo", adapter);
            seq = add(seq, mul_rowvec(o, gate1));

            Tensor h2 = modulate(layernorm_rows(seq), shift2, scale2);
            Tensor f  = site(h2, blk + "mlp.fc1", adapter);
            f         = gelu(f);
            f         = site(f, blk + "mlp.fc2", adapter);
            seq = add(seq, mul_rowvec(f, gate2));
        }

        Tensor hf = modulate(layernorm_rows(seq), lin(sft, "final.mod.shift"),
                             lin(sft, "final.mod.scale"));
        Tensor vis = slice_rows(hf, n_cond, hf.rows());
        return site(vis, "final.proj", adapter);
    }

    // Canvas-level wrapper used by sampling: no gradients, returns velocity.
    Canvas predict_velocity(const Canvas& zt, const Canvas& z0_masked, const GrayMap& mask,
                            float t, const std::vector<int>& cond_ids,
                            const LoraAdapter* adapter        = nullptr,
                            const PromptTokens* prompt        = nullptr,
                            std::vector<AttnProbs>* probs_out = nullptr) const {
        Tensor out = forward_tokens(zt, z0_masked, mask, t, cond_ids, adapter, prompt,
                                    probs_out);
        return unpatchify(out.data(), zt.h / cfg_.patch_size, zt.w / cfg_.patch_size,
                          cfg_.patch_size);
    }

    // Softmax rows of one (layer, head) plus the left-canvas mass per
    // right-canvas query token.
    AttentionScores attention_scores(const Canvas& zt, const Canvas& z0_masked,
                                     const GrayMap& mask, float t,
                                     const std::vector<int>& cond_ids, int layer, int head,
                                     const LoraAdapter* adapter = nullptr,
                                     const PromptTokens* prompt = nullptr) const {
        LPG_REQUIRE(layer >= 0 && layer < cfg_.num_layers, "attention_scores: layer range");
        LPG_REQUIRE(head >= 0 && head < cfg_.num_heads, "attention_scores: head range");
        std::vector<AttnProbs> probs;
        forward_tokens(zt, z0_masked, mask, t, cond_ids, adapter, prompt, &probs);
        const AttnProbs& p = probs[layer];
        const int T        = p.tokens;
        const int tc       = zt.w / cfg_.patch_size;
        const int n_cond   = T - (zt.h / cfg_.patch_size) * tc;

        AttentionScores s;
        s.tokens = T;
        s.probs  = p.head_probs[head];
        for (int qi = n_cond; qi < T; qi++) {
            const int col = (qi - n_cond) % tc;
            if (col < tc / 2) continue;  // left-canvas query
            double m = 0.0;
            for (int ki = n_cond; ki < T; ki++)
                if ((ki - n_cond) % tc < tc / 2) m += s.probs[size_t(qi) * T + ki];
            s.left_mass.push_back(float(m));
        }
        return s;
    }

private:
    void init_param(const std::string& name, int rows, int cols, float stddev, uint64_t seed,
                    float bias_fill = 0.0f) {
        std::vector<float> v(size_t(rows) * cols, bias_fill);
        if (stddev > 0.0f) {
            RngStream rng(seed, name.c_str());
            for (auto& e : v) e = rng.next_normal() * stddev;
        }
        params_.emplace(name, Tensor::from_vec(v, rows, cols, false));
    }

    Tensor lin(const Tensor& x, const std::string& name) const {
        return add_rowvec(matmul(x, param(name + ".w")), param(name + ".b"));
    }

    static Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scl) {
        return add_rowvec(mul_rowvec(x, add_const(scl, 1.0f)), shift);
    }

    Tensor site(const Tensor& x, const std::string& name, const LoraAdapter* adapter) const {
        Tensor base = lin(x, name);
        if (!adapter) return base;
        auto it = adapter->sites.find(name);
        if (it == adapter->sites.end()) return base;
        const LoraSite& s = it->second;
        if (s.a.cols() != x.cols() || s.b.rows() != base.cols())
            throw DimMismatch("adapter does not fit site " + name);
        return lora_apply(x, base, s, adapter->scale);
    }

    ModelConfig cfg_;
    std::map<std::string, Tensor> params_;
};

// Mean over heads of left-canvas mass per right-canvas query, as a token grid.
inline GrayMap left_mass_map(const AttnProbs& p, int n_cond, int token_rows,
                             int token_cols) {
    LPG_REQUIRE(p.tokens == n_cond + token_rows * token_cols, "left_mass_map: token count");
    LPG_REQUIRE(token_cols % 2 == 0, "left_mass_map: odd token grid");
    const int half = token_cols / 2;
    GrayMap g      = make_gray(token_rows, half);
    const int T    = p.tokens;
    for (int r = 0; r < token_rows; r++)
        for (int c = 0; c < half; c++) {
            const int qi = n_cond + r * token_cols + half + c;
            double m     = 0.0;
            for (const auto& hp : p.head_probs)
                for (int ki = n_cond; ki < T; ki++)
                    if ((ki - n_cond) % token_cols < half) m += hp[size_t(qi) * T + ki];
            g.at(r, c) = float(m / double(p.head_probs.size()));
        }
    return g;
}

}  // namespace lpgflow

#endif
