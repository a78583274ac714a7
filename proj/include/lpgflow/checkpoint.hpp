#ifndef LPGFLOW_CHECKPOINT_HPP
#define LPGFLOW_CHECKPOINT_HPP

// LPGF container: magic "LPGF", u32 version, u64 header length, canonical
// JSON header, then raw little-endian f32 blobs. Offsets in the header are
// relative to the end of the header so the blob section is self-contained.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgflow/lora.hpp"
#include "lpgflow/model.hpp"

namespace lpgflow {

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
};

struct Checkpoint {
    std::string kind;  // "model", "lora" or "prompt"
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, CheckpointTensor> tensors;
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; i++) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; i++) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

inline uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; i--) v = (v << 8) | p[i];
    return v;
}

}  // namespace detail

inline std::string checkpoint_bytes(const Checkpoint& ckpt) {
    LPG_REQUIRE(!ckpt.kind.empty(), "checkpoint: kind must be set");
    for (const auto& [name, t] : ckpt.tensors) {
        LPG_REQUIRE(t.rows >= 1 && t.cols >= 1, "checkpoint: bad shape for " + name);
        LPG_REQUIRE(t.data.size() == size_t(t.rows) * t.cols,
                    "checkpoint: data size mismatch for " + name);
        for (float v : t.data)
            if (!is_finite(v)) throw NumericFault("checkpoint: non-finite values in " + name);
    }

    nlohmann::json header;
    header["kind"]    = ckpt.kind;
    header["meta"]    = ckpt.meta;
    nlohmann::json tj = nlohmann::json::object();
    uint64_t offset   = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        const uint64_t len = uint64_t(t.data.size()) * 4;
        tj[name] = {{"dtype", "f32"},
                    {"shape", {t.rows, t.cols}},
                    {"offset", offset},
                    {"length", len}};
        offset += len;
    }
    header["tensors"] = tj;
    const std::string hs = header.dump();

    std::string out;
    out.reserve(16 + hs.size() + offset);
    out += "LPGF";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, uint64_t(hs.size()));
    out += hs;
    for (const auto& [_, t] : ckpt.tensors)
        for (float v : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(out, bits);
        }
    return out;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const std::string bytes = checkpoint_bytes(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f.good()) throw IoFault("checkpoint: cannot open " + path + " for writing");
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f.good()) throw IoFault("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw IoFault("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), {});
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

    if (bytes.size() < 16 || bytes.compare(0, 4, "LPGF") != 0)
        throw CorruptFile("checkpoint: bad magic in " + path);
    const uint32_t version = detail::get_u32(p + 4);
    if (version != kCheckpointVersion)
        throw CorruptFile("checkpoint: unsupported version in " + path);
    const uint64_t hlen = detail::get_u64(p + 8);
    if (16 + hlen > bytes.size()) throw CorruptFile("checkpoint: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, size_t(hlen)));
    } catch (const nlohmann::json::exception&) {
        throw CorruptFile("checkpoint: unparsable header in " + path);
    }

    const size_t blob_base = 16 + size_t(hlen);
    const uint64_t blob_size = bytes.size() - blob_base;
    Checkpoint ckpt;
    try {
        ckpt.kind = header.at("kind").get<std::string>();
        ckpt.meta = header.at("meta");
        std::vector<std::pair<uint64_t, uint64_t>> spans;
        for (const auto& [name, tj] : header.at("tensors").items()) {
            CheckpointTensor t;
            t.rows = tj.at("shape").at(0).get<int>();
            t.cols = tj.at("shape").at(1).get<int>();
            const uint64_t off = tj.at("offset").get<uint64_t>();
            const uint64_t len = tj.at("length").get<uint64_t>();
            if (tj.at("dtype").get<std::string>() != "f32")
                throw CorruptFile("checkpoint: unknown dtype for " + name);
            if (t.rows < 1 || t.cols < 1 || len != uint64_t(t.rows) * t.cols * 4)
                throw CorruptFile("checkpoint: inconsistent shape for " + name);
            if (off + len > blob_size)
                throw CorruptFile("checkpoint: blob out of bounds for " + name);
            spans.emplace_back(off, off + len);
            t.data.resize(size_t(t.rows) * t.cols);
            for (size_t i = 0; i < t.data.size(); i++) {
                const uint32_t bits = detail::get_u32(p + blob_base + off + i * 4);
                std::memcpy(&t.data[i], &bits, 4);
            }
            ckpt.tensors.emplace(name, std::move(t));
        }
        std::sort(spans.begin(), spans.end());
        for (size_t i = 1; i < spans.size(); i++)
            if (spans[i].first < spans[i - 1].second)
                throw CorruptFile("checkpoint: overlapping blobs in " + path);
    } catch (const nlohmann::json::exception&) {
        throw CorruptFile("checkpoint: malformed header fields in " + path);
    }
    return ckpt;
}

// ------------------------------------------------------------- converters

inline Checkpoint model_checkpoint(const VelocityModel& model, const nlohmann::json& meta,
                                   const std::string& kind = "model") {
    Checkpoint ckpt;
    ckpt.kind = kind;
    ckpt.meta = meta;
    for (const auto& [name, t] : model.params())
        ckpt.tensors.emplace(name, CheckpointTensor{t.rows(), t.cols(), t.data()});
    return ckpt;
}

inline void load_model_weights(VelocityModel& model, const Checkpoint& ckpt) {
    for (const auto& [name, t] : model.params()) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw CorruptFile("checkpoint: missing model tensor " + name);
        if (it->second.rows != t.rows() || it->second.cols != t.cols())
            throw DimMismatch("checkpoint: shape mismatch for " + name);
        model.set_param(name, it->second.data);
    }
}

inline Checkpoint adapter_checkpoint(const LoraAdapter& adapter,
                                     const nlohmann::json& extra_meta = {}) {
    Checkpoint ckpt;
    ckpt.kind          = "lora";
    ckpt.meta          = extra_meta.is_null() ? nlohmann::json::object() : extra_meta;
    ckpt.meta["rank"]  = adapter.rank;
    ckpt.meta["scale"] = adapter.scale;
    ckpt.meta["task"]  = adapter.task;
    for (const auto& [site, s] : adapter.sites) {
        ckpt.tensors.emplace("sites." + site + ".a",
                             CheckpointTensor{s.a.rows(), s.a.cols(), s.a.data()});
        ckpt.tensors.emplace("sites." + site + ".b",
                             CheckpointTensor{s.b.rows(), s.b.cols(), s.b.data()});
    }
    return ckpt;
}

inline LoraAdapter adapter_from_checkpoint(const Checkpoint& ckpt, bool trainable = false) {
    if (ckpt.kind != "lora") throw CorruptFile("checkpoint: expected kind lora");
    LoraAdapter ad;
    try {
        ad.rank  = ckpt.meta.at("rank").get<int>();
        ad.scale = ckpt.meta.at("scale").get<float>();
        ad.task  = ckpt.meta.at("task").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw CorruptFile("checkpoint: adapter metadata incomplete");
    }
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("sites.", 0) != 0 || name.size() < 9) continue;
        const std::string tail = name.substr(name.size() - 2);
        const std::string site = name.substr(6, name.size() - 8);
        if (tail != ".a" && tail != ".b") continue;
        LoraSite& s  = ad.sites[site];
        Tensor value = Tensor::from_vec(t.data, t.rows, t.cols, trainable);
        (tail == ".a" ? s.a : s.b) = value;
    }
    for (const auto& [site, s] : ad.sites) {
        if (!s.a.defined() || !s.b.defined())
            throw CorruptFile("checkpoint: adapter site " + site + " missing a pair half");
        if (s.a.rows() != s.b.cols())
            throw CorruptFile("checkpoint: adapter site " + site + " rank mismatch");
    }
    return ad;
}

inline Checkpoint prompt_checkpoint(const PromptTokens& prompt,
                                    const nlohmann::json& extra_meta = {}) {
    Checkpoint ckpt;
    ckpt.kind = "prompt";
    ckpt.meta = extra_meta.is_null() ? nlohmann::json::object() : extra_meta;
    ckpt.tensors.emplace("prompt.tokens",
                         CheckpointTensor{prompt.tokens.rows(), prompt.tokens.cols(),
                                          prompt.tokens.data()});
    return ckpt;
}

inline PromptTokens prompt_from_checkpoint(const Checkpoint& ckpt, bool trainable = false) {
    if (ckpt.kind != "prompt") throw CorruptFile("checkpoint: expected kind prompt");
    auto it = ckpt.tensors.find("prompt.tokens");
    if (it == ckpt.tensors.end()) throw CorruptFile("checkpoint: prompt tokens missing");
    PromptTokens p;
    p.tokens = Tensor::from_vec(it->second.data, it->second.rows, it->second.cols, trainable);
    return p;
}

}  // namespace lpgflow

#endif
