#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lpgflow/checkpoint.hpp"
#include "lpgflow/rng.hpp"

using namespace lpgflow;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    const fs::path p = fs::temp_directory_path() / "lpg_ckpt_test";
    fs::create_directories(p);
    return p;
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
}

Checkpoint sample_checkpoint() {
    Checkpoint ckpt;
    ckpt.kind         = "model";
    ckpt.meta["step"] = 3;
    ckpt.meta["note"] = "round trip";
    RngStream rng(1, "ckpt");
    CheckpointTensor a;
    a.rows = 3;
    a.cols = 4;
    a.data.resize(12);
    for (auto& v : a.data) v = rng.next_normal();
    a.data[0] = -0.0f;      // sign bit must survive
    a.data[1] = 1.0e-43f;   // subnormal
    a.data[2] = -3.4e38f;   // near the float limit
    CheckpointTensor b;
    b.rows = 1;
    b.cols = 5;
    b.data = {0.0f, 1.0f, -1.0f, 0.5f, 2.0f};
    ckpt.tensors.emplace("layer.w", a);
    ckpt.tensors.emplace("layer.b", b);
    return ckpt;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.patch_size = 4;
    cfg.hidden_dim = 32;
    cfg.num_layers = 1;
    cfg.num_heads  = 2;
    cfg.lora_rank  = 2;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoints round-trip every bit of tensor data") {
    const fs::path path = work_dir() / "roundtrip.lpgf";
    const Checkpoint ckpt = sample_checkpoint();
    save_checkpoint(ckpt, path.string());

    const Checkpoint back = load_checkpoint(path.string());
    REQUIRE(back.kind == "model");
    REQUIRE(back.meta["step"] == 3);
    REQUIRE(back.meta["note"] == "round trip");
    REQUIRE(back.tensors.size() == 2);
    for (const auto& [name, t] : ckpt.tensors) {
        const auto& bt = back.tensors.at(name);
        REQUIRE(bt.rows == t.rows);
        REQUIRE(bt.cols == t.cols);
        REQUIRE(bits_equal(bt.data, t.data));
    }
}

TEST_CASE("saving a loaded checkpoint reproduces the file byte for byte") {
    const fs::path p1 = work_dir() / "stable1.lpgf";
    const fs::path p2 = work_dir() / "stable2.lpgf";
    save_checkpoint(sample_checkpoint(), p1.string());
    save_checkpoint(load_checkpoint(p1.string()), p2.string());
    REQUIRE(slurp(p1) == slurp(p2));
}

TEST_CASE("the header region is plain JSON with consistent spans") {
    const fs::path path = work_dir() / "header.lpgf";
    save_checkpoint(sample_checkpoint(), path.string());
    const std::string bytes = slurp(path);

    REQUIRE(bytes.compare(0, 4, "LPGF") == 0);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    REQUIRE(detail::get_u32(p + 4) == kCheckpointVersion);
    const uint64_t hlen = detail::get_u64(p + 8);
    const nlohmann::json header = nlohmann::json::parse(bytes.substr(16, size_t(hlen)));

    REQUIRE(header["kind"] == "model");
    uint64_t total = 0;
    for (const auto& [name, tj] : header["tensors"].items()) {
        REQUIRE(tj["dtype"] == "f32");
        const uint64_t len = tj["length"].get<uint64_t>();
        REQUIRE(tj["offset"].get<uint64_t>() + len <= bytes.size() - 16 - hlen);
        REQUIRE(len == tj["shape"][0].get<uint64_t>() * tj["shape"][1].get<uint64_t>() * 4);
        total += len;
    }
    REQUIRE(16 + hlen + total == bytes.size());
}

TEST_CASE("damaged checkpoint files are rejected as corrupt") {
    const fs::path good = work_dir() / "good.lpgf";
    save_checkpoint(sample_checkpoint(), good.string());
    const std::string bytes = slurp(good);
    const fs::path bad = work_dir() / "bad.lpgf";

    REQUIRE_THROWS_AS(load_checkpoint((work_dir() / "missing.lpgf").string()), IoFault);

    std::string magic = bytes;
    magic[0]          = 'X';
    spit(bad, magic);
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    std::string version = bytes;
    version[4]          = char(9);
    spit(bad, version);
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    spit(bad, bytes.substr(0, 20));  // header claims more bytes than exist
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    spit(bad, bytes.substr(0, bytes.size() - 4));  // blob runs past the end
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    std::string garble = bytes;
    garble[16]         = 'X';  // first header byte, JSON no longer parses
    spit(bad, garble);
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);
}

TEST_CASE("hand-built headers with bad spans are rejected") {
    auto build = [](const std::string& header, size_t blob_floats) {
        std::string out = "LPGF";
        detail::put_u32(out, kCheckpointVersion);
        detail::put_u64(out, header.size());
        out += header;
        for (size_t i = 0; i < blob_floats; i++) detail::put_u32(out, 0x3f800000u);
        return out;
    };
    const fs::path bad = work_dir() / "crafted.lpgf";

    // two tensors sharing bytes
    spit(bad, build(R"({"kind":"model","meta":{},"tensors":{)"
                    R"("a":{"dtype":"f32","shape":[1,2],"offset":0,"length":8},)"
                    R"("b":{"dtype":"f32","shape":[1,2],"offset":4,"length":8}}})",
                    3));
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    // length that disagrees with the shape
    spit(bad, build(R"({"kind":"model","meta":{},"tensors":{)"
                    R"("a":{"dtype":"f32","shape":[1,2],"offset":0,"length":12}}})",
                    3));
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    // unknown dtype
    spit(bad, build(R"({"kind":"model","meta":{},"tensors":{)"
                    R"("a":{"dtype":"f64","shape":[1,2],"offset":0,"length":8}}})",
                    2));
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);

    // missing required field
    spit(bad, build(R"({"kind":"model","tensors":{}})", 0));
    REQUIRE_THROWS_AS(load_checkpoint(bad.string()), CorruptFile);
}

TEST_CASE("non-finite tensor values refuse to serialize") {
    Checkpoint ckpt = sample_checkpoint();
    ckpt.tensors["layer.b"].data[2] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(checkpoint_bytes(ckpt), NumericFault);
}

TEST_CASE("model weights restore bit-identically into a fresh model") {
    const ModelConfig cfg = tiny_config();
    VelocityModel src(cfg, 7);
    const fs::path path = work_dir() / "model.lpgf";
    save_checkpoint(model_checkpoint(src, {{"step", 0}}), path.string());

    VelocityModel dst(cfg, 999);
    REQUIRE_FALSE(bits_equal(dst.param("blocks.0.attn.wq.w").data(),
                             src.param("blocks.0.attn.wq.w").data()));
    const Checkpoint ckpt = load_checkpoint(path.string());
    load_model_weights(dst, ckpt);
    for (const auto& [name, t] : src.params()) {
        INFO(name);
        REQUIRE(bits_equal(dst.param(name).data(), t.data()));
    }

    Checkpoint missing = ckpt;
    missing.tensors.erase("patch.w");
    REQUIRE_THROWS_AS(load_model_weights(dst, missing), CorruptFile);

    ModelConfig other = cfg;
    other.hidden_dim  = 16;
    VelocityModel small(other, 1);
    REQUIRE_THROWS_AS(load_model_weights(small, ckpt), DimMismatch);
}

TEST_CASE("adapters survive the checkpoint round trip") {
    const ModelConfig cfg = tiny_config();
    VelocityModel model(cfg, 13);
    LoraAdapter ad = model.make_adapter(13, "colorize");
    RngStream rng(13, "randb");
    for (auto& [_, s] : ad.sites)
        for (auto& v : s.b.data()) v = rng.next_normal();
    ad.scale = 0.75f;

    const fs::path path = work_dir() / "adapter.lpgf";
    save_checkpoint(adapter_checkpoint(ad, {{"config_digest", "abc123"}}), path.string());
    const Checkpoint ckpt = load_checkpoint(path.string());
    REQUIRE(ckpt.kind == "lora");
    REQUIRE(ckpt.meta["config_digest"] == "abc123");
    REQUIRE(ckpt.meta["task"] == "colorize");

    const LoraAdapter back = adapter_from_checkpoint(ckpt, true);
    REQUIRE(back.rank == ad.rank);
    REQUIRE(back.scale == ad.scale);
    REQUIRE(back.task == ad.task);
    REQUIRE(back.sites.size() == ad.sites.size());
    for (const auto& [site, s] : ad.sites) {
        const auto& bs = back.sites.at(site);
        REQUIRE(bits_equal(bs.a.data(), s.a.data()));
        REQUIRE(bits_equal(bs.b.data(), s.b.data()));
        REQUIRE(bs.a.requires_grad());
        REQUIRE(bs.b.requires_grad());
    }

    Checkpoint half = ckpt;
    half.tensors.erase("sites.final.proj.b");
    REQUIRE_THROWS_AS(adapter_from_checkpoint(half), CorruptFile);

    Checkpoint wrong = ckpt;
    wrong.kind       = "model";
    REQUIRE_THROWS_AS(adapter_from_checkpoint(wrong), CorruptFile);

    Checkpoint bare = ckpt;
    bare.meta.erase("rank");
    REQUIRE_THROWS_AS(adapter_from_checkpoint(bare), CorruptFile);
}

TEST_CASE("prompt tokens survive the checkpoint round trip") {
    Tensor table = Tensor::from_vec({1.0f, 2.0f, 3.0f, 4.0f}, 2, 2);
    PromptTokens prompt = init_prompt_tokens({0, 1}, table, 3);

    const fs::path path = work_dir() / "prompt.lpgf";
    save_checkpoint(prompt_checkpoint(prompt, {{"step", 12}}), path.string());
    const Checkpoint ckpt = load_checkpoint(path.string());
    REQUIRE(ckpt.kind == "prompt");
    REQUIRE(ckpt.meta["step"] == 12);

    const PromptTokens back = prompt_from_checkpoint(ckpt, true);
    REQUIRE(back.tokens.rows() == 3);
    REQUIRE(back.tokens.cols() == 2);
    REQUIRE(bits_equal(back.tokens.data(), prompt.tokens.data()));
    REQUIRE(back.tokens.requires_grad());

    Checkpoint empty = ckpt;
    empty.tensors.clear();
    REQUIRE_THROWS_AS(prompt_from_checkpoint(empty), CorruptFile);
    Checkpoint wrong = ckpt;
    wrong.kind       = "lora";
    REQUIRE_THROWS_AS(prompt_from_checkpoint(wrong), CorruptFile);
}
