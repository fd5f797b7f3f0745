#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "latentscope/checkpoint.hpp"
#include "latentscope/synthetic.hpp"

using namespace latentscope;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "latentscope_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.n_blocks = 2;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.d_mlp = 32;
    cfg.vocab_size = 32;
    cfg.max_seq = 16;
    cfg.norm_kind = NormKind::layernorm;
    cfg.pos_kind = PosKind::rope;
    cfg.activation = Activation::gelu;
    return cfg;
}

} // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("single 2x2 tensor is readable") {
    std::map<std::string, ckpt::TensorToWrite> tensors;
    std::vector<float> vals = {1.5f, -2.0f, 3.25f, 4.0f};
    ckpt::TensorToWrite t;
    t.dtype = ckpt::Dtype::f32;
    t.shape = {2, 2};
    t.bytes.resize(16);
    std::memcpy(t.bytes.data(), vals.data(), 16);
    tensors["m"] = t;
    auto p = temp_path("single.st");
    ckpt::write_container(p.string(), tensors);
    auto c = ckpt::TensorContainer::open(p.string());
    auto back = c.read_f32("m");
    REQUIRE(back.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(back[(size_t)i] == vals[(size_t)i]);
    CHECK(c.entry("m").shape == std::vector<size_t>{2, 2});
}

TEST_CASE("container round trip is bit exact") {
    auto p = temp_path("round.st");
    ModelConfig cfg = small_config();
    synth::write_synthetic_checkpoint(p.string(), cfg, 42);
    auto c = ckpt::TensorContainer::open(p.string());

    auto p2 = temp_path("round2.st");
    std::map<std::string, ckpt::TensorToWrite> rewrite;
    for (auto& [name, e] : c.entries()) {
        ckpt::TensorToWrite t;
        t.dtype = e.dtype;
        t.shape = e.shape;
        t.bytes.assign(c.raw(e), c.raw(e) + (e.end - e.begin));
        rewrite[name] = std::move(t);
    }
    ckpt::write_container(p2.string(), rewrite, c.metadata());

    std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("truncated payload rejected") {
    auto p = temp_path("trunc.st");
    synth::write_synthetic_checkpoint(p.string(), small_config(), 1);
    auto size = std::filesystem::file_size(p);
    std::filesystem::resize_file(p, size - 64);
    CHECK_THROWS_AS(ckpt::TensorContainer::open(p.string()), ValidationError);
}

TEST_CASE("bad header length rejected") {
    auto p = temp_path("badlen.st");
    std::ofstream out(p, std::ios::binary);
    uint64_t len = 1u << 30;
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << "{}";
    out.close();
    CHECK_THROWS_AS(ckpt::TensorContainer::open(p.string()), FormatError);
}

TEST_CASE("overlapping offsets rejected") {
    auto p = temp_path("overlap.st");
    nlohmann::json header = {
        {"a", {{"dtype", "F32"}, {"shape", {2}}, {"data_offsets", {0, 8}}}},
        {"b", {{"dtype", "F32"}, {"shape", {2}}, {"data_offsets", {4, 12}}}},
    };
    std::string hs = header.dump();
    std::ofstream out(p, std::ios::binary);
    uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << hs;
    std::vector<char> payload(12, 0);
    out.write(payload.data(), 12);
    out.close();
    CHECK_THROWS_AS(ckpt::TensorContainer::open(p.string()), ValidationError);
}

TEST_CASE("f16 entries widen to f32") {
    auto p = temp_path("half.st");
    std::map<std::string, ckpt::TensorToWrite> tensors;
    ckpt::TensorToWrite t;
    t.dtype = ckpt::Dtype::f16;
    t.shape = {3};
    std::vector<float> vals = {1.0f, -0.5f, 2.25f};
    t.bytes.resize(6);
    for (int i = 0; i < 3; ++i) {
        uint16_t h = float_to_half(vals[(size_t)i]);
        std::memcpy(t.bytes.data() + i * 2, &h, 2);
    }
    tensors["h"] = t;
    ckpt::write_container(p.string(), tensors);
    auto c = ckpt::TensorContainer::open(p.string());
    auto back = c.read_f32("h");
    for (int i = 0; i < 3; ++i) CHECK(back[(size_t)i] == vals[(size_t)i]);
}

TEST_CASE("generic bind: slot count forced by config") {
    auto p = temp_path("gen.st");
    ModelConfig cfg = small_config(); // layernorm + rope + gelu
    synth::write_synthetic_checkpoint(p.string(), cfg, 7);
    auto c = ckpt::TensorContainer::open(p.string());
    auto w = ckpt::bind_weights(c, cfg, ckpt::WeightNaming::generic);
    // per block: 4 attn + 4 mlp + 4 norm; global: tok emb + final norm g/b
    CHECK(w.bound_tensors == 2 * 12 + 3);
    CHECK(w.tied_unembedding);
    CHECK(w.blocks.size() == 2);
    CHECK(w.unembed.size() == cfg.d_model * cfg.vocab_size);
    CHECK(w.pos_emb.empty());
    // tied unembedding is the token embedding transpose
    CHECK(w.unembed[3 * cfg.vocab_size + 5] == w.tok_emb[5 * cfg.d_model + 3]);
}

TEST_CASE("rmsnorm + silu + learned slots") {
    auto p = temp_path("gen2.st");
    ModelConfig cfg = small_config();
    cfg.norm_kind = NormKind::rmsnorm;
    cfg.activation = Activation::silu;
    cfg.pos_kind = PosKind::learned;
    synth::write_synthetic_checkpoint(p.string(), cfg, 9);
    auto c = ckpt::TensorContainer::open(p.string());
    auto w = ckpt::bind_weights(c, cfg, ckpt::WeightNaming::generic);
    // per block: qkv + out + gate + up + down + 2 norm gains = 7
    // global: tok emb + pos emb + final gain = 3
    CHECK(w.bound_tensors == 2 * 7 + 3);
    CHECK(w.blocks[0].qkv_b.empty());
    CHECK(w.blocks[0].mlp_gate_w.size() == cfg.d_model * cfg.d_mlp);
    CHECK(w.pos_emb.size() == cfg.max_seq * cfg.d_model);
}

TEST_CASE("missing slot names the slot") {
    auto p = temp_path("missing.st");
    ModelConfig cfg = small_config();
    synth::write_synthetic_checkpoint(p.string(), cfg, 3);
    auto c = ckpt::TensorContainer::open(p.string());
    // rewrite without the final norm gain
    std::map<std::string, ckpt::TensorToWrite> rewrite;
    for (auto& [name, e] : c.entries()) {
        if (name == "final_norm.weight") continue;
        ckpt::TensorToWrite t;
        t.dtype = e.dtype;
        t.shape = e.shape;
        t.bytes.assign(c.raw(e), c.raw(e) + (e.end - e.begin));
        rewrite[name] = std::move(t);
    }
    auto p2 = temp_path("missing2.st");
    ckpt::write_container(p2.string(), rewrite);
    auto c2 = ckpt::TensorContainer::open(p2.string());
    try {
        ckpt::bind_weights(c2, cfg, ckpt::WeightNaming::generic);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("final norm gain") != std::string::npos);
    }
}

TEST_CASE("shape mismatch reports both shapes") {
    auto p = temp_path("mismatch.st");
    ModelConfig cfg = small_config();
    synth::write_synthetic_checkpoint(p.string(), cfg, 3);
    ModelConfig wrong = cfg;
    wrong.d_mlp = 64;
    auto c = ckpt::TensorContainer::open(p.string());
    try {
        ckpt::bind_weights(c, wrong, ckpt::WeightNaming::generic);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("64") != std::string::npos);
        CHECK(msg.find("32") != std::string::npos);
    }
}

TEST_CASE("config metadata round trip") {
    auto p = temp_path("meta.st");
    ModelConfig cfg = small_config();
    cfg.bos_id = 5;
    synth::write_synthetic_checkpoint(p.string(), cfg, 11);
    auto c = ckpt::TensorContainer::open(p.string());
    auto cfg2 = ckpt::resolve_config(c);
    CHECK(cfg2.n_blocks == cfg.n_blocks);
    CHECK(cfg2.d_model == cfg.d_model);
    CHECK(cfg2.norm_kind == cfg.norm_kind);
    CHECK(cfg2.pos_kind == cfg.pos_kind);
    CHECK(cfg2.bos_id == cfg.bos_id);
    CHECK(ckpt::resolve_naming(c) == ckpt::WeightNaming::generic);
}

// Gated on a real GPT-2 small checkpoint (see scripts/fetch_gpt2.py).
TEST_CASE("gpt2 small container binds" * doctest::skip(std::getenv("LATENTSCOPE_GPT2_DIR") == nullptr)) {
    const char* dir = std::getenv("LATENTSCOPE_GPT2_DIR");
    if (!dir) return;
    auto c = ckpt::TensorContainer::open(std::string(dir) + "/model.safetensors");
    CHECK(c.entry("wte.weight").shape == std::vector<size_t>{50257, 768});
    auto cfg = ckpt::resolve_config(c);
    CHECK(cfg.n_blocks == 12);
    CHECK(cfg.d_model == 768);
    CHECK(cfg.n_heads == 12);
    auto w = ckpt::bind_weights(c, cfg, ckpt::WeightNaming::gpt2);
    CHECK(w.blocks.size() == 12);
    CHECK(w.tied_unembedding);
}

} // TEST_SUITE
