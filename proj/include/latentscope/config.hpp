#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentscope/error.hpp"

namespace latentscope {

enum class NormKind { layernorm, rmsnorm };
enum class PosKind { learned, rope };
enum class Activation { gelu, silu };

inline std::string to_string(NormKind k) { return k == NormKind::layernorm ? "layernorm" : "rmsnorm"; }
inline std::string to_string(PosKind k) { return k == PosKind::learned ? "learned" : "rope"; }
inline std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "silu"; }

inline NormKind norm_kind_from_string(const std::string& s) {
    if (s == "layernorm") return NormKind::layernorm;
    if (s == "rmsnorm") return NormKind::rmsnorm;
    throw ValidationError("unknown norm kind: " + s);
}
inline PosKind pos_kind_from_string(const std::string& s) {
    if (s == "learned") return PosKind::learned;
    if (s == "rope") return PosKind::rope;
    throw ValidationError("unknown positional kind: " + s);
}
inline Activation activation_from_string(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "silu") return Activation::silu;
    throw ValidationError("unknown activation: " + s);
}

// Architecture hyperparameters of a pre-norm decoder-only transformer.
struct ModelConfig {
    size_t n_blocks = 0;
    size_t d_model = 0;
    size_t n_heads = 0;
    size_t d_mlp = 0;
    size_t vocab_size = 0;
    size_t max_seq = 0;
    NormKind norm_kind = NormKind::layernorm;
    PosKind pos_kind = PosKind::learned;
    Activation activation = Activation::gelu;
    double rope_theta = 10000.0;
    std::optional<uint32_t> bos_id;

    size_t d_head() const { return d_model / n_heads; }

    void validate() const {
        if (n_blocks == 0 || d_model == 0 || n_heads == 0 || d_mlp == 0 || vocab_size == 0)
            throw ValidationError("model config: all dimensions must be positive");
        if (max_seq < 1) throw ValidationError("model config: max_seq must be >= 1");
        if (d_model % n_heads != 0)
            throw ValidationError("model config: d_model must be divisible by n_heads");
        if (pos_kind == PosKind::rope && d_head() % 2 != 0)
            throw ValidationError("model config: rope requires an even head dimension");
    }

    static ModelConfig gpt2_small() {
        ModelConfig c;
        c.n_blocks = 12;
        c.d_model = 768;
        c.n_heads = 12;
        c.d_mlp = 3072;
        c.vocab_size = 50257;
        c.max_seq = 1024;
        c.norm_kind = NormKind::layernorm;
        c.pos_kind = PosKind::learned;
        c.activation = Activation::gelu;
        c.bos_id = 50256;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"n_blocks", c.n_blocks},   {"d_model", c.d_model},
                       {"n_heads", c.n_heads},     {"d_mlp", c.d_mlp},
                       {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
                       {"norm_kind", to_string(c.norm_kind)},
                       {"pos_kind", to_string(c.pos_kind)},
                       {"activation", to_string(c.activation)},
                       {"rope_theta", c.rope_theta}};
    if (c.bos_id) j["bos_id"] = *c.bos_id;
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("n_blocks").get_to(c.n_blocks);
    j.at("d_model").get_to(c.d_model);
    j.at("n_heads").get_to(c.n_heads);
    j.at("d_mlp").get_to(c.d_mlp);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_seq").get_to(c.max_seq);
    c.norm_kind = norm_kind_from_string(j.at("norm_kind").get<std::string>());
    c.pos_kind = pos_kind_from_string(j.at("pos_kind").get<std::string>());
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.rope_theta = j.value("rope_theta", 10000.0);
    if (j.contains("bos_id") && !j["bos_id"].is_null()) c.bos_id = j["bos_id"].get<uint32_t>();
}

// What a latent vector is: which block, which of the six in-block capture
// points (or the embedding / final-norm outputs), which component produced
// it, and whether it sits before or after the residual addition.
enum class Component {
    embedding,
    norm_pre_attn,
    attn,
    resid_post_attn,
    norm_pre_mlp,
    mlp,
    resid_post_mlp,
    final_norm,
};

enum class AddPhase { pre_add, post_add, na };

inline std::string to_string(Component c) {
    switch (c) {
        case Component::embedding: return "embedding";
        case Component::norm_pre_attn: return "norm_pre_attn";
        case Component::attn: return "attn";
        case Component::resid_post_attn: return "resid_post_attn";
        case Component::norm_pre_mlp: return "norm_pre_mlp";
        case Component::mlp: return "mlp";
        case Component::resid_post_mlp: return "resid_post_mlp";
        case Component::final_norm: return "final_norm";
    }
    return "?";
}

inline Component component_from_string(const std::string& s) {
    for (Component c : {Component::embedding, Component::norm_pre_attn, Component::attn,
                        Component::resid_post_attn, Component::norm_pre_mlp, Component::mlp,
                        Component::resid_post_mlp, Component::final_norm})
        if (to_string(c) == s) return c;
    throw ValidationError("unknown component: " + s);
}

inline std::string to_string(AddPhase p) {
    switch (p) {
        case AddPhase::pre_add: return "pre_add";
        case AddPhase::post_add: return "post_add";
        case AddPhase::na: return "na";
    }
    return "?";
}

inline AddPhase add_phase_from_string(const std::string& s) {
    if (s == "pre_add") return AddPhase::pre_add;
    if (s == "post_add") return AddPhase::post_add;
    if (s == "na") return AddPhase::na;
    throw ValidationError("unknown add phase: " + s);
}

struct CaptureTag {
    static constexpr int kEmbBlock = -1;
    static constexpr int kFinalNormBlock = -2;

    int block = 0; // >= 0 for in-block points, otherwise a sentinel above
    int point = 0; // 1..6 for in-block points, 0 for sentinels
    Component component = Component::embedding;
    AddPhase add_phase = AddPhase::na;

    bool is_embedding() const { return block == kEmbBlock; }
    bool is_final_norm() const { return block == kFinalNormBlock; }
    bool in_block() const { return block >= 0; }

    static CaptureTag embedding() { return {kEmbBlock, 0, Component::embedding, AddPhase::na}; }
    static CaptureTag final_norm() {
        return {kFinalNormBlock, 0, Component::final_norm, AddPhase::na};
    }
    static CaptureTag for_point(int block, int point) {
        static const Component comp[] = {Component::norm_pre_attn, Component::attn,
                                         Component::resid_post_attn, Component::norm_pre_mlp,
                                         Component::mlp, Component::resid_post_mlp};
        if (point < 1 || point > 6) throw ValidationError("capture point must be in 1..6");
        // points 1,2,4,5 are pre-add; 3 and 6 are the stream after addition
        AddPhase phase = (point == 3 || point == 6) ? AddPhase::post_add : AddPhase::pre_add;
        return {block, point, comp[point - 1], phase};
    }

    bool operator==(const CaptureTag& o) const {
        return block == o.block && point == o.point && component == o.component &&
               add_phase == o.add_phase;
    }

    std::string label() const {
        if (is_embedding()) return "emb";
        if (is_final_norm()) return "final_norm";
        return "b" + std::to_string(block) + ".p" + std::to_string(point);
    }
};

inline void to_json(nlohmann::json& j, const CaptureTag& t) {
    j = nlohmann::json{{"point", t.point},
                       {"component", to_string(t.component)},
                       {"add_phase", to_string(t.add_phase)}};
    if (t.is_embedding())
        j["block"] = "emb";
    else if (t.is_final_norm())
        j["block"] = "final_norm";
    else
        j["block"] = t.block;
}

inline void from_json(const nlohmann::json& j, CaptureTag& t) {
    if (j.at("block").is_string()) {
        std::string b = j["block"].get<std::string>();
        if (b == "emb")
            t.block = CaptureTag::kEmbBlock;
        else if (b == "final_norm")
            t.block = CaptureTag::kFinalNormBlock;
        else
            throw ValidationError("unknown capture block sentinel: " + b);
    } else {
        t.block = j["block"].get<int>();
    }
    j.at("point").get_to(t.point);
    t.component = component_from_string(j.at("component").get<std::string>());
    t.add_phase = add_phase_from_string(j.at("add_phase").get<std::string>());
}

enum class Precision { f32, f16 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f16"; }
inline Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f16") return Precision::f16;
    throw ValidationError("unknown precision: " + s);
}

// Which capture points to record. Defaults to everything.
struct CaptureSpec {
    bool include_embedding = true;
    bool include_final_norm = true;
    std::vector<int> points = {1, 2, 3, 4, 5, 6};
    std::optional<int> block_lo;
    std::optional<int> block_hi;
    Precision precision = Precision::f32;

    std::vector<CaptureTag> resolve(size_t n_blocks) const {
        std::vector<CaptureTag> tags;
        if (include_embedding) tags.push_back(CaptureTag::embedding());
        int lo = block_lo.value_or(0);
        int hi = block_hi.value_or(static_cast<int>(n_blocks) - 1);
        if (lo < 0 || hi >= static_cast<int>(n_blocks) || lo > hi)
            throw ValidationError("capture spec: block range out of bounds");
        for (int b = lo; b <= hi; ++b)
            for (int p : points) tags.push_back(CaptureTag::for_point(b, p));
        if (include_final_norm) tags.push_back(CaptureTag::final_norm());
        if (tags.empty()) throw ValidationError("capture spec selects nothing");
        return tags;
    }

    static std::vector<CaptureTag> full_enumeration(size_t n_blocks) {
        return CaptureSpec{}.resolve(n_blocks);
    }
};

inline void to_json(nlohmann::json& j, const CaptureSpec& s) {
    j = nlohmann::json{{"include_embedding", s.include_embedding},
                       {"include_final_norm", s.include_final_norm},
                       {"points", s.points},
                       {"precision", to_string(s.precision)}};
    if (s.block_lo) j["block_lo"] = *s.block_lo;
    if (s.block_hi) j["block_hi"] = *s.block_hi;
}

inline void from_json(const nlohmann::json& j, CaptureSpec& s) {
    s.include_embedding = j.value("include_embedding", true);
    s.include_final_norm = j.value("include_final_norm", true);
    if (j.contains("points")) s.points = j["points"].get<std::vector<int>>();
    if (j.contains("block_lo")) s.block_lo = j["block_lo"].get<int>();
    if (j.contains("block_hi")) s.block_hi = j["block_hi"].get<int>();
    s.precision = precision_from_string(j.value("precision", std::string("f32")));
}

enum class RunMode { text, singular };

inline std::string to_string(RunMode m) { return m == RunMode::text ? "text" : "singular"; }
inline RunMode run_mode_from_string(const std::string& s) {
    if (s == "text") return RunMode::text;
    if (s == "singular") return RunMode::singular;
    throw ValidationError("unknown run mode: " + s);
}

// One capture run: input generation settings plus capture/compression state.
struct RunConfig {
    RunMode mode = RunMode::text;
    std::string corpus_path;
    size_t n_samples = 0;
    size_t seq_len = 0; // probe positions; singular mode forces 1
    bool prepend_bos = false;
    bool singular_random = false; // seeded subsample instead of first-n ids
    CaptureSpec capture;
    std::optional<size_t> compress_to;
    uint64_t seed = 0;

    void validate(const ModelConfig& model) const {
        if (n_samples == 0) throw ValidationError("run config: n_samples must be positive");
        if (mode == RunMode::text) {
            if (corpus_path.empty()) throw ValidationError("text mode requires a corpus path");
            if (seq_len == 0) throw ValidationError("text mode requires seq_len >= 1");
            if (seq_len > model.max_seq)
                throw ValidationError("seq_len exceeds the model's max_seq");
        } else {
            if (n_samples > model.vocab_size)
                throw ValidationError("singular mode: n_samples exceeds vocab size");
        }
        if (compress_to && *compress_to >= model.d_model)
            throw ValidationError("compress_to must be smaller than d_model");
        if (prepend_bos && !model.bos_id)
            throw ValidationError("prepend_bos requires the model to define a BOS id");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"mode", to_string(c.mode)},
                       {"corpus_path", c.corpus_path},
                       {"n_samples", c.n_samples},
                       {"seq_len", c.seq_len},
                       {"prepend_bos", c.prepend_bos},
                       {"singular_random", c.singular_random},
                       {"capture", c.capture},
                       {"seed", c.seed}};
    if (c.compress_to) j["compress_to"] = *c.compress_to;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    c.mode = run_mode_from_string(j.at("mode").get<std::string>());
    c.corpus_path = j.value("corpus_path", std::string());
    j.at("n_samples").get_to(c.n_samples);
    j.at("seq_len").get_to(c.seq_len);
    c.prepend_bos = j.value("prepend_bos", false);
    c.singular_random = j.value("singular_random", false);
    if (j.contains("capture")) c.capture = j["capture"].get<CaptureSpec>();
    if (j.contains("compress_to")) c.compress_to = j["compress_to"].get<size_t>();
    c.seed = j.value("seed", uint64_t{0});
}

} // namespace latentscope
