#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentscope/config.hpp"
#include "latentscope/error.hpp"
#include "latentscope/util.hpp"

namespace latentscope::ckpt {

enum class Dtype { f32, f16 };

inline size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 2; }
inline std::string dtype_name(Dtype d) { return d == Dtype::f32 ? "F32" : "F16"; }
inline Dtype dtype_from_name(const std::string& s) {
    if (s == "F32") return Dtype::f32;
    if (s == "F16") return Dtype::f16;
    throw ValidationError("unsupported tensor dtype: " + s + " (expected F32 or F16)");
}

struct TensorEntry {
    Dtype dtype = Dtype::f32;
    std::vector<size_t> shape;
    size_t begin = 0; // byte offsets into the payload
    size_t end = 0;

    size_t element_count() const {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }
};

// Single-file named-tensor container: u64 little-endian header length, JSON
// header {name: {dtype, shape, data_offsets}}, then the raw payload.
class TensorContainer {
public:
    static TensorContainer open(const std::string& path) {
        TensorContainer c;
        c.path_ = path;
        c.map_.open(path);
        if (c.map_.size() < 8) throw FormatError(path + ": too small for a container header");
        uint64_t header_len = 0;
        std::memcpy(&header_len, c.map_.data(), 8);
        if (header_len == 0 || header_len > c.map_.size() - 8)
            throw FormatError(path + ": header length " + std::to_string(header_len) +
                              " exceeds file size");
        const char* hp = reinterpret_cast<const char*>(c.map_.data() + 8);
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(std::string_view(hp, header_len));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(path + ": bad container header: " + e.what());
        }
        if (!header.is_object()) throw FormatError(path + ": container header must be an object");
        c.payload_offset_ = 8 + header_len;
        size_t payload_size = c.map_.size() - c.payload_offset_;
        size_t covered = 0;
        for (auto& [name, desc] : header.items()) {
            if (name == "__metadata__") {
                for (auto& [k, v] : desc.items()) c.metadata_[k] = v.get<std::string>();
                continue;
            }
            TensorEntry e;
            e.dtype = dtype_from_name(desc.at("dtype").get<std::string>());
            e.shape = desc.at("shape").get<std::vector<size_t>>();
            auto offs = desc.at("data_offsets").get<std::vector<size_t>>();
            if (offs.size() != 2) throw FormatError(path + ": bad data_offsets for " + name);
            e.begin = offs[0];
            e.end = offs[1];
            if (e.begin > e.end || e.end > payload_size)
                throw ValidationError(path + ": tensor '" + name +
                                      "' extends past the payload (truncated file?)");
            if (e.end - e.begin != e.element_count() * dtype_size(e.dtype))
                throw ValidationError(path + ": tensor '" + name +
                                      "' byte span does not match its shape");
            covered += e.end - e.begin;
            c.entries_.emplace(name, std::move(e));
        }
        // non-overlap: spans must tile the payload exactly
        std::vector<std::pair<size_t, size_t>> spans;
        spans.reserve(c.entries_.size());
        for (auto& [_, e] : c.entries_) spans.emplace_back(e.begin, e.end);
        std::sort(spans.begin(), spans.end());
        for (size_t i = 1; i < spans.size(); ++i)
            if (spans[i].first < spans[i - 1].second)
                throw ValidationError(path + ": overlapping tensor offsets");
        if (covered != payload_size)
            throw ValidationError(path + ": payload has " + std::to_string(payload_size) +
                                  " bytes but entries cover " + std::to_string(covered));
        return c;
    }

    const std::map<std::string, TensorEntry>& entries() const { return entries_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    const std::string& path() const { return path_; }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    const TensorEntry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end())
            throw ValidationError(path_ + ": no tensor named '" + name + "'");
        return it->second;
    }

    const uint8_t* raw(const TensorEntry& e) const {
        return map_.data() + payload_offset_ + e.begin;
    }

    // f16 entries are widened to f32 on read.
    std::vector<float> read_f32(const std::string& name) const {
        const TensorEntry& e = entry(name);
        std::vector<float> out(e.element_count());
        const uint8_t* p = raw(e);
        if (e.dtype == Dtype::f32) {
            std::memcpy(out.data(), p, out.size() * 4);
        } else {
            for (size_t i = 0; i < out.size(); ++i) {
                uint16_t h;
                std::memcpy(&h, p + i * 2, 2);
                out[i] = half_to_float(h);
            }
        }
        return out;
    }

private:
    std::string path_;
    MappedFile map_;
    size_t payload_offset_ = 0;
    std::map<std::string, TensorEntry> entries_;
    std::map<std::string, std::string> metadata_;
};

struct TensorToWrite {
    Dtype dtype = Dtype::f32;
    std::vector<size_t> shape;
    std::vector<uint8_t> bytes;
};

// Writes the container layout above. Entries are laid out in name order so
// the output is deterministic.
inline void write_container(const std::string& path,
                            const std::map<std::string, TensorToWrite>& tensors,
                            const std::map<std::string, std::string>& metadata = {}) {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata.empty()) {
        nlohmann::json meta = nlohmann::json::object();
        for (auto& [k, v] : metadata) meta[k] = v;
        header["__metadata__"] = meta;
    }
    size_t offset = 0;
    for (auto& [name, t] : tensors) {
        size_t elems = 1;
        for (size_t d : t.shape) elems *= d;
        if (t.bytes.size() != elems * dtype_size(t.dtype))
            throw ValidationError("write_container: byte count mismatch for '" + name + "'");
        header[name] = {{"dtype", dtype_name(t.dtype)},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + t.bytes.size()}}};
        offset += t.bytes.size();
    }
    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write container: " + path);
    uint64_t header_len = hs.size();
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.bytes.data()),
                  static_cast<std::streamsize>(t.bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

// --- weight binding ---

struct BlockWeights {
    std::vector<float> norm_attn_g, norm_attn_b;
    std::vector<float> qkv_w; // [d, 3d] row-major
    std::vector<float> qkv_b;
    std::vector<float> out_w; // [d, d]
    std::vector<float> out_b;
    std::vector<float> mlp_fc_w; // gelu path: [d, d_mlp]
    std::vector<float> mlp_fc_b;
    std::vector<float> mlp_proj_w; // [d_mlp, d]
    std::vector<float> mlp_proj_b;
    std::vector<float> norm_mlp_g, norm_mlp_b;
    std::vector<float> mlp_gate_w; // silu path: [d, d_mlp]
    std::vector<float> mlp_up_w;   // [d, d_mlp]
    std::vector<float> mlp_down_w; // [d_mlp, d]
};

struct ModelWeights {
    ModelConfig cfg;
    std::vector<float> tok_emb; // [vocab, d]
    std::vector<float> pos_emb; // [max_seq, d]; empty for rope
    std::vector<BlockWeights> blocks;
    std::vector<float> final_norm_g, final_norm_b;
    std::vector<float> unembed; // [d, vocab]
    bool tied_unembedding = false;
    size_t bound_tensors = 0;
};

// Naming conventions. gpt2 checkpoints store projection weights [in, out]
// (convolution style, already transposed relative to linear layers); the
// generic convention uses linear [out, in] and is transposed on bind.
enum class WeightNaming { gpt2, generic };

inline WeightNaming naming_from_string(const std::string& s) {
    if (s == "gpt2") return WeightNaming::gpt2;
    if (s == "generic") return WeightNaming::generic;
    throw ValidationError("unknown weight naming convention: " + s);
}

namespace detail {

struct Binder {
    const TensorContainer& c;
    std::string prefix;
    size_t bound = 0;

    std::string resolve(const std::string& name, const std::string& slot) const {
        if (c.has(prefix + name)) return prefix + name;
        if (c.has(name)) return name;
        throw ValidationError("binding error: missing slot '" + slot + "' (expected tensor '" +
                              prefix + name + "')");
    }

    std::vector<float> fetch(const std::string& name, const std::string& slot,
                             const std::vector<size_t>& want_shape, bool transpose) {
        std::string full = resolve(name, slot);
        const TensorEntry& e = c.entry(full);
        std::vector<size_t> disk_shape = want_shape;
        if (transpose && want_shape.size() == 2) disk_shape = {want_shape[1], want_shape[0]};
        if (e.shape != disk_shape) {
            auto fmt = [](const std::vector<size_t>& s) {
                std::string r = "[";
                for (size_t i = 0; i < s.size(); ++i)
                    r += (i ? "," : "") + std::to_string(s[i]);
                return r + "]";
            };
            throw ValidationError("shape mismatch for slot '" + slot + "' (tensor '" + full +
                                  "'): checkpoint has " + fmt(e.shape) + ", model wants " +
                                  fmt(disk_shape));
        }
        std::vector<float> data = c.read_f32(full);
        ++bound;
        if (transpose && want_shape.size() == 2) {
            std::vector<float> t(data.size());
            size_t r = disk_shape[0], cc = disk_shape[1];
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < cc; ++j) t[j * r + i] = data[i * cc + j];
            return t;
        }
        return data;
    }
};

} // namespace detail

inline ModelWeights bind_weights(const TensorContainer& c, const ModelConfig& cfg,
                                 WeightNaming naming) {
    cfg.validate();
    ModelWeights w;
    w.cfg = cfg;
    const size_t d = cfg.d_model, dm = cfg.d_mlp, v = cfg.vocab_size, s = cfg.max_seq;
    const bool biased = cfg.norm_kind == NormKind::layernorm;

    detail::Binder bind{c, "", 0};
    if (naming == WeightNaming::gpt2) {
        if (!c.has("wte.weight") && c.has("transformer.wte.weight")) bind.prefix = "transformer.";
        w.tok_emb = bind.fetch("wte.weight", "token embedding", {v, d}, false);
        if (cfg.pos_kind == PosKind::learned)
            w.pos_emb = bind.fetch("wpe.weight", "positional embedding", {s, d}, false);
        w.blocks.resize(cfg.n_blocks);
        for (size_t b = 0; b < cfg.n_blocks; ++b) {
            std::string p = "h." + std::to_string(b) + ".";
            auto& blk = w.blocks[b];
            blk.norm_attn_g = bind.fetch(p + "ln_1.weight", "block " + std::to_string(b) +
                                         " attn norm gain", {d}, false);
            blk.norm_attn_b = bind.fetch(p + "ln_1.bias", "block " + std::to_string(b) +
                                         " attn norm bias", {d}, false);
            blk.qkv_w = bind.fetch(p + "attn.c_attn.weight", "qkv weight", {d, 3 * d}, false);
            blk.qkv_b = bind.fetch(p + "attn.c_attn.bias", "qkv bias", {3 * d}, false);
            blk.out_w = bind.fetch(p + "attn.c_proj.weight", "attn out weight", {d, d}, false);
            blk.out_b = bind.fetch(p + "attn.c_proj.bias", "attn out bias", {d}, false);
            blk.norm_mlp_g = bind.fetch(p + "ln_2.weight", "mlp norm gain", {d}, false);
            blk.norm_mlp_b = bind.fetch(p + "ln_2.bias", "mlp norm bias", {d}, false);
            blk.mlp_fc_w = bind.fetch(p + "mlp.c_fc.weight", "mlp fc weight", {d, dm}, false);
            blk.mlp_fc_b = bind.fetch(p + "mlp.c_fc.bias", "mlp fc bias", {dm}, false);
            blk.mlp_proj_w = bind.fetch(p + "mlp.c_proj.weight", "mlp proj weight", {dm, d}, false);
            blk.mlp_proj_b = bind.fetch(p + "mlp.c_proj.bias", "mlp proj bias", {d}, false);
        }
        w.final_norm_g = bind.fetch("ln_f.weight", "final norm gain", {d}, false);
        w.final_norm_b = bind.fetch("ln_f.bias", "final norm bias", {d}, false);
    } else {
        w.tok_emb = bind.fetch("tok_embeddings.weight", "token embedding", {v, d}, false);
        if (cfg.pos_kind == PosKind::learned)
            w.pos_emb = bind.fetch("pos_embeddings.weight", "positional embedding", {s, d}, false);
        w.blocks.resize(cfg.n_blocks);
        for (size_t b = 0; b < cfg.n_blocks; ++b) {
            std::string p = "blocks." + std::to_string(b) + ".";
            std::string bl = "block " + std::to_string(b) + " ";
            auto& blk = w.blocks[b];
            blk.norm_attn_g = bind.fetch(p + "attn_norm.weight", bl + "attn norm gain", {d}, false);
            if (biased)
                blk.norm_attn_b = bind.fetch(p + "attn_norm.bias", bl + "attn norm bias", {d}, false);
            blk.qkv_w = bind.fetch(p + "attn.qkv.weight", bl + "qkv weight", {d, 3 * d}, true);
            if (biased) blk.qkv_b = bind.fetch(p + "attn.qkv.bias", bl + "qkv bias", {3 * d}, false);
            blk.out_w = bind.fetch(p + "attn.out.weight", bl + "attn out weight", {d, d}, true);
            if (biased)
                blk.out_b = bind.fetch(p + "attn.out.bias", bl + "attn out bias", {d}, false);
            blk.norm_mlp_g = bind.fetch(p + "mlp_norm.weight", bl + "mlp norm gain", {d}, false);
            if (biased)
                blk.norm_mlp_b = bind.fetch(p + "mlp_norm.bias", bl + "mlp norm bias", {d}, false);
            if (cfg.activation == Activation::gelu) {
                blk.mlp_fc_w = bind.fetch(p + "mlp.fc.weight", bl + "mlp fc weight", {d, dm}, true);
                if (biased)
                    blk.mlp_fc_b = bind.fetch(p + "mlp.fc.bias", bl + "mlp fc bias", {dm}, false);
                blk.mlp_proj_w =
                    bind.fetch(p + "mlp.proj.weight", bl + "mlp proj weight", {dm, d}, true);
                if (biased)
                    blk.mlp_proj_b =
                        bind.fetch(p + "mlp.proj.bias", bl + "mlp proj bias", {d}, false);
            } else {
                blk.mlp_gate_w =
                    bind.fetch(p + "mlp.gate.weight", bl + "mlp gate weight", {d, dm}, true);
                blk.mlp_up_w = bind.fetch(p + "mlp.up.weight", bl + "mlp up weight", {d, dm}, true);
                blk.mlp_down_w =
                    bind.fetch(p + "mlp.down.weight", bl + "mlp down weight", {dm, d}, true);
            }
        }
        w.final_norm_g = bind.fetch("final_norm.weight", "final norm gain", {d}, false);
        if (biased) w.final_norm_b = bind.fetch("final_norm.bias", "final norm bias", {d}, false);
    }

    // unembedding: explicit tensor if present, else tied to the token
    // embedding transpose
    std::string unembed_name = naming == WeightNaming::gpt2 ? "lm_head.weight" : "unembed.weight";
    if (c.has(bind.prefix + unembed_name) || c.has(unembed_name)) {
        w.unembed = bind.fetch(unembed_name, "unembedding", {d, v}, true);
        w.tied_unembedding = false;
    } else {
        w.unembed.resize(d * v);
        for (size_t i = 0; i < v; ++i)
            for (size_t j = 0; j < d; ++j) w.unembed[j * v + i] = w.tok_emb[i * d + j];
        w.tied_unembedding = true;
    }
    w.bound_tensors = bind.bound;
    return w;
}

// Model-config resolution for a container: embedded metadata first, then an
// HF-style config.json sitting next to the checkpoint.
inline std::optional<ModelConfig> config_from_metadata(const TensorContainer& c) {
    auto it = c.metadata().find("latentscope.model_config");
    if (it == c.metadata().end()) return std::nullopt;
    ModelConfig cfg = nlohmann::json::parse(it->second).get<ModelConfig>();
    return cfg;
}

inline std::optional<ModelConfig> config_from_sidecar(const std::string& container_path) {
    auto sidecar = std::filesystem::path(container_path).parent_path() / "config.json";
    std::ifstream in(sidecar);
    if (!in.good()) return std::nullopt;
    nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
    ModelConfig cfg;
    cfg.n_blocks = j.value("n_layer", 0);
    cfg.d_model = j.value("n_embd", 0);
    cfg.n_heads = j.value("n_head", 0);
    cfg.d_mlp = j.contains("n_inner") && !j["n_inner"].is_null()
                    ? j["n_inner"].get<size_t>()
                    : 4 * cfg.d_model;
    cfg.vocab_size = j.value("vocab_size", 0);
    cfg.max_seq = j.value("n_positions", j.value("n_ctx", 0));
    cfg.norm_kind = NormKind::layernorm;
    cfg.pos_kind = PosKind::learned;
    cfg.activation = Activation::gelu;
    if (j.contains("bos_token_id")) cfg.bos_id = j["bos_token_id"].get<uint32_t>();
    cfg.validate();
    return cfg;
}

inline ModelConfig resolve_config(const TensorContainer& c) {
    if (auto cfg = config_from_metadata(c)) return *cfg;
    if (auto cfg = config_from_sidecar(c.path())) return *cfg;
    throw ValidationError(c.path() +
                          ": no model config found (no embedded metadata and no config.json "
                          "next to the checkpoint)");
}

inline WeightNaming resolve_naming(const TensorContainer& c) {
    if (c.has("wte.weight") || c.has("transformer.wte.weight")) return WeightNaming::gpt2;
    return WeightNaming::generic;
}

} // namespace latentscope::ckpt
