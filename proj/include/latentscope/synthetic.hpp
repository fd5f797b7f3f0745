#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "latentscope/checkpoint.hpp"
#include "latentscope/config.hpp"
#include "latentscope/util.hpp"

namespace latentscope::synth {

namespace detail {

inline ckpt::TensorToWrite tensor_f32(const std::vector<size_t>& shape,
                                      const std::vector<float>& data) {
    ckpt::TensorToWrite t;
    t.dtype = ckpt::Dtype::f32;
    t.shape = shape;
    t.bytes.resize(data.size() * 4);
    std::memcpy(t.bytes.data(), data.data(), t.bytes.size());
    return t;
}

inline std::vector<float> normal_vec(Rng& rng, size_t n, double sigma, double mean = 0.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(mean + sigma * rand_normal(rng));
    return v;
}

} // namespace detail

// Writes a seeded random-weight checkpoint in the generic naming convention,
// with the model config embedded as container metadata. Initialization keeps
// a pre-norm forward numerically tame at any depth.
inline void write_synthetic_checkpoint(const std::string& path, const ModelConfig& cfg,
                                       uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const size_t d = cfg.d_model, dm = cfg.d_mlp;
    const double w_sigma = 1.0 / std::sqrt(static_cast<double>(d));
    const double wm_sigma = 1.0 / std::sqrt(static_cast<double>(dm));
    const bool biased = cfg.norm_kind == NormKind::layernorm;

    std::map<std::string, ckpt::TensorToWrite> tensors;
    tensors["tok_embeddings.weight"] =
        detail::tensor_f32({cfg.vocab_size, d}, detail::normal_vec(rng, cfg.vocab_size * d, 1.0));
    if (cfg.pos_kind == PosKind::learned)
        tensors["pos_embeddings.weight"] =
            detail::tensor_f32({cfg.max_seq, d}, detail::normal_vec(rng, cfg.max_seq * d, 0.3));
    for (size_t b = 0; b < cfg.n_blocks; ++b) {
        std::string p = "blocks." + std::to_string(b) + ".";
        tensors[p + "attn_norm.weight"] =
            detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.02, 1.0));
        tensors[p + "mlp_norm.weight"] =
            detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.02, 1.0));
        if (biased) {
            tensors[p + "attn_norm.bias"] =
                detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.02));
            tensors[p + "mlp_norm.bias"] =
                detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.02));
        }
        tensors[p + "attn.qkv.weight"] =
            detail::tensor_f32({3 * d, d}, detail::normal_vec(rng, 3 * d * d, w_sigma));
        tensors[p + "attn.out.weight"] =
            detail::tensor_f32({d, d}, detail::normal_vec(rng, d * d, w_sigma));
        if (biased) {
            tensors[p + "attn.qkv.bias"] =
                detail::tensor_f32({3 * d}, detail::normal_vec(rng, 3 * d, 0.01));
            tensors[p + "attn.out.bias"] =
                detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.01));
        }
        if (cfg.activation == Activation::gelu) {
            tensors[p + "mlp.fc.weight"] =
                detail::tensor_f32({dm, d}, detail::normal_vec(rng, dm * d, w_sigma));
            tensors[p + "mlp.proj.weight"] =
                detail::tensor_f32({d, dm}, detail::normal_vec(rng, d * dm, wm_sigma));
            if (biased) {
                tensors[p + "mlp.fc.bias"] =
                    detail::tensor_f32({dm}, detail::normal_vec(rng, dm, 0.01));
                tensors[p + "mlp.proj.bias"] =
                    detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.01));
            }
        } else {
            tensors[p + "mlp.gate.weight"] =
                detail::tensor_f32({dm, d}, detail::normal_vec(rng, dm * d, w_sigma));
            tensors[p + "mlp.up.weight"] =
                detail::tensor_f32({dm, d}, detail::normal_vec(rng, dm * d, w_sigma));
            tensors[p + "mlp.down.weight"] =
                detail::tensor_f32({d, dm}, detail::normal_vec(rng, d * dm, wm_sigma));
        }
    }
    tensors["final_norm.weight"] = detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.02, 1.0));
    if (biased)
        tensors["final_norm.bias"] = detail::tensor_f32({d}, detail::normal_vec(rng, d, 0.02));

    nlohmann::json cfg_json = cfg;
    ckpt::write_container(path, tensors, {{"latentscope.model_config", cfg_json.dump()}});
}

} // namespace latentscope::synth
