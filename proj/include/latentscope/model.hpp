#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "latentscope/checkpoint.hpp"
#include "latentscope/config.hpp"
#include "latentscope/error.hpp"

namespace latentscope::model {

using ckpt::BlockWeights;
using ckpt::ModelWeights;

namespace detail {

// y = x W (+ b), with x [seq, d_in] and W [d_in, d_out] row-major. Weights
// are stored in 32-bit; all arithmetic is 64-bit.
inline void linear(const double* x, size_t seq, size_t d_in, const std::vector<float>& w,
                   const std::vector<float>& b, size_t d_out, double* y) {
    for (size_t s = 0; s < seq; ++s) {
        double* ys = y + s * d_out;
        if (b.empty())
            std::fill(ys, ys + d_out, 0.0);
        else
            for (size_t j = 0; j < d_out; ++j) ys[j] = b[j];
        const double* xs = x + s * d_in;
        for (size_t k = 0; k < d_in; ++k) {
            double a = xs[k];
            if (a == 0.0) continue;
            const float* wrow = w.data() + k * d_out;
            for (size_t j = 0; j < d_out; ++j) ys[j] += a * wrow[j];
        }
    }
}

inline double gelu_tanh(double x) {
    return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// In-place rotary rotation of one head-sized slice at absolute position m.
// Dimension pairs are (2i, 2i+1) with theta_i = rope_theta^(-2i/d_head).
inline void apply_rope(double* head, size_t d_head, size_t m, double rope_theta) {
    for (size_t i = 0; i * 2 < d_head; ++i) {
        double theta =
            std::pow(rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
        double angle = static_cast<double>(m) * theta;
        double c = std::cos(angle), s = std::sin(angle);
        double x0 = head[2 * i], x1 = head[2 * i + 1];
        head[2 * i] = x0 * c - x1 * s;
        head[2 * i + 1] = x0 * s + x1 * c;
    }
}

} // namespace detail

// Normalization over the model dimension, eps = 1e-5. Bias may be empty.
inline std::vector<double> normalize(const std::vector<double>& x, size_t seq, size_t d,
                                     NormKind kind, const std::vector<float>& gain,
                                     const std::vector<float>& bias) {
    constexpr double kEps = 1e-5;
    std::vector<double> out(x.size());
    for (size_t s = 0; s < seq; ++s) {
        const double* xs = x.data() + s * d;
        double* os = out.data() + s * d;
        if (kind == NormKind::layernorm) {
            double mean = 0.0;
            for (size_t i = 0; i < d; ++i) mean += xs[i];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (size_t i = 0; i < d; ++i) var += (xs[i] - mean) * (xs[i] - mean);
            var /= static_cast<double>(d);
            double inv = 1.0 / std::sqrt(var + kEps);
            for (size_t i = 0; i < d; ++i) {
                double v = (xs[i] - mean) * inv * gain[i];
                if (!bias.empty()) v += bias[i];
                os[i] = v;
            }
        } else {
            double ms = 0.0;
            for (size_t i = 0; i < d; ++i) ms += xs[i] * xs[i];
            ms /= static_cast<double>(d);
            double inv = 1.0 / std::sqrt(ms + kEps);
            for (size_t i = 0; i < d; ++i) {
                double v = xs[i] * inv * gain[i];
                if (!bias.empty()) v += bias[i];
                os[i] = v;
            }
        }
    }
    return out;
}

// Causal multi-head self-attention on normalized input; returns the pre-add
// contribution (capture point 2). Masked positions contribute exactly zero
// after softmax: exp(-1e9 - max) underflows to +0, so skipping them is
// bit-identical to adding the mask.
inline std::vector<double> attention(const std::vector<double>& x_normed, size_t seq,
                                     const BlockWeights& blk, const ModelConfig& cfg,
                                     const std::vector<size_t>& positions) {
    const size_t d = cfg.d_model, nh = cfg.n_heads, dh = cfg.d_head();
    std::vector<double> qkv(seq * 3 * d);
    detail::linear(x_normed.data(), seq, d, blk.qkv_w, blk.qkv_b, 3 * d, qkv.data());
    if (cfg.pos_kind == PosKind::rope) {
        for (size_t s = 0; s < seq; ++s) {
            for (size_t h = 0; h < nh; ++h) {
                detail::apply_rope(qkv.data() + s * 3 * d + h * dh, dh, positions[s],
                                   cfg.rope_theta);
                detail::apply_rope(qkv.data() + s * 3 * d + d + h * dh, dh, positions[s],
                                   cfg.rope_theta);
            }
        }
    }
    std::vector<double> mixed(seq * d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> scores;
    for (size_t h = 0; h < nh; ++h) {
        for (size_t s = 0; s < seq; ++s) {
            const double* q = qkv.data() + s * 3 * d + h * dh;
            scores.assign(s + 1, 0.0);
            double max_score = -1e300;
            for (size_t t = 0; t <= s; ++t) {
                const double* k = qkv.data() + t * 3 * d + d + h * dh;
                double dotv = 0.0;
                for (size_t i = 0; i < dh; ++i) dotv += q[i] * k[i];
                scores[t] = dotv * scale;
                if (scores[t] > max_score) max_score = scores[t];
            }
            double denom = 0.0;
            for (size_t t = 0; t <= s; ++t) {
                scores[t] = std::exp(scores[t] - max_score);
                denom += scores[t];
            }
            double* out = mixed.data() + s * d + h * dh;
            for (size_t i = 0; i < dh; ++i) {
                double acc = 0.0;
                for (size_t t = 0; t <= s; ++t)
                    acc += scores[t] * qkv[t * 3 * d + 2 * d + h * dh + i];
                out[i] = acc / denom;
            }
        }
    }
    std::vector<double> out(seq * d);
    detail::linear(mixed.data(), seq, d, blk.out_w, blk.out_b, d, out.data());
    return out;
}

// MLP on normalized input; pre-add contribution (capture point 5). GELU uses
// the tanh approximation; the silu path is gated.
inline std::vector<double> mlp(const std::vector<double>& x_normed, size_t seq,
                               const BlockWeights& blk, const ModelConfig& cfg) {
    const size_t d = cfg.d_model, dm = cfg.d_mlp;
    std::vector<double> out(seq * d);
    if (cfg.activation == Activation::gelu) {
        std::vector<double> hidden(seq * dm);
        detail::linear(x_normed.data(), seq, d, blk.mlp_fc_w, blk.mlp_fc_b, dm, hidden.data());
        for (auto& v : hidden) v = detail::gelu_tanh(v);
        detail::linear(hidden.data(), seq, dm, blk.mlp_proj_w, blk.mlp_proj_b, d, out.data());
    } else {
        std::vector<double> gate(seq * dm), up(seq * dm);
        detail::linear(x_normed.data(), seq, d, blk.mlp_gate_w, {}, dm, gate.data());
        detail::linear(x_normed.data(), seq, d, blk.mlp_up_w, {}, dm, up.data());
        for (size_t i = 0; i < gate.size(); ++i) gate[i] = detail::silu(gate[i]) * up[i];
        detail::linear(gate.data(), seq, dm, blk.mlp_down_w, {}, d, out.data());
    }
    return out;
}

struct ForwardResult {
    std::vector<CaptureTag> tags;              // enumeration order of `captures`
    std::vector<std::vector<double>> captures; // each [seq, d_model]
    std::vector<double> logits;                // [seq, vocab]; empty if not requested
};

// Full-sequence instrumented forward pass (no KV cache; analysis workloads
// are single-pass). Captures are recorded in enumeration order: embedding,
// then points 1-6 per block, then the final norm.
inline ForwardResult forward(const ModelWeights& w, const std::vector<uint32_t>& tokens,
                             const CaptureSpec& spec = CaptureSpec{}, bool want_logits = true) {
    const ModelConfig& cfg = w.cfg;
    const size_t seq = tokens.size(), d = cfg.d_model;
    if (seq == 0) throw ValidationError("forward: empty token sequence");
    if (seq > cfg.max_seq)
        throw ValidationError("forward: sequence length " + std::to_string(seq) +
                              " exceeds max_seq " + std::to_string(cfg.max_seq));
    for (uint32_t t : tokens)
        if (t >= cfg.vocab_size)
            throw ValidationError("forward: token id " + std::to_string(t) + " out of range");

    ForwardResult result;
    result.tags = spec.resolve(cfg.n_blocks);
    result.captures.resize(result.tags.size());
    auto slot_of = [&](const CaptureTag& want) -> int {
        for (size_t i = 0; i < result.tags.size(); ++i)
            if (result.tags[i] == want) return static_cast<int>(i);
        return -1;
    };
    auto record = [&](const CaptureTag& tag, const std::vector<double>& x) {
        for (double v : x)
            if (!std::isfinite(v))
                throw NumericError("forward: non-finite activation at " + tag.label());
        int slot = slot_of(tag);
        if (slot >= 0) result.captures[static_cast<size_t>(slot)] = x;
    };

    std::vector<size_t> positions(seq);
    for (size_t s = 0; s < seq; ++s) positions[s] = s;

    std::vector<double> resid(seq * d);
    for (size_t s = 0; s < seq; ++s) {
        const float* te = w.tok_emb.data() + static_cast<size_t>(tokens[s]) * d;
        double* rs = resid.data() + s * d;
        if (cfg.pos_kind == PosKind::learned) {
            const float* pe = w.pos_emb.data() + s * d;
            for (size_t i = 0; i < d; ++i) rs[i] = static_cast<double>(te[i]) + pe[i];
        } else {
            for (size_t i = 0; i < d; ++i) rs[i] = te[i];
        }
    }
    record(CaptureTag::embedding(), resid);

    for (size_t b = 0; b < cfg.n_blocks; ++b) {
        const BlockWeights& blk = w.blocks[b];
        auto n1 = normalize(resid, seq, d, cfg.norm_kind, blk.norm_attn_g, blk.norm_attn_b);
        record(CaptureTag::for_point(static_cast<int>(b), 1), n1);
        auto attn_out = attention(n1, seq, blk, cfg, positions);
        record(CaptureTag::for_point(static_cast<int>(b), 2), attn_out);
        for (size_t i = 0; i < resid.size(); ++i) resid[i] += attn_out[i];
        record(CaptureTag::for_point(static_cast<int>(b), 3), resid);
        auto n2 = normalize(resid, seq, d, cfg.norm_kind, blk.norm_mlp_g, blk.norm_mlp_b);
        record(CaptureTag::for_point(static_cast<int>(b), 4), n2);
        auto mlp_out = mlp(n2, seq, blk, cfg);
        record(CaptureTag::for_point(static_cast<int>(b), 5), mlp_out);
        for (size_t i = 0; i < resid.size(); ++i) resid[i] += mlp_out[i];
        record(CaptureTag::for_point(static_cast<int>(b), 6), resid);
    }

    auto fin = normalize(resid, seq, d, cfg.norm_kind, w.final_norm_g, w.final_norm_b);
    record(CaptureTag::final_norm(), fin);

    if (want_logits) {
        result.logits.resize(seq * cfg.vocab_size);
        detail::linear(fin.data(), seq, d, w.unembed, {}, cfg.vocab_size, result.logits.data());
    }
    return result;
}

} // namespace latentscope::model
