#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latentscope/checkpoint.hpp"
#include "latentscope/config.hpp"
#include "latentscope/error.hpp"
#include "latentscope/model.hpp"
#include "latentscope/reduce.hpp"
#include "latentscope/store.hpp"
#include "latentscope/tokenizer.hpp"
#include "latentscope/util.hpp"

namespace latentscope::pipeline {

struct InputBatch {
    std::vector<std::vector<uint32_t>> rows; // [n_samples][seq_len]
    std::vector<size_t> pad_lengths;         // suffix padding per row (empty if none)
    std::vector<uint32_t> singular_ids;      // probe token per row (singular mode)
};

// Seeded passage windows from a tokenized corpus, truncated or padded to a
// fixed length. Start offsets are drawn uniformly; no overlap control beyond
// the seeding.
inline InputBatch sample_text_inputs(const std::string& corpus_path, size_t n_samples,
                                     size_t seq_len, const bpe::BpeVocab& vocab,
                                     bool prepend_bos, uint64_t seed,
                                     std::optional<uint32_t> bos_id = std::nullopt) {
    std::ifstream in(corpus_path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus: " + corpus_path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    if (text.empty()) throw ValidationError("corpus is empty: " + corpus_path);
    std::vector<uint32_t> corpus = vocab.encode(text);
    if (corpus.empty()) throw ValidationError("corpus tokenized to nothing: " + corpus_path);

    uint32_t bos = bos_id ? *bos_id : (vocab.bos_id() ? *vocab.bos_id() : 0);
    uint32_t pad = bos_id ? *bos_id : vocab.pad_id();
    size_t body_len = seq_len - (prepend_bos ? 1 : 0);
    if (prepend_bos && seq_len < 2)
        throw ValidationError("prepend_bos requires seq_len >= 2 in text mode");

    InputBatch batch;
    batch.rows.resize(n_samples);
    bool any_padding = corpus.size() < body_len;
    Rng rng(seed);
    for (size_t i = 0; i < n_samples; ++i) {
        auto& row = batch.rows[i];
        row.reserve(seq_len);
        if (prepend_bos) row.push_back(bos);
        size_t pad_len = 0;
        if (corpus.size() >= body_len) {
            size_t start = static_cast<size_t>(rand_below(rng, corpus.size() - body_len + 1));
            row.insert(row.end(), corpus.begin() + static_cast<ptrdiff_t>(start),
                       corpus.begin() + static_cast<ptrdiff_t>(start + body_len));
        } else {
            row.insert(row.end(), corpus.begin(), corpus.end());
            pad_len = body_len - corpus.size();
            row.resize(seq_len, pad);
        }
        if (any_padding) batch.pad_lengths.push_back(pad_len);
    }
    return batch;
}

// Individual vocabulary tokens as length-1 inputs (plus an optional leading
// BOS). Default is the first n ids in order; a seeded subsample is opt-in.
inline InputBatch sample_singular_inputs(size_t vocab_size, size_t n_samples, uint64_t seed,
                                         bool prepend_bos, std::optional<uint32_t> bos_id,
                                         bool random_subsample = false) {
    if (n_samples > vocab_size)
        throw ValidationError("singular mode: n_samples exceeds vocab size");
    if (prepend_bos && !bos_id)
        throw ValidationError("prepend_bos requires a BOS id");
    InputBatch batch;
    batch.rows.resize(n_samples);
    batch.singular_ids.resize(n_samples);
    std::vector<uint64_t> ids;
    if (random_subsample && n_samples < vocab_size) {
        Rng rng(seed);
        ids = sample_without_replacement(rng, vocab_size, n_samples);
    } else {
        ids.resize(n_samples);
        for (size_t i = 0; i < n_samples; ++i) ids[i] = i;
    }
    for (size_t i = 0; i < n_samples; ++i) {
        uint32_t tok = static_cast<uint32_t>(ids[i]);
        batch.singular_ids[i] = tok;
        if (prepend_bos) batch.rows[i] = {*bos_id, tok};
        else batch.rows[i] = {tok};
    }
    return batch;
}

// Uncentered PCA compression: fit on a seeded subsample of up to 200k latent
// vectors, then project everything. target == dim is allowed and is a pure
// change of basis.
inline std::pair<linalg::Matrix, reduce::PcaModel> compress_latents(const linalg::Matrix& x,
                                                                    size_t target,
                                                                    uint64_t seed) {
    if (target > x.cols)
        throw ValidationError("compress_latents: target dims exceed input dims");
    constexpr size_t kFitBudget = 200000;
    reduce::PcaModel m;
    if (x.rows <= kFitBudget) {
        m = reduce::pca_fit(x, target, "compression fit on all vectors");
    } else {
        Rng rng(seed);
        auto rows = sample_without_replacement(rng, x.rows, kFitBudget);
        linalg::Matrix sub(rows.size(), x.cols);
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy(x.row(rows[i]), x.row(rows[i]) + x.cols, sub.row(i));
        m = reduce::pca_fit(sub, target, "compression fit on 200000-vector subsample");
    }
    if (m.singular_values.back() == 0.0 && target > 1) {
        // all-zero trailing singular value means the sample rank is below target
        size_t rank = 0;
        while (rank < m.singular_values.size() && m.singular_values[rank] > 0.0) ++rank;
        if (rank < target)
            throw ValidationError("compress_latents: target dims " + std::to_string(target) +
                                  " exceed sample rank " + std::to_string(rank));
    }
    return {reduce::pca_transform(m, x), std::move(m)};
}

struct CaptureSummary {
    store::DatasetHeader header;
    std::string out_path;
    size_t bytes_written = 0;
    size_t samples_skipped = 0;
};

// Runs the instrumented forward over all sampled inputs and writes the
// dataset. Samples are processed by a worker pool in fixed-size waves and
// written in sample order, so output bytes do not depend on thread count.
// A sample whose forward hits non-finite activations is skipped and logged
// in the header instead of aborting the run.
inline CaptureSummary run_capture(const RunConfig& run_in, const ckpt::ModelWeights& weights,
                                  const bpe::BpeVocab* vocab, const std::string& out_path,
                                  int threads = 1) {
    const ModelConfig& cfg = weights.cfg;
    RunConfig run = run_in;
    if (run.mode == RunMode::singular) run.seq_len = run.prepend_bos ? 2 : 1;
    run.validate(cfg);

    InputBatch batch;
    if (run.mode == RunMode::text) {
        if (!vocab) throw ValidationError("text mode requires a tokenizer vocabulary");
        batch = sample_text_inputs(run.corpus_path, run.n_samples, run.seq_len, *vocab,
                                   run.prepend_bos, run.seed, cfg.bos_id);
    } else {
        batch = sample_singular_inputs(cfg.vocab_size, run.n_samples, run.seed, run.prepend_bos,
                                       cfg.bos_id, run.singular_random);
    }

    const auto tags = run.capture.resolve(cfg.n_blocks);
    const size_t seq = run.seq_len;
    const size_t d = cfg.d_model;
    const size_t vectors_per_sample = seq * tags.size();

    // forward pass per sample, in waves; buffers stay in double until the
    // storage cast
    std::vector<std::vector<double>> sample_bufs; // [sample][seq*captures*d]
    std::vector<uint8_t> ok;
    sample_bufs.resize(run.n_samples);
    ok.assign(run.n_samples, 0);
    size_t wave = std::max<size_t>(1, static_cast<size_t>(threads));
    for (size_t base = 0; base < run.n_samples; base += wave) {
        size_t count = std::min(wave, run.n_samples - base);
        parallel_for(count, threads, [&](size_t w) {
            size_t i = base + w;
            try {
                auto result = model::forward(weights, batch.rows[i], run.capture, false);
                auto& buf = sample_bufs[i];
                buf.resize(vectors_per_sample * d);
                // layout [seq, capture, d]
                for (size_t c = 0; c < tags.size(); ++c)
                    for (size_t q = 0; q < seq; ++q)
                        std::copy(result.captures[c].begin() + static_cast<ptrdiff_t>(q * d),
                                  result.captures[c].begin() + static_cast<ptrdiff_t>((q + 1) * d),
                                  buf.begin() +
                                      static_cast<ptrdiff_t>((q * tags.size() + c) * d));
                ok[i] = 1;
            } catch (const NumericError&) {
                ok[i] = 0; // skip-on-NaN: logged below, run continues
            }
        });
    }

    std::vector<size_t> skipped;
    std::vector<size_t> kept;
    for (size_t i = 0; i < run.n_samples; ++i) (ok[i] ? kept : skipped).push_back(i);
    if (kept.empty()) throw NumericError("run_capture: every sample hit non-finite activations");

    store::DatasetHeader header;
    header.model = cfg;
    header.run = run;
    header.seed = run.seed;
    header.captures = tags;
    header.skipped_samples = skipped;
    header.dtype = run.capture.precision;
    if (!batch.pad_lengths.empty())
        for (size_t i : kept) header.pad_lengths.push_back(batch.pad_lengths[i]);
    if (!batch.singular_ids.empty())
        for (size_t i : kept) header.singular_ids.push_back(batch.singular_ids[i]);

    size_t stored_dim = d;
    reduce::PcaModel compression_model;
    std::vector<double> projected; // only for the compressed path
    if (run.compress_to) {
        stored_dim = *run.compress_to;
        // gather all kept vectors as one matrix (fit subsampling happens
        // inside compress_latents)
        linalg::Matrix all(kept.size() * vectors_per_sample, d);
        for (size_t ki = 0; ki < kept.size(); ++ki)
            std::copy(sample_bufs[kept[ki]].begin(), sample_bufs[kept[ki]].end(),
                      all.row(ki * vectors_per_sample));
        auto [proj, pca] = compress_latents(all, stored_dim, run.seed ^ 0xC0FFEE);
        projected = std::move(proj.data);
        compression_model = std::move(pca);
        header.compressed = true;
        header.reducer_path = std::filesystem::path(out_path).filename().string() + ".pca.redm";
    }

    header.shape = {kept.size(), seq, tags.size(), stored_dim};
    nlohmann::json hj = header;
    std::string header_json = hj.dump();

    const bool f16 = header.dtype == Precision::f16;
    auto write_vec = [&](std::ofstream& out, Crc64& crc, const double* v, size_t len) {
        if (f16) {
            std::vector<uint16_t> tmp(len);
            for (size_t t = 0; t < len; ++t)
                tmp[t] = float_to_half(static_cast<float>(v[t]));
            out.write(reinterpret_cast<const char*>(tmp.data()),
                      static_cast<std::streamsize>(len * 2));
            crc.update(tmp.data(), len * 2);
        } else {
            std::vector<float> tmp(len);
            for (size_t t = 0; t < len; ++t) tmp[t] = static_cast<float>(v[t]);
            out.write(reinterpret_cast<const char*>(tmp.data()),
                      static_cast<std::streamsize>(len * 4));
            crc.update(tmp.data(), len * 4);
        }
    };

    store::write_latds(out_path, header_json, header.payload_bytes(),
                       [&](std::ofstream& out, Crc64& crc) {
                           if (run.compress_to) {
                               write_vec(out, crc, projected.data(), projected.size());
                           } else {
                               for (size_t i : kept)
                                   write_vec(out, crc, sample_bufs[i].data(),
                                             sample_bufs[i].size());
                           }
                       });
    if (run.compress_to) {
        reduce::Reducer r;
        r.pca = std::move(compression_model);
        auto reducer_full =
            std::filesystem::path(out_path).parent_path() / header.reducer_path;
        reduce::reducer_save(r, reducer_full.string());
    }

    CaptureSummary summary;
    summary.header = header;
    summary.out_path = out_path;
    summary.bytes_written = std::filesystem::file_size(out_path);
    summary.samples_skipped = skipped.size();
    return summary;
}

} // namespace latentscope::pipeline
