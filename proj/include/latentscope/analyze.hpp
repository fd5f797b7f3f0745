#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentscope/error.hpp"
#include "latentscope/store.hpp"
#include "latentscope/util.hpp"

namespace latentscope::analyze {

using store::LatentDataset;
using store::LatentView;
using store::Selection;

enum class AxisKind { position, capture, token };

inline std::string to_string(AxisKind a) {
    switch (a) {
        case AxisKind::position: return "position";
        case AxisKind::capture: return "capture";
        case AxisKind::token: return "token";
    }
    return "?";
}

// Mean L2 norms along one axis. Means are arithmetic over per-vector norms,
// not the norm of the mean vector.
struct NormReport {
    AxisKind axis = AxisKind::position;
    std::vector<size_t> indices;
    std::vector<double> means;
    std::vector<size_t> counts;
    std::vector<CaptureTag> tags; // aligned with indices for the capture axis
    std::string selection;
    bool full_dim_verified = false;
};

namespace detail {

inline void require_uncompressed(const LatentDataset& ds, const char* op) {
    if (ds.header.compressed)
        throw ValidationError(std::string(op) +
                              ": dataset was PCA-compressed at capture time; norm analyses "
                              "require the original full-dimension latent states");
}

} // namespace detail

inline NormReport norms_by_position(const LatentDataset& ds, const Selection& sel,
                                    int threads = 1) {
    detail::require_uncompressed(ds, "norms_by_position");
    LatentView view = store::select(ds, sel);
    NormReport r;
    r.axis = AxisKind::position;
    r.selection = sel.describe();
    r.full_dim_verified = true;
    const size_t Q = view.n_positions();
    r.indices.resize(Q);
    r.means.assign(Q, 0.0);
    r.counts.assign(Q, 0);
    parallel_for(Q, threads, [&](size_t qi) {
        std::vector<double> buf(view.dim());
        double sum = 0.0;
        size_t count = 0;
        for (size_t si = 0; si < view.n_samples(); ++si) {
            if (view.is_padded(si, qi)) continue;
            for (size_t ci = 0; ci < view.n_captures(); ++ci) {
                view.vector_at(si, qi, ci, buf.data());
                sum += linalg::l2_norm(buf.data(), buf.size());
                ++count;
            }
        }
        r.indices[qi] = view.position_labels()[qi];
        r.means[qi] = count ? sum / static_cast<double>(count) : 0.0;
        r.counts[qi] = count;
    });
    return r;
}

inline NormReport norms_by_capture(const LatentDataset& ds, const Selection& sel,
                                   int threads = 1) {
    detail::require_uncompressed(ds, "norms_by_capture");
    LatentView view = store::select(ds, sel);
    NormReport r;
    r.axis = AxisKind::capture;
    r.selection = sel.describe();
    r.full_dim_verified = true;
    const size_t C = view.n_captures();
    r.indices.resize(C);
    r.means.assign(C, 0.0);
    r.counts.assign(C, 0);
    r.tags = view.tags();
    parallel_for(C, threads, [&](size_t ci) {
        std::vector<double> buf(view.dim());
        double sum = 0.0;
        size_t count = 0;
        for (size_t si = 0; si < view.n_samples(); ++si) {
            for (size_t qi = 0; qi < view.n_positions(); ++qi) {
                if (view.is_padded(si, qi)) continue;
                view.vector_at(si, qi, ci, buf.data());
                sum += linalg::l2_norm(buf.data(), buf.size());
                ++count;
            }
        }
        r.indices[ci] = ci;
        r.means[ci] = count ? sum / static_cast<double>(count) : 0.0;
        r.counts[ci] = count;
    });
    return r;
}

struct Histogram {
    std::vector<double> edges;  // n_bins + 1, equal width over [0, max]
    std::vector<size_t> counts; // n_bins
    std::vector<uint32_t> token_ids;
    std::vector<double> token_means; // per-token mean norm, aligned with token_ids
    std::string selection;

    size_t total() const {
        size_t t = 0;
        for (size_t c : counts) t += c;
        return t;
    }
};

// Per-vocab-token mean norm over the selected captures of a singular-mode
// dataset, binned with equal widths over [0, max].
inline Histogram token_norm_histogram(const LatentDataset& ds, const Selection& sel,
                                      size_t n_bins, int threads = 1) {
    detail::require_uncompressed(ds, "token_norm_histogram");
    if (ds.header.run.mode != RunMode::singular)
        throw ValidationError("token_norm_histogram: dataset was not captured in singular mode");
    if (n_bins == 0) throw ValidationError("token_norm_histogram: need at least one bin");

    Selection probe_sel = sel;
    // the probe token sits at position 0, or 1 when a BOS was prepended
    size_t probe = ds.header.probe_position();
    probe_sel.seq_range = {{probe, probe}};
    probe_sel.exclude_position_0 = false;
    LatentView view = store::select(ds, probe_sel);

    Histogram h;
    h.selection = sel.describe();
    const size_t S = view.n_samples();
    h.token_ids.resize(S);
    h.token_means.assign(S, 0.0);
    parallel_for(S, threads, [&](size_t si) {
        std::vector<double> buf(view.dim());
        double sum = 0.0;
        size_t count = 0;
        for (size_t ci = 0; ci < view.n_captures(); ++ci) {
            view.vector_at(si, 0, ci, buf.data());
            sum += linalg::l2_norm(buf.data(), buf.size());
            ++count;
        }
        size_t orig = view.sample_labels()[si];
        h.token_ids[si] = orig < ds.header.singular_ids.size()
                              ? ds.header.singular_ids[orig]
                              : static_cast<uint32_t>(orig);
        h.token_means[si] = count ? sum / static_cast<double>(count) : 0.0;
    });

    double max_norm = 0.0;
    for (double m : h.token_means) max_norm = std::max(max_norm, m);
    if (max_norm == 0.0) max_norm = 1.0;
    h.edges.resize(n_bins + 1);
    for (size_t b = 0; b <= n_bins; ++b)
        h.edges[b] = max_norm * static_cast<double>(b) / static_cast<double>(n_bins);
    h.counts.assign(n_bins, 0);
    for (double m : h.token_means) {
        size_t bin = static_cast<size_t>(std::floor(m / max_norm * static_cast<double>(n_bins)));
        if (bin >= n_bins) bin = n_bins - 1; // the max value lands in the last bin
        ++h.counts[bin];
    }
    return h;
}

// CSV: one row per index (index, mean, count).
inline std::string to_csv(const NormReport& r) {
    std::string out = "index,mean,count\n";
    for (size_t i = 0; i < r.indices.size(); ++i) {
        out += std::to_string(r.indices[i]);
        out += ',';
        out += format_double(r.means[i]);
        out += ',';
        out += std::to_string(r.counts[i]);
        out += '\n';
    }
    return out;
}

inline std::string to_csv(const Histogram& h) {
    std::string out = "bin,lo,hi,count\n";
    for (size_t b = 0; b < h.counts.size(); ++b) {
        out += std::to_string(b);
        out += ',';
        out += format_double(h.edges[b]);
        out += ',';
        out += format_double(h.edges[b + 1]);
        out += ',';
        out += std::to_string(h.counts[b]);
        out += '\n';
    }
    return out;
}

} // namespace latentscope::analyze
