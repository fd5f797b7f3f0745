#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentscope/error.hpp"
#include "latentscope/linalg.hpp"
#include "latentscope/util.hpp"

namespace latentscope::reduce {

using linalg::Matrix;

enum class Metric { euclidean, cosine };

inline std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }
inline Metric metric_from_string(const std::string& s) {
    if (s == "euclidean") return Metric::euclidean;
    if (s == "cosine") return Metric::cosine;
    throw ValidationError("unknown metric: " + s);
}

// --- uncentered PCA ---

// Basis rows are the top right singular vectors of the raw (uncentered) data
// matrix, so the origin maps to the origin.
struct PcaModel {
    size_t dim = 0;
    size_t k = 0;
    std::vector<double> basis;           // [k, dim], orthonormal rows
    std::vector<double> singular_values; // [k], descending
    std::string fitted_on;
    bool rank_deficient = false;

    std::vector<double> explained_ratio() const {
        double total = 0.0;
        for (double s : singular_values) total += s * s;
        std::vector<double> r(singular_values.size(), 0.0);
        if (total > 0)
            for (size_t i = 0; i < r.size(); ++i)
                r[i] = singular_values[i] * singular_values[i] / total;
        return r;
    }
};

// Fits via the Gram matrix X^T X and a symmetric Jacobi eigendecomposition.
// This route is algebraically independent of thin_svd's one-sided rotation
// path, which the tests use as the oracle.
inline PcaModel pca_fit(const Matrix& x, size_t k, const std::string& provenance = "") {
    if (x.rows < 1) throw ValidationError("pca_fit: empty input");
    if (k < 1 || k > std::min(x.rows, x.cols))
        throw ValidationError("pca_fit: k must be in [1, min(n, dim)]");
    if (!x.all_finite()) throw NumericError("pca_fit: input contains non-finite values");

    Matrix gram(x.cols, x.cols);
    for (size_t i = 0; i < x.cols; ++i) {
        for (size_t j = i; j < x.cols; ++j) {
            double s = 0.0;
            for (size_t r = 0; r < x.rows; ++r) s += x.at(r, i) * x.at(r, j);
            gram.at(i, j) = s;
            gram.at(j, i) = s;
        }
    }
    std::vector<double> evals;
    Matrix evecs;
    linalg::eigen_sym(gram, evals, evecs);

    PcaModel m;
    m.dim = x.cols;
    m.k = k;
    m.fitted_on = provenance;
    m.basis.resize(k * x.cols);
    m.singular_values.resize(k);
    double top = evals.empty() ? 0.0 : std::max(evals[0], 0.0);
    double rank_floor = top * static_cast<double>(std::max(x.rows, x.cols)) * 1e-15;
    for (size_t j = 0; j < k; ++j) {
        double lam = std::max(evals[j], 0.0);
        if (lam <= rank_floor) {
            m.singular_values[j] = 0.0; // beyond the data's rank
            m.rank_deficient = true;
        } else {
            m.singular_values[j] = std::sqrt(lam);
        }
        for (size_t i = 0; i < x.cols; ++i) m.basis[j * x.cols + i] = evecs.at(i, j);
    }
    return m;
}

inline Matrix pca_transform(const PcaModel& m, const Matrix& x) {
    if (x.cols != m.dim)
        throw ShapeError("pca_transform: input dim " + std::to_string(x.cols) +
                         " does not match model dim " + std::to_string(m.dim));
    Matrix out(x.rows, m.k);
    for (size_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        for (size_t j = 0; j < m.k; ++j)
            out.at(r, j) = linalg::dot(xr, m.basis.data() + j * m.dim, m.dim);
    }
    return out;
}

// --- distances ---

namespace detail {

inline double sq_euclidean(const float* a, const float* b, size_t d) {
    double s = 0.0;
    for (size_t i = 0; i < d; ++i) {
        double diff = static_cast<double>(a[i]) - b[i];
        s += diff * diff;
    }
    return s;
}

// cosine distance 1 - cos; zero vectors are distance 1 from everything
inline double cosine_dist(const float* a, const float* b, size_t d) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < d; ++i) {
        num += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    double c = num / (std::sqrt(na) * std::sqrt(nb));
    return 1.0 - c;
}

inline double point_dist(const float* a, const float* b, size_t d, Metric m) {
    return m == Metric::euclidean ? std::sqrt(sq_euclidean(a, b, d)) : cosine_dist(a, b, d);
}

} // namespace detail

// --- kNN graph construction ---

struct KnnGraph {
    size_t n = 0;
    size_t k = 0;
    std::vector<uint32_t> ids;  // [n, k]
    std::vector<double> dists;  // [n, k] ascending per row
    double audit_recall = 1.0;  // 1.0 for the exact path
};

// Threshold above which construction switches to neighbor descent.
constexpr size_t kExactKnnLimit = 20000;

inline KnnGraph exact_knn(const std::vector<float>& data, size_t n, size_t dim, size_t k,
                          Metric metric, int threads = 1) {
    if (k >= n) throw ValidationError("knn: need k < n");
    KnnGraph g;
    g.n = n;
    g.k = k;
    g.ids.resize(n * k);
    g.dists.resize(n * k);
    parallel_for(n, threads, [&](size_t i) {
        // fixed-size insertion keeps ties ordered by (dist, id)
        std::vector<std::pair<double, uint32_t>> best;
        best.reserve(k + 1);
        const float* a = data.data() + i * dim;
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = detail::point_dist(a, data.data() + j * dim, dim, metric);
            std::pair<double, uint32_t> cand{d, static_cast<uint32_t>(j)};
            if (best.size() == k && cand >= best.back()) continue;
            auto pos = std::lower_bound(best.begin(), best.end(), cand);
            best.insert(pos, cand);
            if (best.size() > k) best.pop_back();
        }
        for (size_t t = 0; t < k; ++t) {
            g.dists[i * k + t] = best[t].first;
            g.ids[i * k + t] = best[t].second;
        }
    });
    return g;
}

namespace detail {

struct DescentNeighbor {
    uint32_t id;
    double dist;
    bool is_new;
};

// NN-descent: iteratively refine random neighbor lists by comparing each
// point's neighbors with each other. Audited against exact search on a
// seeded sample; recall below 0.9 after a retry is a hard error.
inline KnnGraph nn_descent_knn(const std::vector<float>& data, size_t n, size_t dim, size_t k,
                               Metric metric, uint64_t seed, int threads) {
    Rng rng(seed);
    std::vector<std::vector<DescentNeighbor>> heaps(n); // sorted ascending by (dist, id)
    auto try_insert = [&](size_t v, uint32_t cand, double d) -> bool {
        auto& h = heaps[v];
        if (h.size() == k && d >= h.back().dist) return false;
        for (const auto& nb : h)
            if (nb.id == cand) return false;
        DescentNeighbor entry{cand, d, true};
        auto pos = std::lower_bound(h.begin(), h.end(), entry, [](const auto& x, const auto& y) {
            return x.dist < y.dist || (x.dist == y.dist && x.id < y.id);
        });
        h.insert(pos, entry);
        if (h.size() > k) h.pop_back();
        return true;
    };

    for (size_t v = 0; v < n; ++v) {
        while (heaps[v].size() < k) {
            uint32_t j = static_cast<uint32_t>(rand_below(rng, n));
            if (j == v) continue;
            try_insert(v, j, detail::point_dist(data.data() + v * dim, data.data() + j * dim,
                                                dim, metric));
        }
    }

    const size_t max_candidates = std::min<size_t>(k, 16);
    const int max_iters = 12;
    for (int iter = 0; iter < max_iters; ++iter) {
        // gather forward and reverse candidates, split by freshness
        std::vector<std::vector<uint32_t>> new_cand(n), old_cand(n);
        for (size_t v = 0; v < n; ++v) {
            for (auto& nb : heaps[v]) {
                auto& bucket = nb.is_new ? new_cand : old_cand;
                if (bucket[v].size() < max_candidates) bucket[v].push_back(nb.id);
                if (bucket[nb.id].size() < max_candidates)
                    bucket[nb.id].push_back(static_cast<uint32_t>(v));
            }
        }
        for (size_t v = 0; v < n; ++v)
            for (auto& nb : heaps[v]) nb.is_new = false;

        size_t updates = 0;
        for (size_t v = 0; v < n; ++v) {
            auto& nc = new_cand[v];
            auto& oc = old_cand[v];
            for (size_t x = 0; x < nc.size(); ++x) {
                for (size_t y = x + 1; y < nc.size(); ++y) {
                    if (nc[x] == nc[y]) continue;
                    double d = detail::point_dist(data.data() + nc[x] * dim,
                                                  data.data() + nc[y] * dim, dim, metric);
                    updates += try_insert(nc[x], nc[y], d);
                    updates += try_insert(nc[y], nc[x], d);
                }
                for (uint32_t o : oc) {
                    if (nc[x] == o) continue;
                    double d = detail::point_dist(data.data() + nc[x] * dim,
                                                  data.data() + o * dim, dim, metric);
                    updates += try_insert(nc[x], o, d);
                    updates += try_insert(o, nc[x], d);
                }
            }
        }
        if (updates < n * k / 1000 + 1) break;
    }

    KnnGraph g;
    g.n = n;
    g.k = k;
    g.ids.resize(n * k);
    g.dists.resize(n * k);
    for (size_t v = 0; v < n; ++v)
        for (size_t t = 0; t < k; ++t) {
            g.ids[v * k + t] = heaps[v][t].id;
            g.dists[v * k + t] = heaps[v][t].dist;
        }

    // audit: exact search on a seeded 1% sample must agree
    auto audit = [&]() {
        size_t sample = std::max<size_t>(10, std::min<size_t>(n / 100, 500));
        Rng audit_rng(seed ^ 0x9E3779B97F4A7C15ull);
        auto rows = sample_without_replacement(audit_rng, n, sample);
        std::vector<double> recalls(rows.size());
        parallel_for(rows.size(), threads, [&](size_t ri) {
            size_t i = rows[ri];
            std::vector<std::pair<double, uint32_t>> best;
            const float* a = data.data() + i * dim;
            for (size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double d = detail::point_dist(a, data.data() + j * dim, dim, metric);
                std::pair<double, uint32_t> cand{d, static_cast<uint32_t>(j)};
                if (best.size() == k && cand >= best.back()) continue;
                auto pos = std::lower_bound(best.begin(), best.end(), cand);
                best.insert(pos, cand);
                if (best.size() > k) best.pop_back();
            }
            size_t hit = 0;
            for (size_t t = 0; t < k; ++t) {
                uint32_t id = g.ids[i * k + t];
                for (auto& [d, j] : best)
                    if (j == id) {
                        ++hit;
                        break;
                    }
            }
            recalls[ri] = static_cast<double>(hit) / static_cast<double>(k);
        });
        double mean = 0;
        for (double r : recalls) mean += r;
        return mean / static_cast<double>(recalls.size());
    };

    g.audit_recall = audit();
    if (g.audit_recall < 0.9) {
        // one densification retry: seed extra random candidates and rerun a round
        for (size_t v = 0; v < n; ++v) {
            for (size_t t = 0; t < 4; ++t) {
                uint32_t j = static_cast<uint32_t>(rand_below(rng, n));
                if (j == v) continue;
                try_insert(v, j, detail::point_dist(data.data() + v * dim,
                                                    data.data() + j * dim, dim, metric));
            }
            for (auto& nb : heaps[v]) nb.is_new = true;
        }
        for (size_t v = 0; v < n; ++v)
            for (size_t t = 0; t < k; ++t) {
                g.ids[v * k + t] = heaps[v][t].id;
                g.dists[v * k + t] = heaps[v][t].dist;
            }
        g.audit_recall = audit();
        if (g.audit_recall < 0.9)
            throw NumericError("nn-descent audit recall " + format_double(g.audit_recall) +
                               " below required 0.9");
    }
    return g;
}

} // namespace detail

inline KnnGraph build_knn(const std::vector<float>& data, size_t n, size_t dim, size_t k,
                          Metric metric, uint64_t seed, int threads = 1) {
    if (n <= kExactKnnLimit) return exact_knn(data, n, dim, k, metric, threads);
    return detail::nn_descent_knn(data, n, dim, k, metric, seed, threads);
}

// --- smooth kNN calibration ---

struct Calibration {
    double rho = 0.0;
    double sigma = 0.0;
    bool clamped = false;
};

// Binary search for the bandwidth that makes total fuzzy membership hit the
// target (log2 of the neighbor count). Distances must be ascending.
inline Calibration smooth_knn_calibrate(const std::vector<double>& distances, double target) {
    if (distances.size() < 2)
        throw ValidationError("smooth_knn_calibrate: need at least 2 neighbor distances");
    Calibration cal;
    cal.rho = distances.front();
    auto total_membership = [&](double sigma) {
        double sum = 0.0;
        for (double d : distances) {
            double gap = d - cal.rho;
            sum += gap <= 0.0 ? 1.0 : std::exp(-gap / sigma);
        }
        return sum;
    };
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
        double total = total_membership(mid);
        if (std::abs(total - target) < 1e-3) break;
        if (total > target) {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
        }
    }
    cal.sigma = mid;
    constexpr double kMinSigma = 1e-12;
    if (cal.sigma < kMinSigma) {
        cal.sigma = kMinSigma;
        cal.clamped = true;
    }
    if (std::abs(total_membership(cal.sigma) - target) >= 1e-3) cal.clamped = true;
    return cal;
}

inline double fuzzy_union(double wij, double wji) { return wij + wji - wij * wji; }

// --- output-space curve parameters ---

// Least-squares fit of 1/(1 + a d^(2b)) to the min_dist plateau with
// exponential tail, over a 300-point grid on [0, 3*spread].
inline std::pair<double, double> fit_curve_params(double min_dist, double spread = 1.0) {
    const int grid = 300;
    std::vector<double> xs(grid), ys(grid);
    for (int i = 0; i < grid; ++i) {
        double x = 3.0 * spread * static_cast<double>(i) / (grid - 1);
        xs[static_cast<size_t>(i)] = x;
        ys[static_cast<size_t>(i)] =
            x < min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
    }
    double a = 1.0, b = 1.0;
    double lambda = 1e-3;
    auto loss = [&](double aa, double bb) {
        double s = 0.0;
        for (int i = 0; i < grid; ++i) {
            double f = 1.0 / (1.0 + aa * std::pow(xs[(size_t)i], 2.0 * bb));
            s += (f - ys[(size_t)i]) * (f - ys[(size_t)i]);
        }
        return s;
    };
    double current = loss(a, b);
    for (int iter = 0; iter < 200; ++iter) {
        // Levenberg-Marquardt over (a, b)
        double jtj[2][2] = {{0, 0}, {0, 0}};
        double jtr[2] = {0, 0};
        for (int i = 0; i < grid; ++i) {
            double x = xs[(size_t)i];
            double xp = x > 0 ? std::pow(x, 2.0 * b) : 0.0;
            double denom = 1.0 + a * xp;
            double f = 1.0 / denom;
            double r = f - ys[(size_t)i];
            double dfda = -xp / (denom * denom);
            double dfdb = x > 0 ? -a * xp * 2.0 * std::log(x) / (denom * denom) : 0.0;
            jtj[0][0] += dfda * dfda;
            jtj[0][1] += dfda * dfdb;
            jtj[1][0] += dfdb * dfda;
            jtj[1][1] += dfdb * dfdb;
            jtr[0] += dfda * r;
            jtr[1] += dfdb * r;
        }
        jtj[0][0] *= 1.0 + lambda;
        jtj[1][1] *= 1.0 + lambda;
        double det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if (std::abs(det) < 1e-30) break;
        double da = (-jtr[0] * jtj[1][1] + jtr[1] * jtj[0][1]) / det;
        double db = (-jtr[1] * jtj[0][0] + jtr[0] * jtj[1][0]) / det;
        double na = a + da, nb = b + db;
        if (na <= 0 || nb <= 0 || !std::isfinite(na) || !std::isfinite(nb)) {
            lambda *= 10;
            continue;
        }
        double next = loss(na, nb);
        if (next < current) {
            a = na;
            b = nb;
            current = next;
            lambda = std::max(lambda * 0.3, 1e-12);
            if (std::abs(da) < 1e-12 && std::abs(db) < 1e-12) break;
        } else {
            lambda *= 10;
            if (lambda > 1e12) break;
        }
    }
    return {a, b};
}

// --- UMAP ---

struct UmapParams {
    size_t n_neighbors = 15;
    double min_dist = 0.1;
    Metric metric = Metric::cosine;
    size_t n_epochs = 200;
    double learning_rate = 1.0;
    double negative_sample_rate = 5.0;
    uint64_t seed = 0;
    int threads = 1;
};

inline void to_json(nlohmann::json& j, const UmapParams& p) {
    j = nlohmann::json{{"n_neighbors", p.n_neighbors},
                       {"min_dist", p.min_dist},
                       {"metric", to_string(p.metric)},
                       {"n_epochs", p.n_epochs},
                       {"learning_rate", p.learning_rate},
                       {"negative_sample_rate", p.negative_sample_rate},
                       {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, UmapParams& p) {
    j.at("n_neighbors").get_to(p.n_neighbors);
    j.at("min_dist").get_to(p.min_dist);
    p.metric = metric_from_string(j.at("metric").get<std::string>());
    j.at("n_epochs").get_to(p.n_epochs);
    j.at("learning_rate").get_to(p.learning_rate);
    j.at("negative_sample_rate").get_to(p.negative_sample_rate);
    j.at("seed").get_to(p.seed);
}

struct UmapModel {
    UmapParams params;
    size_t dim = 0;
    size_t out_dims = 2;
    size_t n_fit = 0;
    double a = 0, b = 0;
    std::vector<float> fit_data;    // [n_fit, dim]
    std::vector<uint32_t> knn_ids;  // [n_fit, k]
    std::vector<double> embedding;  // [n_fit, out_dims]
    // symmetrized fuzzy graph (i < j, weight > 0)
    std::vector<uint32_t> edge_heads, edge_tails;
    std::vector<double> edge_weights;
    bool disconnected = false;
    double audit_recall = 1.0;
    size_t calibration_clamped = 0;
    size_t degenerate_inputs = 0;
};

namespace detail {

// Orthogonal power iteration for the leading eigenvectors of the normalized
// adjacency, restricted to one connected component. Good enough as a layout
// seed; the SGD phase does the real work.
inline void spectral_init_component(const std::vector<uint32_t>& comp,
                                    const std::vector<std::vector<std::pair<uint32_t, double>>>& adj,
                                    size_t out_dims, Rng& rng, std::vector<double>& coords) {
    const size_t m = comp.size();
    std::vector<size_t> local(adj.size(), SIZE_MAX);
    for (size_t i = 0; i < m; ++i) local[comp[i]] = i;
    std::vector<double> degree(m, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (auto& [j, w] : adj[comp[i]]) degree[i] += w;
    for (auto& d : degree) d = d > 0 ? 1.0 / std::sqrt(d) : 0.0;

    if (m <= out_dims + 1) {
        for (size_t i = 0; i < m; ++i)
            for (size_t dcoord = 0; dcoord < out_dims; ++dcoord)
                coords[comp[i] * out_dims + dcoord] = rand_unit(rng) * 20.0 - 10.0;
        return;
    }

    size_t n_vec = out_dims + 1;
    std::vector<std::vector<double>> vecs(n_vec, std::vector<double>(m));
    // known leading eigenvector of the normalized adjacency
    for (size_t i = 0; i < m; ++i) vecs[0][i] = degree[i] > 0 ? 1.0 / degree[i] : 1.0;
    for (size_t v = 1; v < n_vec; ++v)
        for (size_t i = 0; i < m; ++i) vecs[v][i] = rand_unit(rng) - 0.5;

    auto normalize_vec = [&](std::vector<double>& v) {
        double norm = std::sqrt(linalg::dot(v.data(), v.data(), m));
        if (norm > 0)
            for (auto& x : v) x /= norm;
    };
    auto orthogonalize = [&](std::vector<double>& v, size_t upto) {
        for (size_t u = 0; u < upto; ++u) {
            double d = linalg::dot(v.data(), vecs[u].data(), m);
            for (size_t i = 0; i < m; ++i) v[i] -= d * vecs[u][i];
        }
    };
    normalize_vec(vecs[0]);
    std::vector<double> tmp(m);
    for (size_t v = 1; v < n_vec; ++v) {
        orthogonalize(vecs[v], v);
        normalize_vec(vecs[v]);
        for (int iter = 0; iter < 150; ++iter) {
            std::fill(tmp.begin(), tmp.end(), 0.0);
            for (size_t i = 0; i < m; ++i) {
                double xi = vecs[v][i] * degree[i];
                for (auto& [j, w] : adj[comp[i]]) {
                    size_t lj = local[j];
                    tmp[lj] += w * xi * degree[lj];
                }
            }
            // shift keeps the iteration converging on the algebraically
            // largest eigenvalue even with negative spectrum tails
            for (size_t i = 0; i < m; ++i) tmp[i] += vecs[v][i];
            orthogonalize(tmp, v);
            normalize_vec(tmp);
            std::swap(vecs[v], tmp);
        }
    }
    // scale coords into [-10, 10]
    double max_abs = 1e-12;
    for (size_t v = 1; v < n_vec; ++v)
        for (size_t i = 0; i < m; ++i) max_abs = std::max(max_abs, std::abs(vecs[v][i]));
    double expansion = 10.0 / max_abs;
    for (size_t i = 0; i < m; ++i)
        for (size_t dcoord = 0; dcoord < out_dims; ++dcoord)
            coords[comp[i] * out_dims + dcoord] = vecs[dcoord + 1][i] * expansion;
}

inline double clip4(double v) { return v > 4.0 ? 4.0 : (v < -4.0 ? -4.0 : v); }

} // namespace detail

inline UmapModel umap_fit(const Matrix& x, size_t out_dims, const UmapParams& params) {
    const size_t n = x.rows, dim = x.cols;
    if (n <= params.n_neighbors)
        throw ValidationError("umap_fit: need more points than n_neighbors (" +
                              std::to_string(n) + " <= " + std::to_string(params.n_neighbors) +
                              ")");
    if (out_dims < 1) throw ValidationError("umap_fit: out_dims must be >= 1");
    if (!x.all_finite()) throw NumericError("umap_fit: input contains non-finite values");

    UmapModel m;
    m.params = params;
    m.dim = dim;
    m.out_dims = out_dims;
    m.n_fit = n;
    m.fit_data.resize(n * dim);
    for (size_t i = 0; i < n * dim; ++i) m.fit_data[i] = static_cast<float>(x.data[i]);
    if (params.metric == Metric::cosine) {
        for (size_t i = 0; i < n; ++i) {
            double norm = 0;
            for (size_t t = 0; t < dim; ++t)
                norm += static_cast<double>(m.fit_data[i * dim + t]) * m.fit_data[i * dim + t];
            if (norm == 0.0) ++m.degenerate_inputs;
        }
    }

    const size_t k = params.n_neighbors;
    KnnGraph knn = build_knn(m.fit_data, n, dim, k, params.metric, params.seed, params.threads);
    m.knn_ids = knn.ids;
    m.audit_recall = knn.audit_recall;

    // fuzzy memberships per directed edge
    const double target = std::log2(static_cast<double>(k));
    std::vector<double> memberships(n * k);
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> row(knn.dists.begin() + static_cast<ptrdiff_t>(i * k),
                                knn.dists.begin() + static_cast<ptrdiff_t>((i + 1) * k));
        Calibration cal = smooth_knn_calibrate(row, target);
        if (cal.clamped) ++m.calibration_clamped;
        for (size_t t = 0; t < k; ++t) {
            double gap = row[t] - cal.rho;
            memberships[i * k + t] = gap <= 0.0 ? 1.0 : std::exp(-gap / cal.sigma);
        }
    }

    // symmetrize: w = w_ij + w_ji - w_ij w_ji over the union of directions
    std::map<std::pair<uint32_t, uint32_t>, std::pair<double, double>> directed;
    for (size_t i = 0; i < n; ++i) {
        for (size_t t = 0; t < k; ++t) {
            uint32_t j = knn.ids[i * k + t];
            double w = memberships[i * k + t];
            uint32_t lo = std::min(static_cast<uint32_t>(i), j);
            uint32_t hi = std::max(static_cast<uint32_t>(i), j);
            auto& slot = directed[{lo, hi}];
            if (i == lo)
                slot.first = std::max(slot.first, w);
            else
                slot.second = std::max(slot.second, w);
        }
    }
    for (auto& [edge, ws] : directed) {
        double w = fuzzy_union(ws.first, ws.second);
        if (w <= 0.0) continue;
        m.edge_heads.push_back(edge.first);
        m.edge_tails.push_back(edge.second);
        m.edge_weights.push_back(w);
    }

    auto [a, b] = fit_curve_params(params.min_dist);
    m.a = a;
    m.b = b;

    // spectral initialization per connected component
    std::vector<std::vector<std::pair<uint32_t, double>>> adj(n);
    for (size_t e = 0; e < m.edge_heads.size(); ++e) {
        adj[m.edge_heads[e]].push_back({m.edge_tails[e], m.edge_weights[e]});
        adj[m.edge_tails[e]].push_back({m.edge_heads[e], m.edge_weights[e]});
    }
    std::vector<int> comp_of(n, -1);
    std::vector<std::vector<uint32_t>> components;
    for (size_t i = 0; i < n; ++i) {
        if (comp_of[i] >= 0) continue;
        std::vector<uint32_t> comp;
        std::vector<uint32_t> stack = {static_cast<uint32_t>(i)};
        comp_of[i] = static_cast<int>(components.size());
        while (!stack.empty()) {
            uint32_t v = stack.back();
            stack.pop_back();
            comp.push_back(v);
            for (auto& [j, w] : adj[v]) {
                if (comp_of[j] < 0) {
                    comp_of[j] = static_cast<int>(components.size());
                    stack.push_back(j);
                }
            }
        }
        std::sort(comp.begin(), comp.end());
        components.push_back(std::move(comp));
    }
    m.disconnected = components.size() > 1;

    Rng rng(params.seed + 1);
    m.embedding.assign(n * out_dims, 0.0);
    for (size_t ci = 0; ci < components.size(); ++ci) {
        detail::spectral_init_component(components[ci], adj, out_dims, rng, m.embedding);
        if (ci > 0) {
            // shift additional components aside so they do not overlap
            double offset = 25.0 * static_cast<double>(ci);
            for (uint32_t v : components[ci]) m.embedding[v * out_dims] += offset;
        }
    }

    // stochastic layout optimization
    const size_t n_edges = m.edge_heads.size();
    double w_max = 0.0;
    for (double w : m.edge_weights) w_max = std::max(w_max, w);
    std::vector<double> epochs_per_sample(n_edges, -1.0);
    for (size_t e = 0; e < n_edges; ++e) {
        double ns = static_cast<double>(params.n_epochs) * m.edge_weights[e] / w_max;
        if (ns > 0) epochs_per_sample[e] = static_cast<double>(params.n_epochs) / ns;
    }
    std::vector<double> next_sample = epochs_per_sample;
    std::vector<double> eps_negative(n_edges);
    std::vector<double> next_negative(n_edges);
    for (size_t e = 0; e < n_edges; ++e) {
        eps_negative[e] = epochs_per_sample[e] / params.negative_sample_rate;
        next_negative[e] = eps_negative[e];
    }

    Rng sgd_rng(params.seed + 2);
    double alpha = params.learning_rate;
    for (size_t epoch = 1; epoch <= params.n_epochs; ++epoch) {
        double en = static_cast<double>(epoch);
        for (size_t e = 0; e < n_edges; ++e) {
            if (epochs_per_sample[e] < 0 || next_sample[e] > en) continue;
            uint32_t i = m.edge_heads[e], j = m.edge_tails[e];
            double* yi = m.embedding.data() + i * out_dims;
            double* yj = m.embedding.data() + j * out_dims;
            double d2 = 0;
            for (size_t t = 0; t < out_dims; ++t) d2 += (yi[t] - yj[t]) * (yi[t] - yj[t]);
            if (d2 > 0) {
                double coeff = (-2.0 * m.a * m.b * std::pow(d2, m.b - 1.0)) /
                               (1.0 + m.a * std::pow(d2, m.b));
                for (size_t t = 0; t < out_dims; ++t) {
                    double g = detail::clip4(coeff * (yi[t] - yj[t]));
                    yi[t] += g * alpha;
                    yj[t] -= g * alpha;
                }
            }
            next_sample[e] += epochs_per_sample[e];

            int n_neg = static_cast<int>((en - next_negative[e]) / eps_negative[e]);
            for (int p = 0; p < n_neg; ++p) {
                uint32_t other = static_cast<uint32_t>(rand_below(sgd_rng, n));
                if (other == i) continue;
                double* yo = m.embedding.data() + other * out_dims;
                double dn2 = 0;
                for (size_t t = 0; t < out_dims; ++t) dn2 += (yi[t] - yo[t]) * (yi[t] - yo[t]);
                if (dn2 > 0) {
                    double coeff =
                        2.0 * m.b / ((0.001 + dn2) * (1.0 + m.a * std::pow(dn2, m.b)));
                    for (size_t t = 0; t < out_dims; ++t)
                        yi[t] += detail::clip4(coeff * (yi[t] - yo[t])) * alpha;
                } else {
                    for (size_t t = 0; t < out_dims; ++t) yi[t] += 4.0 * alpha;
                }
            }
            next_negative[e] += n_neg * eps_negative[e];
        }
        alpha = params.learning_rate *
                (1.0 - static_cast<double>(epoch) / static_cast<double>(params.n_epochs));
    }
    for (double v : m.embedding)
        if (!std::isfinite(v)) throw NumericError("umap_fit: embedding diverged to non-finite");
    return m;
}

// Places new points at the membership-weighted mean of their fit-set
// neighbors' coordinates, then refines with a third of the fit epochs while
// the fit embedding stays frozen.
inline Matrix umap_transform(const UmapModel& m, const Matrix& y) {
    if (y.cols != m.dim && y.rows > 0)
        throw ShapeError("umap_transform: input dim " + std::to_string(y.cols) +
                         " does not match fit dim " + std::to_string(m.dim));
    Matrix out(y.rows, m.out_dims);
    if (y.rows == 0) return out;
    const size_t n2 = y.rows, dim = m.dim, k = m.params.n_neighbors;

    std::vector<float> query(n2 * dim);
    for (size_t i = 0; i < n2 * dim; ++i) query[i] = static_cast<float>(y.data[i]);

    // kNN against the fit data: exact scan below the limit, greedy graph
    // search seeded from random nodes above it
    std::vector<uint32_t> nn_ids(n2 * k);
    std::vector<double> nn_dists(n2 * k);
    auto search_row = [&](size_t qi) {
        const float* q = query.data() + qi * dim;
        std::vector<std::pair<double, uint32_t>> best;
        if (m.n_fit <= kExactKnnLimit) {
            for (size_t j = 0; j < m.n_fit; ++j) {
                double d = detail::point_dist(q, m.fit_data.data() + j * dim, dim,
                                              m.params.metric);
                std::pair<double, uint32_t> cand{d, static_cast<uint32_t>(j)};
                if (best.size() == k && cand >= best.back()) continue;
                auto pos = std::lower_bound(best.begin(), best.end(), cand);
                best.insert(pos, cand);
                if (best.size() > k) best.pop_back();
            }
        } else {
            // beam search over the fit knn graph
            Rng seed_rng(m.params.seed ^ (0xA24BAED4963EE407ull + qi));
            std::vector<bool> visited(m.n_fit, false);
            auto consider = [&](uint32_t j) {
                if (visited[j]) return;
                visited[j] = true;
                double d =
                    detail::point_dist(q, m.fit_data.data() + j * dim, dim, m.params.metric);
                std::pair<double, uint32_t> cand{d, j};
                if (best.size() == k && cand >= best.back()) return;
                auto pos = std::lower_bound(best.begin(), best.end(), cand);
                best.insert(pos, cand);
                if (best.size() > k) best.pop_back();
            };
            for (int s = 0; s < 12; ++s)
                consider(static_cast<uint32_t>(rand_below(seed_rng, m.n_fit)));
            bool improved = true;
            while (improved) {
                improved = false;
                auto frontier = best;
                for (auto& [d, j] : frontier) {
                    for (size_t t = 0; t < k; ++t) {
                        uint32_t cand = m.knn_ids[j * k + t];
                        double before = best.back().first;
                        consider(cand);
                        if (best.back().first < before) improved = true;
                    }
                }
            }
        }
        for (size_t t = 0; t < k; ++t) {
            nn_ids[qi * k + t] = best[t].second;
            nn_dists[qi * k + t] = best[t].first;
        }
    };
    parallel_for(n2, m.params.threads, search_row);

    const double target = std::log2(static_cast<double>(k));
    std::vector<double> memberships(n2 * k);
    for (size_t i = 0; i < n2; ++i) {
        std::vector<double> row(nn_dists.begin() + static_cast<ptrdiff_t>(i * k),
                                nn_dists.begin() + static_cast<ptrdiff_t>((i + 1) * k));
        Calibration cal = smooth_knn_calibrate(row, target);
        double sum = 0.0;
        for (size_t t = 0; t < k; ++t) {
            double gap = row[t] - cal.rho;
            double w = gap <= 0.0 ? 1.0 : std::exp(-gap / cal.sigma);
            memberships[i * k + t] = w;
            sum += w;
        }
        double* o = out.row(i);
        for (size_t t = 0; t < k; ++t) {
            const double* fe = m.embedding.data() + nn_ids[i * k + t] * m.out_dims;
            for (size_t dcoord = 0; dcoord < m.out_dims; ++dcoord)
                o[dcoord] += memberships[i * k + t] / sum * fe[dcoord];
        }
    }

    // refinement: attract new points along their membership edges, repel
    // from random fit points; fit coordinates are frozen. Runs at a quarter
    // of the fit learning rate, matching reference transform behavior.
    size_t epochs = std::max<size_t>(1, m.params.n_epochs / 3);
    Rng rng(m.params.seed + 3);
    double w_max = 0.0;
    for (double w : memberships) w_max = std::max(w_max, w);
    std::vector<double> eps(memberships.size(), -1.0), next(memberships.size());
    std::vector<double> eps_neg(memberships.size()), next_neg(memberships.size());
    for (size_t e = 0; e < memberships.size(); ++e) {
        double ns = static_cast<double>(epochs) * memberships[e] / w_max;
        if (ns > 0) eps[e] = static_cast<double>(epochs) / ns;
        next[e] = eps[e];
        eps_neg[e] = eps[e] / m.params.negative_sample_rate;
        next_neg[e] = eps_neg[e];
    }
    const double initial_alpha = m.params.learning_rate / 4.0;
    double alpha = initial_alpha;
    for (size_t epoch = 1; epoch <= epochs; ++epoch) {
        double en = static_cast<double>(epoch);
        for (size_t e = 0; e < memberships.size(); ++e) {
            if (eps[e] < 0 || next[e] > en) continue;
            size_t i = e / k;
            uint32_t j = nn_ids[e];
            double* yi = out.row(i);
            const double* yj = m.embedding.data() + j * m.out_dims;
            double d2 = 0;
            for (size_t t = 0; t < m.out_dims; ++t) d2 += (yi[t] - yj[t]) * (yi[t] - yj[t]);
            if (d2 > 0) {
                double coeff = (-2.0 * m.a * m.b * std::pow(d2, m.b - 1.0)) /
                               (1.0 + m.a * std::pow(d2, m.b));
                for (size_t t = 0; t < m.out_dims; ++t)
                    yi[t] += detail::clip4(coeff * (yi[t] - yj[t])) * alpha;
            }
            next[e] += eps[e];
            int n_neg = static_cast<int>((en - next_neg[e]) / eps_neg[e]);
            for (int p = 0; p < n_neg; ++p) {
                uint32_t other = static_cast<uint32_t>(rand_below(rng, m.n_fit));
                const double* yo = m.embedding.data() + other * m.out_dims;
                double dn2 = 0;
                for (size_t t = 0; t < m.out_dims; ++t)
                    dn2 += (yi[t] - yo[t]) * (yi[t] - yo[t]);
                if (dn2 > 0) {
                    double coeff =
                        2.0 * m.b / ((0.001 + dn2) * (1.0 + m.a * std::pow(dn2, m.b)));
                    for (size_t t = 0; t < m.out_dims; ++t)
                        yi[t] += detail::clip4(coeff * (yi[t] - yo[t])) * alpha;
                }
            }
            next_neg[e] += n_neg * eps_neg[e];
        }
        alpha = initial_alpha * (1.0 - en / static_cast<double>(epochs));
    }
    for (double v : out.data)
        if (!std::isfinite(v))
            throw NumericError("umap_transform: embedding diverged to non-finite");
    return out;
}

// --- reducer serialization (REDM) ---

constexpr char kReducerMagic[4] = {'R', 'E', 'D', 'M'};
constexpr uint32_t kReducerVersion = 1;

struct Reducer {
    std::optional<PcaModel> pca;
    std::optional<UmapModel> umap;

    bool is_pca() const { return pca.has_value(); }
    size_t input_dim() const { return is_pca() ? pca->dim : umap->dim; }
    size_t output_dims() const { return is_pca() ? pca->k : umap->out_dims; }

    Matrix transform(const Matrix& x) const {
        return is_pca() ? pca_transform(*pca, x) : umap_transform(*umap, x);
    }
};

namespace detail {

template <typename T>
void put_array(std::string& payload, nlohmann::json& sections, const std::string& name,
               const std::vector<T>& data) {
    sections[name] = {{"offset", payload.size()}, {"count", data.size()}};
    size_t bytes = data.size() * sizeof(T);
    size_t at = payload.size();
    payload.resize(at + bytes);
    std::memcpy(payload.data() + at, data.data(), bytes);
}

template <typename T>
std::vector<T> get_array(const std::string& payload, const nlohmann::json& sections,
                         const std::string& name) {
    const auto& sec = sections.at(name);
    size_t offset = sec.at("offset").get<size_t>();
    size_t count = sec.at("count").get<size_t>();
    if (offset + count * sizeof(T) > payload.size())
        throw FormatError("reducer payload section out of bounds: " + name);
    std::vector<T> out(count);
    std::memcpy(out.data(), payload.data() + offset, count * sizeof(T));
    return out;
}

} // namespace detail

inline void reducer_save(const Reducer& r, const std::string& path) {
    nlohmann::json header;
    std::string payload;
    nlohmann::json sections = nlohmann::json::object();
    if (r.is_pca()) {
        const PcaModel& m = *r.pca;
        header["kind"] = "pca";
        header["dim"] = m.dim;
        header["k"] = m.k;
        header["fitted_on"] = m.fitted_on;
        header["rank_deficient"] = m.rank_deficient;
        header["centered"] = false;
        detail::put_array(payload, sections, "basis", m.basis);
        detail::put_array(payload, sections, "singular_values", m.singular_values);
    } else if (r.umap) {
        const UmapModel& m = *r.umap;
        header["kind"] = "umap";
        header["dim"] = m.dim;
        header["out_dims"] = m.out_dims;
        header["n_fit"] = m.n_fit;
        header["a"] = m.a;
        header["b"] = m.b;
        header["params"] = m.params;
        header["disconnected"] = m.disconnected;
        header["audit_recall"] = m.audit_recall;
        header["calibration_clamped"] = m.calibration_clamped;
        header["degenerate_inputs"] = m.degenerate_inputs;
        detail::put_array(payload, sections, "fit_data", m.fit_data);
        detail::put_array(payload, sections, "knn_ids", m.knn_ids);
        detail::put_array(payload, sections, "embedding", m.embedding);
        detail::put_array(payload, sections, "edge_heads", m.edge_heads);
        detail::put_array(payload, sections, "edge_tails", m.edge_tails);
        detail::put_array(payload, sections, "edge_weights", m.edge_weights);
    } else {
        throw ValidationError("reducer_save: empty reducer");
    }
    header["sections"] = sections;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write reducer: " + path);
    out.write(kReducerMagic, 4);
    out.write(reinterpret_cast<const char*>(&kReducerVersion), 4);
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    uint64_t checksum = crc64(payload.data(), payload.size());
    out.write(reinterpret_cast<const char*>(&checksum), 8);
    if (!out) throw IoError("write failed: " + path);
}

inline Reducer reducer_load(const std::string& path) {
    MappedFile map(path);
    if (map.size() < 4 + 4 + 8 + 8) throw FormatError(path + ": too small to be a reducer file");
    if (std::memcmp(map.data(), kReducerMagic, 4) != 0)
        throw FormatError(path + ": bad magic (not a REDM file)");
    uint32_t version;
    std::memcpy(&version, map.data() + 4, 4);
    if (version != kReducerVersion)
        throw FormatError(path + ": unsupported reducer version " + std::to_string(version));
    uint64_t hlen;
    std::memcpy(&hlen, map.data() + 8, 8);
    if (16 + hlen + 8 > map.size()) throw FormatError(path + ": header length exceeds file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(
            std::string_view(reinterpret_cast<const char*>(map.data() + 16), hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad reducer header: " + e.what());
    }
    size_t payload_off = 16 + hlen;
    size_t payload_len = map.size() - payload_off - 8;
    std::string payload(reinterpret_cast<const char*>(map.data() + payload_off), payload_len);
    uint64_t stored_crc;
    std::memcpy(&stored_crc, map.data() + payload_off + payload_len, 8);
    if (crc64(payload.data(), payload.size()) != stored_crc)
        throw CorruptionError(path + ": reducer payload checksum mismatch");

    const auto& sections = header.at("sections");
    Reducer r;
    std::string kind = header.at("kind").get<std::string>();
    if (kind == "pca") {
        PcaModel m;
        m.dim = header.at("dim").get<size_t>();
        m.k = header.at("k").get<size_t>();
        m.fitted_on = header.value("fitted_on", std::string());
        m.rank_deficient = header.value("rank_deficient", false);
        m.basis = detail::get_array<double>(payload, sections, "basis");
        m.singular_values = detail::get_array<double>(payload, sections, "singular_values");
        if (m.basis.size() != m.k * m.dim)
            throw FormatError(path + ": basis size does not match header");
        r.pca = std::move(m);
    } else if (kind == "umap") {
        UmapModel m;
        m.dim = header.at("dim").get<size_t>();
        m.out_dims = header.at("out_dims").get<size_t>();
        m.n_fit = header.at("n_fit").get<size_t>();
        m.a = header.at("a").get<double>();
        m.b = header.at("b").get<double>();
        m.params = header.at("params").get<UmapParams>();
        m.disconnected = header.value("disconnected", false);
        m.audit_recall = header.value("audit_recall", 1.0);
        m.calibration_clamped = header.value("calibration_clamped", size_t{0});
        m.degenerate_inputs = header.value("degenerate_inputs", size_t{0});
        m.fit_data = detail::get_array<float>(payload, sections, "fit_data");
        m.knn_ids = detail::get_array<uint32_t>(payload, sections, "knn_ids");
        m.embedding = detail::get_array<double>(payload, sections, "embedding");
        m.edge_heads = detail::get_array<uint32_t>(payload, sections, "edge_heads");
        m.edge_tails = detail::get_array<uint32_t>(payload, sections, "edge_tails");
        m.edge_weights = detail::get_array<double>(payload, sections, "edge_weights");
        r.umap = std::move(m);
    } else {
        throw FormatError(path + ": unknown reducer kind '" + kind + "'");
    }
    return r;
}

} // namespace latentscope::reduce
