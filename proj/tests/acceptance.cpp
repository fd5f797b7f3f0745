// Acceptance suite: one criterion per invocation (--criterion N) or all in
// sequence. Each criterion prints exactly one PASS/FAIL/SKIP line. Exit
// codes: 0 pass, 1 fail, 77 skip (missing external prerequisite).
//
// Criteria 5-8 and part of 4 run against a real GPT-2 small checkpoint.
// Point LATENTSCOPE_GPT2_DIR at a directory holding model.safetensors,
// config.json, vocab.json, and merges.txt (scripts/fetch_gpt2.py downloads
// them); without it those criteria report SKIP.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentscope/analyze.hpp"
#include "latentscope/pipeline.hpp"
#include "latentscope/plot.hpp"
#include "latentscope/synthetic.hpp"
#include "oracles.hpp"

using namespace latentscope;

namespace {

constexpr int kSkipExit = 77;

struct Skip {
    std::string reason;
};

struct Failure {
    std::string reason;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Failure{what};
}

std::filesystem::path work_dir() {
    auto dir = std::filesystem::temp_directory_path() / "latentscope_acceptance";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string wpath(const std::string& name) { return (work_dir() / name).string(); }

std::string fixtures_dir() { return LATENTSCOPE_FIXTURES_DIR; }

std::string gpt2_dir_or_skip() {
    if (const char* dir = std::getenv("LATENTSCOPE_GPT2_DIR")) {
        if (std::filesystem::exists(std::string(dir) + "/model.safetensors")) return dir;
        throw Skip{"LATENTSCOPE_GPT2_DIR is set but has no model.safetensors"};
    }
    auto local = std::filesystem::path(fixtures_dir()).parent_path().parent_path() /
                 "fixtures" / "gpt2";
    if (std::filesystem::exists(local / "model.safetensors")) return local.string();
    throw Skip{"GPT-2 small checkpoint not available (offline environment); run "
               "scripts/fetch_gpt2.py on a networked machine and set LATENTSCOPE_GPT2_DIR"};
}

std::string gpt2_vocab_dir_or_skip() {
    if (const char* dir = std::getenv("LATENTSCOPE_GPT2_DIR")) {
        if (std::filesystem::exists(std::string(dir) + "/vocab.json")) return dir;
        throw Skip{"LATENTSCOPE_GPT2_DIR is set but has no vocab.json"};
    }
    auto local = std::filesystem::path(fixtures_dir()).parent_path().parent_path() /
                 "fixtures" / "gpt2";
    if (std::filesystem::exists(local / "vocab.json")) return local.string();
    throw Skip{"GPT-2 vocab files not available (offline environment); run "
               "scripts/fetch_gpt2.py on a networked machine"};
}

bpe::BpeVocab fixture_vocab() {
    std::string dir = fixtures_dir() + std::string("/bpe");
    return bpe::BpeVocab::from_files(dir + "/vocab.json", dir + "/merges.txt");
}

std::string synth_corpus(const std::string& name, size_t approx_bytes, uint64_t seed) {
    static const char* words[] = {"the",  "quick", "brown", "fox",  "jumps", "over", "a",
                                  "lazy", "dog",   "and",   "then", "some",  "more", "words",
                                  "don't", "it's", "42",    "1999", "(x)",   "end."};
    Rng rng(seed);
    std::string text;
    while (text.size() < approx_bytes) {
        text += words[rand_below(rng, 20)];
        text += rand_below(rng, 12) == 0 ? ".\n" : " ";
    }
    auto p = wpath(name);
    std::ofstream out(p, std::ios::binary);
    out << text;
    return p;
}

double rel_err(const std::vector<double>& lhs, const std::vector<double>& rhs) {
    double num = 0, den = 0;
    for (size_t i = 0; i < lhs.size(); ++i) {
        num += (lhs[i] - rhs[i]) * (lhs[i] - rhs[i]);
        den += rhs[i] * rhs[i];
    }
    return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

ckpt::ModelWeights load_gpt2(const std::string& dir) {
    auto c = ckpt::TensorContainer::open(dir + "/model.safetensors");
    auto cfg = ckpt::resolve_config(c);
    return ckpt::bind_weights(c, cfg, ckpt::WeightNaming::gpt2);
}

// shared GPT-2 capture for criteria 5, 6, 8: 8 text samples x 256 tokens.
// Cached on disk so the three criteria (separate ctest processes) capture
// only once; the checksum check on load catches stale partial files.
const store::LatentDataset& gpt2_capture_dataset(const std::string& dir) {
    static store::LatentDataset ds = [&] {
        auto out = wpath("gpt2_run.latds");
        if (std::filesystem::exists(out)) {
            try {
                auto cached = store::load(out);
                if (cached.header.shape[0] == 8 && cached.header.shape[1] == 256 &&
                    cached.header.seed == 42)
                    return cached;
            } catch (const Error&) {
                // fall through to a fresh capture
            }
        }
        auto vocab = bpe::BpeVocab::from_files(dir + "/vocab.json", dir + "/merges.txt");
        auto weights = load_gpt2(dir);
        RunConfig run;
        run.mode = RunMode::text;
        run.corpus_path = synth_corpus("gpt2_corpus.txt", 300000, 20260808);
        run.n_samples = 8;
        run.seq_len = 256;
        run.seed = 42;
        pipeline::run_capture(run, weights, &vocab, out, 2);
        return store::load(out);
    }();
    return ds;
}

// --- criteria ---

// Residual-stream additivity on a seeded synthetic model, checked on the
// stored f32 dataset: point 3 = previous stream + point 2, point 6 =
// point 3 + point 5 (<= 1e-6 relative), and emb + sum of pre-adds = final
// post-add (<= 1e-4 relative).
std::string criterion_1() {
    ModelConfig cfg;
    cfg.n_blocks = 4;
    cfg.d_model = 64;
    cfg.n_heads = 8;
    cfg.d_mlp = 128;
    cfg.vocab_size = 820;
    cfg.max_seq = 32;
    cfg.bos_id = 0;
    auto ckpt_path = wpath("c1_model.st");
    synth::write_synthetic_checkpoint(ckpt_path, cfg, 1001);
    auto c = ckpt::TensorContainer::open(ckpt_path);
    auto w = ckpt::bind_weights(c, cfg, ckpt::WeightNaming::generic);
    auto vocab = fixture_vocab();
    RunConfig run;
    run.mode = RunMode::text;
    run.corpus_path = synth_corpus("c1_corpus.txt", 60000, 11);
    run.n_samples = 16;
    run.seq_len = 24;
    run.seed = 1;
    auto out = wpath("c1.latds");
    pipeline::run_capture(run, w, &vocab, out);
    auto ds = store::load(out);

    auto capture_index = [&](int block, int point) {
        for (size_t i = 0; i < ds.header.captures.size(); ++i) {
            const auto& t = ds.header.captures[i];
            if (t.block == block && t.point == point) return i;
        }
        throw Failure{"capture enumeration missing block " + std::to_string(block) + " point " +
                      std::to_string(point)};
    };
    const size_t d = cfg.d_model;
    double worst_identity = 0, worst_stream = 0;
    std::vector<double> a(d), b(d), sum(d), stream(d);
    for (size_t s = 0; s < 16; ++s) {
        for (size_t q = 0; q < 24; ++q) {
            ds.copy_vector(s, q, 0, stream.data()); // embedding
            for (size_t blk = 0; blk < cfg.n_blocks; ++blk) {
                size_t prev_idx = blk == 0 ? 0 : capture_index((int)blk - 1, 6);
                ds.copy_vector(s, q, prev_idx, a.data());
                ds.copy_vector(s, q, capture_index((int)blk, 2), b.data());
                for (size_t i = 0; i < d; ++i) sum[i] = a[i] + b[i];
                ds.copy_vector(s, q, capture_index((int)blk, 3), a.data());
                worst_identity = std::max(worst_identity, rel_err(sum, a));
                ds.copy_vector(s, q, capture_index((int)blk, 5), b.data());
                for (size_t i = 0; i < d; ++i) sum[i] = a[i] + b[i];
                ds.copy_vector(s, q, capture_index((int)blk, 6), a.data());
                worst_identity = std::max(worst_identity, rel_err(sum, a));
                // accumulate pre-add contributions into the stream total
                ds.copy_vector(s, q, capture_index((int)blk, 2), b.data());
                for (size_t i = 0; i < d; ++i) stream[i] += b[i];
                ds.copy_vector(s, q, capture_index((int)blk, 5), b.data());
                for (size_t i = 0; i < d; ++i) stream[i] += b[i];
            }
            ds.copy_vector(s, q, capture_index((int)cfg.n_blocks - 1, 6), a.data());
            worst_stream = std::max(worst_stream, rel_err(stream, a));
        }
    }
    require(worst_identity <= 1e-6,
            "residual identity error " + format_double(worst_identity) + " > 1e-6");
    require(worst_stream <= 1e-4,
            "stream decomposition error " + format_double(worst_stream) + " > 1e-4");
    return "identity err " + format_double(worst_identity) + ", stream err " +
           format_double(worst_stream);
}

// Uncentered PCA matches the thin-SVD oracle on random 200x32 up to sign
// (<= 1e-8), maps the origin to the origin exactly, and keeps the basis
// orthonormal to 1e-8.
std::string criterion_2() {
    Rng rng(2002);
    linalg::Matrix x(200, 32);
    for (auto& v : x.data) v = rand_normal(rng);
    auto m = reduce::pca_fit(x, 32);
    auto svd = linalg::thin_svd(x);
    auto proj = reduce::pca_transform(m, x);
    double worst = 0;
    for (size_t j = 0; j < 32; ++j) {
        double flip = 0;
        for (size_t i = 0; i < 200 && flip == 0; ++i) {
            double o = svd.u.at(i, j) * svd.s[j];
            if (std::abs(o) > 1e-6) flip = (o > 0) == (proj.at(i, j) > 0) ? 1.0 : -1.0;
        }
        require(flip != 0, "could not orient component " + std::to_string(j));
        for (size_t i = 0; i < 200; ++i)
            worst = std::max(worst,
                             std::abs(proj.at(i, j) - flip * svd.u.at(i, j) * svd.s[j]));
    }
    require(worst < 1e-8, "oracle projection diff " + format_double(worst) + " >= 1e-8");

    linalg::Matrix zero(1, 32);
    auto z = reduce::pca_transform(m, zero);
    for (double v : z.data) require(v == 0.0, "pca_transform(0) != 0");

    double worst_ortho = 0;
    for (size_t i = 0; i < 32; ++i)
        for (size_t j = 0; j < 32; ++j) {
            double dot = linalg::dot(m.basis.data() + i * 32, m.basis.data() + j * 32, 32);
            worst_ortho = std::max(worst_ortho, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    require(worst_ortho < 1e-8, "basis orthonormality " + format_double(worst_ortho));
    return "oracle diff " + format_double(worst) + ", ortho " + format_double(worst_ortho);
}

// UMAP on two 10-sigma-separated gaussians (n=2000, d=64): 2-means purity
// >= 0.95 under both metrics, smooth-kNN residual < 1e-3 on >= 99% of
// points, and an exactly symmetric fuzzy graph.
std::string criterion_3() {
    const size_t n = 2000, dim = 64;
    Rng rng(3003);
    std::vector<double> axis(dim);
    double norm = 0;
    for (auto& v : axis) {
        v = rand_normal(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : axis) v /= norm;
    linalg::Matrix data(n, dim);
    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(i % 2);
        double off = labels[i] == 0 ? 5.0 : -5.0;
        for (size_t t = 0; t < dim; ++t) data.at(i, t) = axis[t] * off + rand_normal(rng);
    }
    std::string detail;
    for (auto metric : {reduce::Metric::euclidean, reduce::Metric::cosine}) {
        reduce::UmapParams params;
        params.metric = metric;
        params.seed = 33;
        auto m = reduce::umap_fit(data, 2, params);

        std::vector<std::vector<double>> pts(n, std::vector<double>(2));
        for (size_t i = 0; i < n; ++i)
            for (size_t t = 0; t < 2; ++t) pts[i][t] = m.embedding[i * 2 + t];
        double purity = oracle::cluster_purity(oracle::two_means(pts), labels);
        require(purity >= 0.95, std::string("purity ") + format_double(purity) + " < 0.95 (" +
                                    reduce::to_string(metric) + ")");

        // recompute calibration residuals from the stored graph
        const size_t k = params.n_neighbors;
        double target = std::log2(static_cast<double>(k));
        size_t within = 0;
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> dists(k);
            for (size_t t = 0; t < k; ++t) {
                const float* a = m.fit_data.data() + i * dim;
                const float* b = m.fit_data.data() + m.knn_ids[i * k + t] * dim;
                dists[t] = metric == reduce::Metric::euclidean
                               ? std::sqrt(reduce::detail::sq_euclidean(a, b, dim))
                               : reduce::detail::cosine_dist(a, b, dim);
            }
            std::sort(dists.begin(), dists.end());
            auto cal = reduce::smooth_knn_calibrate(dists, target);
            double sum = 0;
            for (double dv : dists) {
                double gap = dv - cal.rho;
                sum += gap <= 0 ? 1.0 : std::exp(-gap / cal.sigma);
            }
            if (std::abs(sum - target) < 1e-3) ++within;
        }
        double frac = static_cast<double>(within) / static_cast<double>(n);
        require(frac >= 0.99, "smooth-kNN residual within 1e-3 on only " + format_double(frac));

        // stored undirected edges: each unordered pair exactly once, i < j
        std::set<std::pair<uint32_t, uint32_t>> seen;
        for (size_t e = 0; e < m.edge_heads.size(); ++e) {
            require(m.edge_heads[e] < m.edge_tails[e], "edge not stored canonically");
            require(seen.insert({m.edge_heads[e], m.edge_tails[e]}).second,
                    "duplicate edge breaks symmetry");
        }
        detail += reduce::to_string(metric) + " purity " + format_double(purity) + " calib " +
                  format_double(frac) + "; ";
    }
    return detail;
}

// Tokenizer fidelity: 1 MiB round trip plus the frozen reference-oracle
// encodings; the GPT-2 [15496, 995] pin needs the real vocab files.
std::string criterion_4() {
    auto vocab = fixture_vocab();
    static const char* frags[] = {"The quick brown fox", " jumps", "don't", "it's,",
                                  "1234",  "\n", "\t", "  ", "κείμενο", "текст", "文本",
                                  "naïve", "—", "🙂", "x=1;", "MiXeD CAPS"};
    Rng rng(44);
    std::string text;
    text.reserve(1 << 20);
    while (text.size() < (1 << 20)) text += frags[rand_below(rng, 16)];
    auto ids = vocab.encode(text);
    require(vocab.decode(ids) == text, "1 MiB round trip failed");

    std::ifstream in(fixtures_dir() + std::string("/bpe/cases.json"));
    require(in.good(), "missing reference oracle fixture");
    nlohmann::json cases = nlohmann::json::parse(in);
    for (const auto& c : cases) {
        std::vector<bpe::TokenId> expected;
        for (const auto& id : c["ids"]) expected.push_back(id.get<bpe::TokenId>());
        require(vocab.encode(c["text"].get<std::string>()) == expected,
                "reference-oracle mismatch on fixture case");
    }

    std::string dir;
    try {
        dir = gpt2_vocab_dir_or_skip();
    } catch (const Skip& s) {
        throw Skip{"1 MiB round trip and " + std::to_string(cases.size()) +
                   " reference-oracle cases passed, but the [15496, 995] pin needs the real "
                   "GPT-2 vocab: " +
                   s.reason};
    }
    auto gpt2 = bpe::BpeVocab::from_files(dir + "/vocab.json", dir + "/merges.txt");
    require(gpt2.vocab_size() == 50257, "gpt2 vocab size mismatch");
    require(gpt2.encode("Hello world") == std::vector<bpe::TokenId>{15496, 995},
            "gpt2 'Hello world' ids mismatch");
    require(gpt2.decode({15496, 995}) == "Hello world", "gpt2 decode mismatch");
    return "round trip + " + std::to_string(cases.size()) + " oracle cases + gpt2 ids";
}

// GPT-2 small position-0 norm spike on intermediate captures.
std::string criterion_5() {
    auto dir = gpt2_dir_or_skip();
    const auto& ds = gpt2_capture_dataset(dir);
    store::Selection sel;
    sel.block_range = store::Selection::intermediate_blocks(12);
    auto report = analyze::norms_by_position(ds, sel, 2);
    std::vector<double> rest(report.means.begin() + 1, report.means.end());
    std::sort(rest.begin(), rest.end());
    double median = rest[rest.size() / 2];
    double ratio = report.means[0] / median;
    require(ratio >= 3.0, "position-0 norm ratio " + format_double(ratio) + " < 3");
    return "position-0 / median ratio " + format_double(ratio);
}

// GPT-2 small attention-vs-MLP pre-add separation: sample-averaged, unit
// normalized, PCA to 2D, linear classifier >= 90%.
std::string criterion_6() {
    auto dir = gpt2_dir_or_skip();
    const auto& ds = gpt2_capture_dataset(dir);
    store::Selection sel;
    sel.block_range = store::Selection::intermediate_blocks(12);
    sel.components = {Component::attn, Component::mlp};
    sel.add_phase = AddPhase::pre_add;
    auto view = store::select(ds, sel)
                    .mean_over({store::LatentView::Axis::sample})
                    .unit_normalize();
    auto flat = view.flatten();
    auto pca = reduce::pca_fit(flat.matrix, 2);
    auto proj = reduce::pca_transform(pca, flat.matrix);
    std::vector<std::array<double, 2>> pts(proj.rows);
    std::vector<int> labels(proj.rows);
    for (size_t i = 0; i < proj.rows; ++i) {
        pts[i] = {proj.at(i, 0), proj.at(i, 1)};
        labels[i] = flat.row_tags[i].component == Component::mlp ? 1 : 0;
    }
    double acc = oracle::lda_accuracy_2d(pts, labels);
    require(acc >= 0.90, "separation accuracy " + format_double(acc) + " < 0.90");
    return "linear separation accuracy " + format_double(acc);
}

// GPT-2 small positional helix: uncentered PCA of the unit-normalized
// learned positional embeddings; adjacent positions stay nearest neighbors.
std::string criterion_7() {
    auto dir = gpt2_dir_or_skip();
    auto c = ckpt::TensorContainer::open(dir + "/model.safetensors");
    auto wpe = c.read_f32("wpe.weight");
    const size_t n_pos = c.entry("wpe.weight").shape[0];
    const size_t d = c.entry("wpe.weight").shape[1];
    linalg::Matrix x(n_pos, d);
    for (size_t p = 0; p < n_pos; ++p) {
        for (size_t j = 0; j < d; ++j) x.at(p, j) = wpe[p * d + j];
        double norm = linalg::l2_norm(x.row(p), d);
        if (norm > 0)
            for (size_t j = 0; j < d; ++j) x.at(p, j) /= norm;
    }
    auto pca = reduce::pca_fit(x, 6);
    auto proj = reduce::pca_transform(pca, x);
    size_t adjacent = 0;
    for (size_t p = 0; p < n_pos; ++p) {
        double best = 1e300;
        size_t best_q = p;
        for (size_t q = 0; q < n_pos; ++q) {
            if (q == p) continue;
            double dx = proj.at(p, 0) - proj.at(q, 0);
            double dy = proj.at(p, 1) - proj.at(q, 1);
            double dist = dx * dx + dy * dy;
            if (dist < best) {
                best = dist;
                best_q = q;
            }
        }
        if (best_q + 1 == p || best_q == p + 1) ++adjacent;
    }
    double frac = static_cast<double>(adjacent) / static_cast<double>(n_pos);
    require(frac >= 0.80, "adjacent nearest-neighbor fraction " + format_double(frac) + " < 0.8");

    std::vector<plot::PointTag> tags(n_pos);
    for (size_t p = 0; p < n_pos; ++p)
        tags[p] = plot::PointTag{plot::PointTag::Family::other, 0, 1, static_cast<long>(p),
                                 static_cast<long>(n_pos)};
    plot::PlotSpec spec;
    spec.color_by = plot::ColorBy::position_gradient;
    auto svg = plot::render_pair_grid(proj, tags, spec);
    size_t panels = 0, at = 0;
    while ((at = svg.find("data-panel=", at)) != std::string::npos) {
        ++panels;
        ++at;
    }
    require(panels == 15, "expected 15 grid panels");
    // every panel shows a finite, non-degenerate spread
    at = 0;
    for (size_t panel = 0; panel < 15; ++panel) {
        at = svg.find("data-xmin=\"", at);
        size_t xa = at + 11;
        double xmin = std::stod(svg.substr(xa, svg.find('"', xa) - xa));
        at = svg.find("data-xmax=\"", at);
        xa = at + 11;
        double xmax = std::stod(svg.substr(xa, svg.find('"', xa) - xa));
        require(std::isfinite(xmin) && std::isfinite(xmax) && xmax - xmin > 1e-9,
                "degenerate panel spread");
    }
    std::ofstream(wpath("gpt2_helix_grid.svg"), std::ios::binary) << svg;
    return "adjacent-NN fraction " + format_double(frac) + ", 15 panels rendered";
}

// GPT-2 small layerwise norm shape: last-block post-add above block 0
// post-add, final-norm capture below the last post-add.
std::string criterion_8() {
    auto dir = gpt2_dir_or_skip();
    const auto& ds = gpt2_capture_dataset(dir);
    store::Selection sel;
    sel.exclude_position_0 = true;
    auto report = analyze::norms_by_capture(ds, sel, 2);
    auto mean_of = [&](int block, int point) {
        for (size_t i = 0; i < report.tags.size(); ++i)
            if (report.tags[i].block == block && report.tags[i].point == point)
                return report.means[i];
        throw Failure{"missing capture in report"};
    };
    double first_post = mean_of(0, 6);
    double last_post = mean_of(11, 6);
    double final_norm = report.means.back();
    require(report.tags.back().is_final_norm(), "final norm capture missing");
    require(last_post > first_post, "post-add norm did not grow: " + format_double(first_post) +
                                        " -> " + format_double(last_post));
    require(final_norm < last_post, "final norm " + format_double(final_norm) +
                                        " not below last post-add " + format_double(last_post));
    return "post-add " + format_double(first_post) + " -> " + format_double(last_post) +
           ", final " + format_double(final_norm);
}

// Format round trips and determinism: LATDS and REDM bitwise, SVG bytes
// stable, capture reruns identical.
std::string criterion_9() {
    auto read_all = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    // capture determinism (also produces the LATDS round-trip subject)
    ModelConfig cfg;
    cfg.n_blocks = 2;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.d_mlp = 32;
    cfg.vocab_size = 820;
    cfg.max_seq = 16;
    cfg.bos_id = 0;
    auto ckpt_path = wpath("c9_model.st");
    synth::write_synthetic_checkpoint(ckpt_path, cfg, 9009);
    auto c = ckpt::TensorContainer::open(ckpt_path);
    auto w = ckpt::bind_weights(c, cfg, ckpt::WeightNaming::generic);
    auto vocab = fixture_vocab();
    RunConfig run;
    run.mode = RunMode::text;
    run.corpus_path = synth_corpus("c9_corpus.txt", 20000, 90);
    run.n_samples = 4;
    run.seq_len = 12;
    run.seed = 900;
    pipeline::run_capture(run, w, &vocab, wpath("c9_a.latds"));
    pipeline::run_capture(run, w, &vocab, wpath("c9_b.latds"));
    require(read_all(wpath("c9_a.latds")) == read_all(wpath("c9_b.latds")),
            "seeded capture reruns differ");

    // LATDS round trip
    auto ds = store::load(wpath("c9_a.latds"));
    store::save(ds, wpath("c9_rt.latds"));
    require(read_all(wpath("c9_a.latds")) == read_all(wpath("c9_rt.latds")),
            "LATDS save-load not bit identical");

    // REDM round trip (pca + umap)
    Rng rng(91);
    linalg::Matrix x(120, 8);
    for (auto& v : x.data) v = rand_normal(rng);
    reduce::Reducer r1;
    r1.pca = reduce::pca_fit(x, 3);
    reduce::reducer_save(r1, wpath("c9_pca.redm"));
    auto r1b = reduce::reducer_load(wpath("c9_pca.redm"));
    reduce::reducer_save(r1b, wpath("c9_pca2.redm"));
    require(read_all(wpath("c9_pca.redm")) == read_all(wpath("c9_pca2.redm")),
            "REDM pca round trip not bit identical");
    require(reduce::pca_transform(*r1.pca, x).data == r1b.transform(x).data,
            "pca transform changed across save-load");

    reduce::UmapParams params;
    params.n_neighbors = 10;
    params.n_epochs = 30;
    params.seed = 92;
    reduce::Reducer r2;
    r2.umap = reduce::umap_fit(x, 2, params);
    reduce::reducer_save(r2, wpath("c9_umap.redm"));
    auto r2b = reduce::reducer_load(wpath("c9_umap.redm"));
    linalg::Matrix probe(5, 8);
    for (auto& v : probe.data) v = rand_normal(rng);
    require(reduce::umap_transform(*r2.umap, probe).data == r2b.transform(probe).data,
            "umap transform changed across save-load");

    // SVG determinism
    std::vector<std::array<double, 2>> pts;
    std::vector<plot::PointTag> tags;
    for (int i = 0; i < 200; ++i) {
        pts.push_back({rand_normal(rng), rand_normal(rng)});
        tags.push_back({plot::PointTag::Family::attn, i % 4, 4, -1, 0});
    }
    plot::PlotSpec spec;
    spec.color_by = plot::ColorBy::component_depth;
    require(plot::render_scatter(pts, tags, spec) == plot::render_scatter(pts, tags, spec),
            "SVG render not byte deterministic");
    return "LATDS, REDM, SVG, and capture determinism all bitwise";
}

struct Criterion {
    int number;
    const char* summary;
    double time_budget_seconds;
    std::function<std::string()> fn;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all = {
        {1, "residual-stream additivity (synthetic 4x64)", 10.0, criterion_1},
        {2, "uncentered PCA vs thin-SVD oracle", 5.0, criterion_2},
        {3, "UMAP two-gaussian structure preservation", 60.0, criterion_3},
        {4, "tokenizer fidelity", 5.0, criterion_4},
        {5, "GPT-2 position-0 norm spike", 600.0, criterion_5},
        {6, "GPT-2 attention/MLP separation", 600.0, criterion_6},
        {7, "GPT-2 positional helix", 120.0, criterion_7},
        {8, "GPT-2 layerwise norm shape", 600.0, criterion_8},
        {9, "format round trips and determinism", 30.0, criterion_9},
    };
    return all;
}

int run_criterion(const Criterion& c) {
    auto start = std::chrono::steady_clock::now();
    try {
        std::string detail = c.fn();
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > c.time_budget_seconds) {
            std::printf("criterion %d: FAIL - %s: exceeded %.0fs budget (%.1fs)\n", c.number,
                        c.summary, c.time_budget_seconds, secs);
            return 1;
        }
        std::printf("criterion %d: PASS - %s (%s; %.1fs)\n", c.number, c.summary, detail.c_str(),
                    secs);
        return 0;
    } catch (const Skip& s) {
        std::printf("criterion %d: SKIP - %s: %s\n", c.number, c.summary, s.reason.c_str());
        return kSkipExit;
    } catch (const Failure& f) {
        std::printf("criterion %d: FAIL - %s: %s\n", c.number, c.summary, f.reason.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::printf("criterion %d: FAIL - %s: unexpected error: %s\n", c.number, c.summary,
                    e.what());
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);
    }
    if (only != 0) {
        for (const auto& c : criteria())
            if (c.number == only) return run_criterion(c);
        std::fprintf(stderr, "no criterion %d\n", only);
        return 1;
    }
    int failures = 0, skips = 0;
    for (const auto& c : criteria()) {
        int rc = run_criterion(c);
        if (rc == kSkipExit) ++skips;
        else if (rc != 0) ++failures;
    }
    std::printf("acceptance: %zu criteria, %d failed, %d skipped\n", criteria().size(), failures,
                skips);
    return failures > 0 ? 1 : 0;
}
