// latentscope: capture transformer latent states into LATDS datasets, then
// analyze, reduce, and plot them. Subcommands pass artifacts between stages
// as files; every run echoes its resolved configuration as a JSON line.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "latentscope/analyze.hpp"
#include "latentscope/checkpoint.hpp"
#include "latentscope/model.hpp"
#include "latentscope/pipeline.hpp"
#include "latentscope/plot.hpp"
#include "latentscope/reduce.hpp"
#include "latentscope/store.hpp"
#include "latentscope/synthetic.hpp"
#include "latentscope/tokenizer.hpp"

using namespace latentscope;

namespace {

struct GlobalOpts {
    int threads = 1;
    bool deterministic = false;
    std::string config_path;

    int effective_threads() const { return deterministic ? 1 : threads; }
};

// selection flags shared by analyze and reduce
struct SelectionOpts {
    std::string blocks;        // "a:b"
    std::string blocks_preset; // "intermediate"
    std::vector<int> points;
    std::vector<std::string> components;
    std::string add_phase;
    std::string seq_range; // "a:b"
    bool exclude_pos0 = false;
    size_t sample_limit = 0;
    uint64_t sample_seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--blocks", blocks, "block range lo:hi (drops emb/final captures)");
        cmd->add_option("--blocks-preset", blocks_preset,
                        "named block range: 'intermediate' (2-8 of 12, 6-27 of 32)");
        cmd->add_option("--points", points, "capture points to keep (1-6)")->delimiter(',');
        cmd->add_option("--components", components,
                        "components to keep (attn,mlp,norm_pre_attn,...)")
            ->delimiter(',');
        cmd->add_option("--add-phase", add_phase, "pre|post");
        cmd->add_option("--seq-range", seq_range, "sequence position range lo:hi");
        cmd->add_flag("--exclude-pos0", exclude_pos0, "drop sequence position 0");
        cmd->add_option("--sample-limit", sample_limit, "seeded sample subset size");
        cmd->add_option("--sample-seed", sample_seed, "seed for the sample subset");
    }

    store::Selection build(size_t n_blocks) const {
        store::Selection sel;
        if (!blocks_preset.empty()) {
            if (blocks_preset != "intermediate")
                throw UsageError("unknown --blocks-preset: " + blocks_preset);
            sel.block_range = store::Selection::intermediate_blocks(n_blocks);
        }
        if (!blocks.empty()) {
            auto colon = blocks.find(':');
            if (colon == std::string::npos) throw UsageError("--blocks wants lo:hi");
            sel.block_range = {std::stoi(blocks.substr(0, colon)),
                               std::stoi(blocks.substr(colon + 1))};
        }
        sel.points = points;
        for (const auto& c : components) sel.components.push_back(component_from_string(c));
        if (!add_phase.empty()) {
            if (add_phase == "pre") sel.add_phase = AddPhase::pre_add;
            else if (add_phase == "post") sel.add_phase = AddPhase::post_add;
            else throw UsageError("--add-phase wants pre or post");
        }
        if (!seq_range.empty()) {
            auto colon = seq_range.find(':');
            if (colon == std::string::npos) throw UsageError("--seq-range wants lo:hi");
            sel.seq_range = {std::stoull(seq_range.substr(0, colon)),
                             std::stoull(seq_range.substr(colon + 1))};
        }
        sel.exclude_position_0 = exclude_pos0;
        if (sample_limit > 0) sel.sample_limit = sample_limit;
        sel.seed = sample_seed;
        return sel;
    }

    nlohmann::json echo() const {
        nlohmann::json j = nlohmann::json::object();
        if (!blocks.empty()) j["blocks"] = blocks;
        if (!blocks_preset.empty()) j["blocks-preset"] = blocks_preset;
        if (!points.empty()) j["points"] = points;
        if (!components.empty()) j["components"] = components;
        if (!add_phase.empty()) j["add-phase"] = add_phase;
        if (!seq_range.empty()) j["seq-range"] = seq_range;
        if (exclude_pos0) j["exclude-pos0"] = true;
        if (sample_limit) j["sample-limit"] = sample_limit;
        if (sample_seed) j["sample-seed"] = sample_seed;
        return j;
    }
};

void echo_resolved(const std::string& subcommand, const nlohmann::json& settings,
                   const GlobalOpts& g) {
    nlohmann::json echo;
    echo[subcommand] = settings;
    echo["threads"] = g.threads;
    if (g.deterministic) echo["deterministic"] = true;
    std::cout << "resolved-config " << echo.dump() << "\n";
}

ckpt::ModelWeights load_model(const std::string& model_path, const std::string& naming_flag,
                              const std::string& config_path) {
    auto c = ckpt::TensorContainer::open(model_path);
    ModelConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot read model config: " + config_path);
        cfg = nlohmann::json::parse(in).get<ModelConfig>();
        cfg.validate();
    } else {
        cfg = ckpt::resolve_config(c);
    }
    ckpt::WeightNaming naming = naming_flag.empty() ? ckpt::resolve_naming(c)
                                                    : ckpt::naming_from_string(naming_flag);
    return ckpt::bind_weights(c, cfg, naming);
}

bpe::BpeVocab load_vocab_arg(const std::string& vocab_arg, const std::string& merges_arg) {
    namespace fs = std::filesystem;
    if (fs::is_directory(vocab_arg))
        return bpe::BpeVocab::from_files((fs::path(vocab_arg) / "vocab.json").string(),
                                         (fs::path(vocab_arg) / "merges.txt").string());
    if (merges_arg.empty())
        throw UsageError("--merges is required when --vocab is a vocab.json file");
    return bpe::BpeVocab::from_files(vocab_arg, merges_arg);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

// points CSV produced by `reduce`, consumed by `plot`
struct PointsFile {
    size_t n_blocks = 1;
    size_t seq_len = 1;
    linalg::Matrix coords;
    std::vector<plot::PointTag> tags;
};

void write_points_csv(const std::string& path, const linalg::Matrix& coords,
                      const std::vector<CaptureTag>& tags, const std::vector<size_t>& positions,
                      const std::vector<size_t>& samples, size_t n_blocks, size_t seq_len) {
    std::string out = "#latentscope-points v1 n_blocks=" + std::to_string(n_blocks) +
                      " seq_len=" + std::to_string(seq_len) + "\n";
    out += "sample,position,block,point,component,add_phase";
    for (size_t j = 0; j < coords.cols; ++j) out += ",d" + std::to_string(j);
    out += "\n";
    for (size_t i = 0; i < coords.rows; ++i) {
        const CaptureTag& t = tags[i];
        out += samples[i] == store::LatentView::kCollapsed ? "-"
                                                           : std::to_string(samples[i]);
        out += ',';
        out += positions[i] == store::LatentView::kCollapsed ? "-"
                                                             : std::to_string(positions[i]);
        out += ',';
        if (t.is_embedding()) out += "emb";
        else if (t.is_final_norm()) out += "final_norm";
        else out += std::to_string(t.block);
        out += ',' + std::to_string(t.point);
        out += ',' + to_string(t.component);
        out += ',' + to_string(t.add_phase);
        for (size_t j = 0; j < coords.cols; ++j) out += ',' + format_double(coords.at(i, j));
        out += '\n';
    }
    write_text_file(path, out);
}

PointsFile read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read points file: " + path);
    PointsFile pf;
    std::string line;
    std::vector<std::vector<double>> rows;
    bool header_seen = false;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto grab = [&](const std::string& key) -> size_t {
                auto at = line.find(key + "=");
                if (at == std::string::npos) return 0;
                return std::stoull(line.substr(at + key.size() + 1));
            };
            if (line.rfind("#latentscope-points", 0) == 0) {
                pf.n_blocks = std::max<size_t>(1, grab("n_blocks"));
                pf.seq_len = std::max<size_t>(1, grab("seq_len"));
            }
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!header_seen) {
            header_seen = true;
            continue; // column names
        }
        if (fields.size() < 8)
            throw ParseError(path + ":" + std::to_string(line_no) + ": too few columns");
        CaptureTag tag;
        if (fields[2] == "emb") tag = CaptureTag::embedding();
        else if (fields[2] == "final_norm") tag = CaptureTag::final_norm();
        else {
            int point = std::stoi(fields[3]);
            if (point >= 1 && point <= 6) {
                tag = CaptureTag::for_point(std::stoi(fields[2]), point);
            } else {
                tag.block = std::stoi(fields[2]);
                tag.point = 0;
                tag.component = component_from_string(fields[4]);
                tag.add_phase = add_phase_from_string(fields[5]);
            }
        }
        long position = fields[1] == "-" ? -1 : std::stol(fields[1]);
        pf.tags.push_back(plot::tag_from_capture(tag, pf.n_blocks, position,
                                                 static_cast<long>(pf.seq_len)));
        std::vector<double> coords;
        for (size_t j = 6; j < fields.size(); ++j) coords.push_back(std::stod(fields[j]));
        rows.push_back(std::move(coords));
    }
    if (rows.empty()) throw ValidationError(path + ": no points");
    pf.coords = linalg::Matrix(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != pf.coords.cols) throw ParseError(path + ": ragged point rows");
        std::copy(rows[i].begin(), rows[i].end(), pf.coords.row(i));
    }
    return pf;
}

analyze::NormReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read report: " + path);
    analyze::NormReport r;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        std::stringstream ss(line);
        std::string f;
        std::getline(ss, f, ',');
        r.indices.push_back(std::stoull(f));
        std::getline(ss, f, ',');
        r.means.push_back(std::stod(f));
        std::getline(ss, f, ',');
        r.counts.push_back(std::stoull(f));
    }
    return r;
}

analyze::Histogram read_histogram_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read histogram: " + path);
    analyze::Histogram h;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        std::stringstream ss(line);
        std::string f;
        std::getline(ss, f, ','); // bin index
        std::getline(ss, f, ',');
        double lo = std::stod(f);
        std::getline(ss, f, ',');
        double hi = std::stod(f);
        std::getline(ss, f, ',');
        if (h.edges.empty()) h.edges.push_back(lo);
        h.edges.push_back(hi);
        h.counts.push_back(std::stoull(f));
    }
    return h;
}

std::optional<std::array<double, 2>> parse_pair(const std::string& s, const char* flag) {
    if (s.empty()) return std::nullopt;
    auto at = s.find(':');
    if (at == std::string::npos) at = s.find(',');
    if (at == std::string::npos)
        throw UsageError(std::string(flag) + " wants two values like -1.5:2.0");
    return std::array<double, 2>{std::stod(s.substr(0, at)), std::stod(s.substr(at + 1))};
}

// merge a JSON config file into argv: config tokens go right after the
// subcommand so explicit flags override them (TakeLast policy)
std::vector<std::string> merge_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot read config file: " + config_path);
    nlohmann::json cfg = nlohmann::json::parse(in);

    // find the subcommand token
    size_t sub_at = SIZE_MAX;
    for (size_t i = 0; i < args.size(); ++i) {
        if (!args[i].empty() && args[i][0] != '-') {
            sub_at = i;
            break;
        }
        if (args[i] == "--config" || args[i] == "--threads") ++i; // skip their values
    }
    if (sub_at == SIZE_MAX) return args;

    std::vector<std::string> merged;
    auto append_entry = [&](const std::string& key, const nlohmann::json& value) {
        if (value.is_boolean()) {
            if (value.get<bool>()) merged.push_back("--" + key);
        } else if (value.is_array()) {
            std::string joined;
            for (auto& v : value) {
                if (!joined.empty()) joined += ",";
                joined += v.is_string() ? v.get<std::string>() : v.dump();
            }
            merged.push_back("--" + key);
            merged.push_back(joined);
        } else {
            merged.push_back("--" + key);
            merged.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
    };
    for (auto& [key, value] : cfg.items())
        if (!value.is_object()) append_entry(key, value);
    merged.insert(merged.end(), args.begin(), args.begin() + static_cast<ptrdiff_t>(sub_at + 1));
    std::string sub = args[sub_at];
    // two-level subcommands appear as "analyze norms" -> config key "analyze norms"
    std::string sub2 = sub;
    if (sub_at + 1 < args.size() && !args[sub_at + 1].empty() && args[sub_at + 1][0] != '-')
        sub2 = sub + " " + args[sub_at + 1];
    if (cfg.contains(sub2) && cfg[sub2].is_object()) {
        if (sub2 != sub) {
            merged.push_back(args[sub_at + 1]);
            ++sub_at;
        }
        for (auto& [key, value] : cfg[sub2].items()) append_entry(key, value);
    } else if (cfg.contains(sub) && cfg[sub].is_object()) {
        for (auto& [key, value] : cfg[sub].items()) append_entry(key, value);
    }
    merged.insert(merged.end(), args.begin() + static_cast<ptrdiff_t>(sub_at + 1), args.end());
    return merged;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentscope: transformer latent-state capture, analysis, and visualization"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);

    GlobalOpts global;
    if (const char* env = std::getenv("LATENTSCOPE_THREADS")) global.threads = std::atoi(env);
    app.add_option("--threads", global.threads, "worker threads (env LATENTSCOPE_THREADS)");
    app.add_flag("--deterministic", global.deterministic,
                 "force single-threaded deterministic paths");
    app.add_option("--config", global.config_path, "JSON config file; explicit flags win");

    // ---- gen-synthetic ----
    auto* gen = app.add_subcommand("gen-synthetic", "write a seeded random-weight checkpoint");
    struct {
        std::string out;
        size_t blocks = 2, dmodel = 16, heads = 4, dmlp = 32, vocab = 256, maxseq = 64;
        std::string norm = "layernorm", pos = "learned", activation = "gelu";
        double rope_theta = 10000.0;
        int bos_id = -1;
        uint64_t seed = 0;
    } g;
    gen->add_option("--out", g.out, "output checkpoint path")->required();
    gen->add_option("--blocks", g.blocks);
    gen->add_option("--dmodel", g.dmodel);
    gen->add_option("--heads", g.heads);
    gen->add_option("--dmlp", g.dmlp);
    gen->add_option("--vocab", g.vocab);
    gen->add_option("--maxseq", g.maxseq);
    gen->add_option("--norm", g.norm, "layernorm|rmsnorm");
    gen->add_option("--pos", g.pos, "learned|rope");
    gen->add_option("--activation", g.activation, "gelu|silu");
    gen->add_option("--rope-theta", g.rope_theta);
    gen->add_option("--bos-id", g.bos_id, "-1 for none");
    gen->add_option("--seed", g.seed);

    // ---- capture ----
    auto* cap = app.add_subcommand("capture", "run the model and store latent states");
    struct {
        std::string model, naming, model_config, mode = "text", corpus, vocab, merges, out;
        size_t samples = 8, seqlen = 64;
        bool prepend_bos = false, singular_random = false, no_emb = false, no_final = false;
        std::vector<int> points;
        std::string capture_blocks;
        int compress_to = 0;
        std::string precision = "f32";
        uint64_t seed = 0;
    } c;
    cap->add_option("--model", c.model, "checkpoint file")->required();
    cap->add_option("--naming", c.naming, "weight naming: gpt2|generic (default: detect)");
    cap->add_option("--model-config", c.model_config, "explicit model config JSON");
    cap->add_option("--mode", c.mode, "text|singular");
    cap->add_option("--corpus", c.corpus, "UTF-8 corpus file (text mode)");
    cap->add_option("--vocab", c.vocab, "vocab.json or a directory with vocab.json+merges.txt");
    cap->add_option("--merges", c.merges, "merges.txt (when --vocab is a file)");
    cap->add_option("--samples", c.samples);
    cap->add_option("--seqlen", c.seqlen);
    cap->add_flag("--prepend-bos", c.prepend_bos);
    cap->add_flag("--singular-random", c.singular_random,
                  "seeded token subsample instead of first-n");
    cap->add_option("--capture-points", c.points, "capture points to record")->delimiter(',');
    cap->add_option("--capture-blocks", c.capture_blocks, "restrict captured blocks lo:hi");
    cap->add_flag("--no-emb", c.no_emb, "skip the embedding capture");
    cap->add_flag("--no-final", c.no_final, "skip the final-norm capture");
    cap->add_option("--compress-to", c.compress_to, "PCA-compress stored dims (0 = off)");
    cap->add_option("--precision", c.precision, "at-rest precision f32|f16");
    cap->add_option("--seed", c.seed);
    cap->add_option("--out", c.out, "output .latds path")->required();

    // ---- info ----
    auto* info = app.add_subcommand("info", "dump a dataset header");
    std::string info_dataset;
    info->add_option("--dataset", info_dataset)->required();

    // ---- analyze ----
    auto* an = app.add_subcommand("analyze", "norm statistics over a dataset");
    auto* an_norms = an->add_subcommand("norms", "mean L2 norms along an axis");
    struct {
        std::string dataset, by = "position", out;
        size_t bins = 50;
    } a;
    SelectionOpts an_sel;
    an_norms->add_option("--dataset", a.dataset)->required();
    an_norms->add_option("--by", a.by, "position|capture|token");
    an_norms->add_option("--bins", a.bins, "histogram bins (token axis)");
    an_norms->add_option("--out", a.out, "CSV output path")->required();
    an_sel.attach(an_norms);

    // ---- reduce ----
    auto* red = app.add_subcommand("reduce", "fit/apply a dimensionality reducer");
    struct {
        std::string dataset, method = "pca", metric = "cosine", out;
        size_t dims = 2;
        bool unit = false;
        std::vector<std::string> mean_over;
        size_t fit_subset = 0, transform_subset = 0;
        std::string reuse_reducer, save_reducer;
        size_t neighbors = 15;
        double min_dist = 0.1;
        size_t epochs = 200;
        uint64_t seed = 0;
    } r;
    SelectionOpts red_sel;
    red->add_option("--dataset", r.dataset)->required();
    red->add_option("--method", r.method, "pca|umap");
    red->add_option("--dims", r.dims, "output dimensions");
    red->add_option("--metric", r.metric, "euclidean|cosine (umap)");
    red->add_flag("--unit", r.unit, "unit-normalize latents first");
    red->add_option("--mean-over", r.mean_over, "axes to average: sample,sequence,capture")
        ->delimiter(',');
    red->add_option("--fit-subset", r.fit_subset, "seeded vector subset used to fit (0 = all)");
    red->add_option("--transform-subset", r.transform_subset,
                    "seeded disjoint vector subset to transform (0 = all)");
    red->add_option("--reuse-reducer", r.reuse_reducer, "apply a fitted reducer file");
    red->add_option("--save-reducer", r.save_reducer, "reducer output path (default <out>.redm)");
    red->add_option("--neighbors", r.neighbors, "umap n_neighbors");
    red->add_option("--min-dist", r.min_dist, "umap min_dist");
    red->add_option("--epochs", r.epochs, "umap optimization epochs");
    red->add_option("--seed", r.seed);
    red->add_option("--out", r.out, "points CSV output")->required();
    red_sel.attach(red);

    // ---- plot ----
    auto* pl = app.add_subcommand("plot", "render SVG charts");
    struct {
        std::string kind = "scatter", points, report, out;
        std::string color_by = "none", xlim, ylim, limits_from, title, xlabel, ylabel;
        bool grid_pairs = false, log_scale = false;
        double point_radius = 2.0;
        size_t max_points = 50000;
        uint64_t seed = 0;
    } p;
    pl->add_option("--kind", p.kind, "scatter|grid|line|histogram");
    pl->add_flag("--grid-pairs", p.grid_pairs, "shorthand for --kind grid");
    pl->add_option("--points", p.points, "points CSV from `reduce`");
    pl->add_option("--report", p.report, "CSV from `analyze`");
    pl->add_option("--color-by", p.color_by, "component|position|none");
    pl->add_option("--xlim", p.xlim, "fixed x limits lo:hi");
    pl->add_option("--ylim", p.ylim, "fixed y limits lo:hi");
    pl->add_option("--limits-from", p.limits_from, "reuse axis limits from a prior SVG");
    pl->add_option("--title", p.title);
    pl->add_option("--xlabel", p.xlabel);
    pl->add_option("--ylabel", p.ylabel);
    pl->add_flag("--log-scale", p.log_scale, "log10 value axis (line charts)");
    pl->add_option("--point-radius", p.point_radius);
    pl->add_option("--max-points", p.max_points, "seeded down-sampling budget per panel");
    pl->add_option("--seed", p.seed);
    pl->add_option("--out", p.out, "SVG output path")->required();

    try {
        auto merged = merge_config_args(argc, argv);
        std::vector<const char*> cargs;
        cargs.push_back(argv[0]);
        for (auto& s : merged) cargs.push_back(s.c_str());
        try {
            app.parse(static_cast<int>(cargs.size()), cargs.data());
        } catch (const CLI::ParseError& e) {
            int code = app.exit(e);
            return code == 0 ? 0 : 1; // usage errors exit 1
        }
        int threads = global.effective_threads();

        if (gen->parsed()) {
            ModelConfig cfg;
            cfg.n_blocks = g.blocks;
            cfg.d_model = g.dmodel;
            cfg.n_heads = g.heads;
            cfg.d_mlp = g.dmlp;
            cfg.vocab_size = g.vocab;
            cfg.max_seq = g.maxseq;
            cfg.norm_kind = norm_kind_from_string(g.norm);
            cfg.pos_kind = pos_kind_from_string(g.pos);
            cfg.activation = activation_from_string(g.activation);
            cfg.rope_theta = g.rope_theta;
            if (g.bos_id >= 0) cfg.bos_id = static_cast<uint32_t>(g.bos_id);
            nlohmann::json cfg_json = cfg;
            echo_resolved("gen-synthetic", {{"out", g.out}, {"seed", g.seed}, {"model", cfg_json}},
                          global);
            synth::write_synthetic_checkpoint(g.out, cfg, g.seed);
            std::cout << nlohmann::json(
                             {{"checkpoint", g.out},
                              {"bytes", std::filesystem::file_size(g.out)}})
                             .dump()
                      << "\n";
            return 0;
        }

        if (cap->parsed()) {
            auto weights = load_model(c.model, c.naming, c.model_config);
            RunConfig run;
            run.mode = run_mode_from_string(c.mode);
            run.corpus_path = c.corpus;
            run.n_samples = c.samples;
            run.seq_len = run.mode == RunMode::singular ? (c.prepend_bos ? 2 : 1) : c.seqlen;
            run.prepend_bos = c.prepend_bos;
            run.singular_random = c.singular_random;
            run.seed = c.seed;
            if (c.compress_to > 0) run.compress_to = static_cast<size_t>(c.compress_to);
            run.capture.precision = precision_from_string(c.precision);
            if (!c.points.empty()) run.capture.points = c.points;
            run.capture.include_embedding = !c.no_emb;
            run.capture.include_final_norm = !c.no_final;
            if (!c.capture_blocks.empty()) {
                auto colon = c.capture_blocks.find(':');
                if (colon == std::string::npos) throw UsageError("--capture-blocks wants lo:hi");
                run.capture.block_lo = std::stoi(c.capture_blocks.substr(0, colon));
                run.capture.block_hi = std::stoi(c.capture_blocks.substr(colon + 1));
            }
            nlohmann::json run_json = run;
            echo_resolved("capture", {{"model", c.model}, {"out", c.out}, {"run", run_json}},
                          global);

            std::optional<bpe::BpeVocab> vocab;
            if (run.mode == RunMode::text) {
                if (c.vocab.empty()) throw UsageError("text mode requires --vocab (and --merges)");
                vocab = load_vocab_arg(c.vocab, c.merges);
            }
            auto summary =
                pipeline::run_capture(run, weights, vocab ? &*vocab : nullptr, c.out, threads);
            std::cout << nlohmann::json({{"dataset", summary.out_path},
                                         {"shape", summary.header.shape},
                                         {"bytes", summary.bytes_written},
                                         {"skipped", summary.header.skipped_samples},
                                         {"compressed", summary.header.compressed}})
                             .dump()
                      << "\n";
            return 0;
        }

        if (info->parsed()) {
            auto ds = store::load(info_dataset);
            echo_resolved("info", {{"dataset", info_dataset}}, global);
            std::cout << ds.header_raw() << "\n";
            return 0;
        }

        if (an_norms->parsed()) {
            auto ds = store::load(a.dataset);
            auto sel = an_sel.build(ds.header.model.n_blocks);
            nlohmann::json settings = {{"dataset", a.dataset},
                                       {"by", a.by},
                                       {"out", a.out},
                                       {"selection", an_sel.echo()}};
            if (a.by == "token") settings["bins"] = a.bins;
            echo_resolved("analyze norms", settings, global);
            std::string csv;
            if (a.by == "position")
                csv = analyze::to_csv(analyze::norms_by_position(ds, sel, threads));
            else if (a.by == "capture")
                csv = analyze::to_csv(analyze::norms_by_capture(ds, sel, threads));
            else if (a.by == "token")
                csv = analyze::to_csv(analyze::token_norm_histogram(ds, sel, a.bins, threads));
            else
                throw UsageError("--by wants position, capture, or token");
            write_text_file(a.out, csv);
            std::cout << nlohmann::json({{"report", a.out}}).dump() << "\n";
            return 0;
        }

        if (red->parsed()) {
            auto ds = store::load(r.dataset);
            auto sel = red_sel.build(ds.header.model.n_blocks);
            echo_resolved("reduce",
                          {{"dataset", r.dataset},
                           {"method", r.method},
                           {"dims", r.dims},
                           {"metric", r.metric},
                           {"unit", r.unit},
                           {"mean-over", r.mean_over},
                           {"fit-subset", r.fit_subset},
                           {"transform-subset", r.transform_subset},
                           {"seed", r.seed},
                           {"out", r.out},
                           {"selection", red_sel.echo()}},
                          global);
            auto view = store::select(ds, sel);
            if (r.unit) view = view.unit_normalize();
            if (!r.mean_over.empty()) {
                std::vector<store::LatentView::Axis> axes;
                for (const auto& ax : r.mean_over) {
                    if (ax == "sample") axes.push_back(store::LatentView::Axis::sample);
                    else if (ax == "sequence") axes.push_back(store::LatentView::Axis::sequence);
                    else if (ax == "capture") axes.push_back(store::LatentView::Axis::capture);
                    else throw UsageError("--mean-over wants sample,sequence,capture");
                }
                view = view.mean_over(axes);
            }
            auto flat = view.flatten();
            const size_t total = flat.matrix.rows;

            // seeded fit/transform vector subsets; the transform set draws
            // from the complement when both are requested
            std::vector<size_t> fit_rows(total), tr_rows(total);
            for (size_t i = 0; i < total; ++i) fit_rows[i] = tr_rows[i] = i;
            if (r.fit_subset > 0 && r.fit_subset < total) {
                Rng rng(r.seed);
                auto chosen = sample_without_replacement(rng, total, r.fit_subset);
                fit_rows.assign(chosen.begin(), chosen.end());
                if (r.transform_subset > 0) {
                    std::vector<uint8_t> in_fit(total, 0);
                    for (size_t i : fit_rows) in_fit[i] = 1;
                    std::vector<size_t> rest;
                    for (size_t i = 0; i < total; ++i)
                        if (!in_fit[i]) rest.push_back(i);
                    if (r.transform_subset > rest.size())
                        throw ValidationError("transform-subset exceeds vectors left after fit");
                    Rng rng2(r.seed + 1);
                    auto pick = sample_without_replacement(rng2, rest.size(), r.transform_subset);
                    tr_rows.clear();
                    for (auto i : pick) tr_rows.push_back(rest[i]);
                }
            } else if (r.transform_subset > 0 && r.transform_subset < total) {
                Rng rng2(r.seed + 1);
                auto pick = sample_without_replacement(rng2, total, r.transform_subset);
                tr_rows.assign(pick.begin(), pick.end());
            }

            auto gather = [&](const std::vector<size_t>& rows) {
                linalg::Matrix m(rows.size(), flat.matrix.cols);
                for (size_t i = 0; i < rows.size(); ++i)
                    std::copy(flat.matrix.row(rows[i]), flat.matrix.row(rows[i]) + flat.matrix.cols,
                              m.row(i));
                return m;
            };

            reduce::Reducer reducer;
            linalg::Matrix points;
            bool same_set = r.fit_subset == 0 && r.transform_subset == 0;
            if (!r.reuse_reducer.empty()) {
                reducer = reduce::reducer_load(r.reuse_reducer);
                points = reducer.transform(gather(tr_rows));
            } else if (r.method == "pca") {
                reducer.pca = reduce::pca_fit(gather(fit_rows), r.dims, "fit on " + r.dataset);
                points = reduce::pca_transform(*reducer.pca, gather(tr_rows));
            } else if (r.method == "umap") {
                reduce::UmapParams params;
                params.n_neighbors = r.neighbors;
                params.min_dist = r.min_dist;
                params.metric = reduce::metric_from_string(r.metric);
                params.n_epochs = r.epochs;
                params.seed = r.seed;
                params.threads = threads;
                reducer.umap = reduce::umap_fit(gather(fit_rows), r.dims, params);
                if (same_set) {
                    // fit set == transform set: emit the fitted embedding
                    points = linalg::Matrix(total, r.dims);
                    for (size_t i = 0; i < total; ++i)
                        for (size_t j = 0; j < r.dims; ++j)
                            points.at(i, j) = reducer.umap->embedding[i * r.dims + j];
                } else {
                    points = reduce::umap_transform(*reducer.umap, gather(tr_rows));
                }
            } else {
                throw UsageError("--method wants pca or umap");
            }

            std::vector<CaptureTag> out_tags;
            std::vector<size_t> out_pos, out_samples;
            for (size_t i : tr_rows) {
                out_tags.push_back(flat.row_tags[i]);
                out_pos.push_back(flat.row_positions[i]);
                out_samples.push_back(flat.row_samples[i]);
            }
            write_points_csv(r.out, points, out_tags, out_pos, out_samples,
                             ds.header.model.n_blocks, ds.header.seq_len());
            std::string reducer_out = r.save_reducer.empty() ? r.out + ".redm" : r.save_reducer;
            if (r.reuse_reducer.empty()) reduce::reducer_save(reducer, reducer_out);
            nlohmann::json out_json = {
                {"points", r.out},
                {"rows", points.rows},
                {"dims", points.cols},
                {"reducer", r.reuse_reducer.empty() ? reducer_out : r.reuse_reducer}};
            if (reducer.umap) {
                out_json["disconnected"] = reducer.umap->disconnected;
                out_json["audit_recall"] = reducer.umap->audit_recall;
            }
            if (view.degenerate_count() > 0)
                out_json["degenerate_vectors"] = view.degenerate_count();
            std::cout << out_json.dump() << "\n";
            return 0;
        }

        if (pl->parsed()) {
            std::string kind = p.grid_pairs ? "grid" : p.kind;
            plot::PlotSpec spec;
            spec.color_by =
                p.color_by == "none" ? plot::ColorBy::none : plot::color_by_from_string(p.color_by);
            spec.title = p.title;
            spec.xlabel = p.xlabel;
            spec.ylabel = p.ylabel;
            spec.log_scale = p.log_scale;
            spec.point_radius = p.point_radius;
            spec.max_points_per_panel = p.max_points;
            spec.seed = p.seed;
            auto xl = parse_pair(p.xlim, "--xlim");
            auto yl = parse_pair(p.ylim, "--ylim");
            if (!p.limits_from.empty()) {
                std::ifstream in(p.limits_from);
                if (!in) throw IoError("cannot read prior SVG: " + p.limits_from);
                std::stringstream buf;
                buf << in.rdbuf();
                spec.limits = plot::limits_from_svg(buf.str());
            }
            if (xl && yl) spec.limits = {{(*xl)[0], (*xl)[1], (*yl)[0], (*yl)[1]}};
            else if (xl || yl) throw UsageError("--xlim and --ylim must be given together");
            echo_resolved("plot",
                          {{"kind", kind},
                           {"points", p.points},
                           {"report", p.report},
                           {"color-by", p.color_by},
                           {"out", p.out}},
                          global);
            std::string svg;
            if (kind == "scatter" || kind == "grid") {
                if (p.points.empty()) throw UsageError("scatter/grid plots need --points");
                auto pf = read_points_csv(p.points);
                if (kind == "grid") {
                    svg = plot::render_pair_grid(pf.coords, pf.tags, spec);
                } else {
                    if (pf.coords.cols < 2)
                        throw ValidationError("scatter needs at least 2 point dims");
                    std::vector<std::array<double, 2>> pts(pf.coords.rows);
                    for (size_t i = 0; i < pf.coords.rows; ++i)
                        pts[i] = {pf.coords.at(i, 0), pf.coords.at(i, 1)};
                    svg = plot::render_scatter(pts, pf.tags, spec);
                }
            } else if (kind == "line") {
                if (p.report.empty()) throw UsageError("line plots need --report");
                svg = plot::render_line(read_report_csv(p.report), spec);
            } else if (kind == "histogram") {
                if (p.report.empty()) throw UsageError("histogram plots need --report");
                svg = plot::render_histogram(read_histogram_csv(p.report), spec);
            } else {
                throw UsageError("--kind wants scatter, grid, line, or histogram");
            }
            write_text_file(p.out, svg);
            std::cout << nlohmann::json({{"svg", p.out}, {"bytes", svg.size()}}).dump() << "\n";
            return 0;
        }
        throw UsageError("no subcommand given");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
