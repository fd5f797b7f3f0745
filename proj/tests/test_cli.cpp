// Subprocess tests of the latentscope binary: workflows, exit codes, config
// merging, and the reproducibility contracts.

#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>

#include "json.hpp"

using nlohmann::json;

namespace {

const char* cli_bin() { return LATENTSCOPE_CLI_BIN; }

struct RunResult {
    int exit_code = -1;
    std::string output; // stdout + stderr
};

RunResult run(const std::string& args) {
    std::string cmd = std::string(cli_bin()) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    char buf[4096];
    while (size_t got = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, got);
    int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::filesystem::path work_dir() {
    auto dir = std::filesystem::temp_directory_path() / "latentscope_cli_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string wpath(const std::string& name) { return (work_dir() / name).string(); }

std::string fixture_bpe_dir() { return std::string(LATENTSCOPE_FIXTURES_DIR) + "/bpe"; }

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// last stdout line that parses as a JSON object
json last_json(const std::string& output) {
    std::istringstream ss(output);
    std::string line, best;
    while (std::getline(ss, line))
        if (!line.empty() && line[0] == '{') best = line;
    REQUIRE(!best.empty());
    return json::parse(best);
}

void ensure_corpus(const std::string& path) {
    if (std::filesystem::exists(path)) return;
    static const char* words[] = {"the", "quick", "brown", "fox", "jumps", "over",
                                  "a",   "lazy",  "dog",   "and", "then"};
    std::mt19937_64 rng(12);
    std::string text;
    while (text.size() < 30000) {
        text += words[rng() % 11];
        text += rng() % 13 == 0 ? ".\n" : " ";
    }
    std::ofstream(path, std::ios::binary) << text;
}

const std::string kModel = wpath("cli_model.st");

void ensure_model() {
    if (std::filesystem::exists(kModel)) return;
    auto r = run("gen-synthetic --out " + kModel +
                 " --blocks 3 --dmodel 24 --heads 4 --dmlp 48 --vocab 820 --maxseq 64 "
                 "--bos-id 0 --seed 5");
    REQUIRE(r.exit_code == 0);
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("capture singular: forced shape in the summary") {
    ensure_model();
    auto r = run("capture --model " + kModel + " --mode singular --samples 64 --seed 1 --out " +
                 wpath("sing.latds"));
    REQUIRE(r.exit_code == 0);
    auto summary = last_json(r.output);
    CHECK(summary["shape"] == json::array({64, 1, 6 * 3 + 2, 24}));
    CHECK(r.output.find("resolved-config ") != std::string::npos);
}

TEST_CASE("capture text twice with one seed: identical files") {
    ensure_model();
    ensure_corpus(wpath("corpus.txt"));
    std::string base = "capture --model " + kModel + " --mode text --corpus " + wpath("corpus.txt") +
                       " --vocab " + fixture_bpe_dir() + " --samples 4 --seqlen 12 --seed 7 --out ";
    REQUIRE(run(base + wpath("det1.latds")).exit_code == 0);
    REQUIRE(run(base + wpath("det2.latds")).exit_code == 0);
    CHECK(slurp(wpath("det1.latds")) == slurp(wpath("det2.latds")));
}

TEST_CASE("compressed capture is rejected by norm analysis with exit 3") {
    ensure_model();
    auto r = run("capture --model " + kModel +
                 " --mode singular --samples 32 --seed 2 --compress-to 8 --out " +
                 wpath("comp.latds"));
    REQUIRE(r.exit_code == 0);
    CHECK(last_json(r.output)["compressed"] == true);
    auto a = run("analyze norms --dataset " + wpath("comp.latds") + " --by position --out " +
                 wpath("comp.csv"));
    CHECK(a.exit_code == 3);
    CHECK(a.output.find("full-dimension") != std::string::npos);
}

TEST_CASE("exit codes: usage 1, io 2, validation 3") {
    CHECK(run("analyze norms --dataset x.latds").exit_code == 1); // missing --out
    CHECK(run("nonsense-subcommand").exit_code == 1);
    CHECK(run("info --dataset " + wpath("does_not_exist.latds")).exit_code == 2);
    ensure_model();
    // singular samples beyond vocab size -> validation
    auto r = run("capture --model " + kModel + " --mode singular --samples 9999 --out " +
                 wpath("x.latds"));
    CHECK(r.exit_code == 3);
}

TEST_CASE("info round-trips the stored header") {
    ensure_model();
    auto cap = run("capture --model " + kModel + " --mode singular --samples 8 --seed 3 --out " +
                   wpath("info.latds"));
    REQUIRE(cap.exit_code == 0);
    auto r = run("info --dataset " + wpath("info.latds"));
    REQUIRE(r.exit_code == 0);
    auto header = last_json(r.output);
    CHECK(header["shape"] == json::array({8, 1, 20, 24}));
    CHECK(header["format_version"] == 1);
    CHECK(header["captures"].size() == 20);
}

TEST_CASE("config file merge: flags win over config values") {
    ensure_model();
    json cfg = {{"capture",
                 {{"model", kModel},
                  {"mode", "singular"},
                  {"samples", 16},
                  {"seed", 9},
                  {"out", wpath("cfg_a.latds")}}}};
    std::ofstream(wpath("run.json")) << cfg.dump();
    auto r1 = run("--config " + wpath("run.json") + " capture");
    REQUIRE(r1.exit_code == 0);
    CHECK(last_json(r1.output)["shape"][0] == 16);
    // explicit flag overrides the config's samples value
    auto r2 = run("--config " + wpath("run.json") + " capture --samples 4 --out " +
                  wpath("cfg_b.latds"));
    REQUIRE(r2.exit_code == 0);
    CHECK(last_json(r2.output)["shape"][0] == 4);
}

TEST_CASE("paper-recipe reduce and 15-panel grid plot") {
    ensure_model();
    ensure_corpus(wpath("corpus.txt"));
    auto cap = run("capture --model " + kModel + " --mode text --corpus " + wpath("corpus.txt") +
                   " --vocab " + fixture_bpe_dir() +
                   " --samples 4 --seqlen 12 --seed 11 --out " + wpath("grid.latds"));
    REQUIRE(cap.exit_code == 0);
    auto red = run("reduce --dataset " + wpath("grid.latds") +
                   " --method pca --dims 6 --unit --mean-over sample,capture --out " +
                   wpath("grid_pts.csv"));
    REQUIRE(red.exit_code == 0);
    CHECK(last_json(red.output)["dims"] == 6);
    auto pl = run("plot --points " + wpath("grid_pts.csv") +
                  " --grid-pairs --color-by position --out " + wpath("grid.svg"));
    REQUIRE(pl.exit_code == 0);
    std::string svg = slurp(wpath("grid.svg"));
    CHECK(svg.find("data-pairs=\"15\"") != std::string::npos);
}

TEST_CASE("umap recipe with fit/transform split runs") {
    ensure_model();
    ensure_corpus(wpath("corpus.txt"));
    auto cap = run("capture --model " + kModel + " --mode text --corpus " + wpath("corpus.txt") +
                   " --vocab " + fixture_bpe_dir() +
                   " --samples 4 --seqlen 10 --seed 13 --out " + wpath("umap.latds"));
    REQUIRE(cap.exit_code == 0);
    auto red = run("reduce --dataset " + wpath("umap.latds") +
                   " --method umap --metric cosine --dims 2 --exclude-pos0 "
                   "--fit-subset 300 --transform-subset 200 --neighbors 10 --epochs 40 "
                   "--seed 3 --out " +
                   wpath("umap_pts.csv"));
    REQUIRE(red.exit_code == 0);
    auto out = last_json(red.output);
    CHECK(out["rows"] == 200);
    CHECK(out["dims"] == 2);
    // reducer file can be reused on the same dataset
    auto reuse = run("reduce --dataset " + wpath("umap.latds") +
                     " --method umap --reuse-reducer " + wpath("umap_pts.csv.redm") +
                     " --exclude-pos0 --transform-subset 50 --seed 4 --out " +
                     wpath("umap_pts2.csv"));
    REQUIRE(reuse.exit_code == 0);
    CHECK(last_json(reuse.output)["rows"] == 50);
}

TEST_CASE("axis limits carry across runs via --limits-from") {
    ensure_model();
    auto cap = run("capture --model " + kModel + " --mode singular --samples 24 --seed 5 --out " +
                   wpath("lim.latds"));
    REQUIRE(cap.exit_code == 0);
    auto red = run("reduce --dataset " + wpath("lim.latds") + " --method pca --dims 2 --out " +
                   wpath("lim_pts.csv"));
    REQUIRE(red.exit_code == 0);
    auto p1 = run("plot --points " + wpath("lim_pts.csv") + " --kind scatter --xlim -9:9 "
                  "--ylim -5:5 --out " +
                  wpath("lim1.svg"));
    REQUIRE(p1.exit_code == 0);
    auto p2 = run("plot --points " + wpath("lim_pts.csv") + " --kind scatter --limits-from " +
                  wpath("lim1.svg") + " --out " + wpath("lim2.svg"));
    REQUIRE(p2.exit_code == 0);
    std::string s1 = slurp(wpath("lim1.svg")), s2 = slurp(wpath("lim2.svg"));
    auto axes = [](const std::string& svg) {
        auto at = svg.find("data-xmin");
        return svg.substr(at, svg.find("data-plot-x") - at);
    };
    CHECK(axes(s1) == axes(s2));
}

TEST_CASE("resolved-config echo reproduces the run when re-fed") {
    ensure_model();
    auto r1 = run("capture --model " + kModel + " --mode singular --samples 12 --seed 21 --out " +
                  wpath("echo_a.latds"));
    REQUIRE(r1.exit_code == 0);
    // rebuild a config file from the echoed settings
    std::istringstream ss(r1.output);
    std::string line, echo_line;
    while (std::getline(ss, line))
        if (line.rfind("resolved-config ", 0) == 0) echo_line = line.substr(16);
    REQUIRE(!echo_line.empty());
    auto echo = json::parse(echo_line);
    json cfg = {{"capture",
                 {{"model", echo["capture"]["model"]},
                  {"mode", "singular"},
                  {"samples", echo["capture"]["run"]["n_samples"]},
                  {"seed", echo["capture"]["run"]["seed"]},
                  {"out", wpath("echo_b.latds")}}}};
    std::ofstream(wpath("echo.json")) << cfg.dump();
    auto r2 = run("--config " + wpath("echo.json") + " capture");
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(wpath("echo_a.latds")) == slurp(wpath("echo_b.latds")));
}

} // TEST_SUITE
