#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "latentscope/tokenizer.hpp"
#include "latentscope/util.hpp"

using namespace latentscope;

namespace {

const char* fixtures_dir() { return LATENTSCOPE_FIXTURES_DIR; }

bpe::BpeVocab load_fixture_vocab() {
    std::string dir = std::string(fixtures_dir()) + "/bpe";
    return bpe::BpeVocab::from_files(dir + "/vocab.json", dir + "/merges.txt");
}

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "latentscope_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

// Deterministic prose-like text with mixed scripts and punctuation.
std::string synth_text(size_t target_bytes, uint64_t seed) {
    static const char* frags[] = {
        "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "Hello", "world",
        "don't", "it's", "we've", "I'll", "42", "1024", "3.14", "x=1;", "(note)", "e.g.",
        "—", "…", "κείμενο", "текст", "文本", "naïve", "café", "MiXeD", "CAPS", "a,b",
    };
    static const char* seps[] = {" ", " ", " ", "  ", "\n", "\t", ". ", "! ", "? ", ", "};
    Rng rng(seed);
    std::string out;
    out.reserve(target_bytes + 32);
    while (out.size() < target_bytes) {
        out += frags[rand_below(rng, sizeof(frags) / sizeof(char*))];
        out += seps[rand_below(rng, sizeof(seps) / sizeof(char*))];
    }
    return out;
}

} // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("fixture vocab loads with expected size") {
    auto v = load_fixture_vocab();
    CHECK(v.vocab_size() == 800);
    CHECK(v.merge_count() > 0);
    CHECK(v.bos_id().has_value()); // <|endoftext|>
}

TEST_CASE("encode matches the frozen reference-implementation oracle") {
    auto v = load_fixture_vocab();
    std::ifstream in(std::string(fixtures_dir()) + "/bpe/cases.json");
    REQUIRE(in.good());
    nlohmann::json cases = nlohmann::json::parse(in);
    REQUIRE(cases.size() > 10);
    for (const auto& c : cases) {
        std::string text = c["text"].get<std::string>();
        std::vector<bpe::TokenId> expected;
        for (const auto& id : c["ids"]) expected.push_back(id.get<bpe::TokenId>());
        auto got = v.encode(text);
        CHECK_MESSAGE(got == expected, "text: ", text);
        CHECK(v.decode(got) == text);
    }
}

TEST_CASE("empty input") {
    auto v = load_fixture_vocab();
    CHECK(v.encode("").empty());
    CHECK(v.decode({}).empty());
}

TEST_CASE("round trip on random utf-8 text") {
    auto v = load_fixture_vocab();
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        std::string text = synth_text(2048, seed);
        CHECK(v.decode(v.encode(text)) == text);
    }
}

TEST_CASE("round trip survives raw non-utf8 bytes") {
    auto v = load_fixture_vocab();
    std::string text = "ok\x80\xFE\xC3(";
    CHECK(v.decode(v.encode(text)) == text);
}

TEST_CASE("monotone concatenation") {
    auto v = load_fixture_vocab();
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        std::string a = synth_text(64 + rand_below(rng, 200), rng());
        std::string b = synth_text(64 + rand_below(rng, 200), rng());
        auto ids = v.encode(a);
        auto ids_b = v.encode(b);
        ids.insert(ids.end(), ids_b.begin(), ids_b.end());
        CHECK(v.decode(ids) == a + b);
    }
}

TEST_CASE("encode determinism") {
    auto v = load_fixture_vocab();
    std::string text = synth_text(4096, 99);
    CHECK(v.encode(text) == v.encode(text));
}

TEST_CASE("degenerate byte-fallback vocab") {
    auto v = bpe::BpeVocab::byte_fallback();
    CHECK(v.vocab_size() == 256);
    CHECK(v.merge_count() == 0);
    std::string text = "any bytes at all \x01\x02\xFF";
    auto ids = v.encode(text);
    CHECK(ids.size() == text.size()); // no merges: one token per byte
    CHECK(v.decode(ids) == text);
}

TEST_CASE("degenerate vocab from files") {
    // 256 byte tokens, merges file with only the header line
    nlohmann::json vocab = nlohmann::json::object();
    auto full = bpe::BpeVocab::byte_fallback();
    for (int b = 0; b < 256; ++b) {
        std::string sym;
        bpe::detail::append_utf8(sym, bpe::detail::byte_tables().byte_to_cp[(size_t)b]);
        vocab[sym] = b;
    }
    auto vp = temp_file("degen_vocab.json");
    auto mp = temp_file("degen_merges.txt");
    write_file(vp, vocab.dump());
    write_file(mp, "#version: 0.2\n");
    auto v = bpe::BpeVocab::from_files(vp.string(), mp.string());
    CHECK(v.vocab_size() == 256);
    CHECK(v.decode(v.encode("abc")) == "abc");
}

TEST_CASE("merge referencing unknown token is rejected") {
    nlohmann::json vocab = nlohmann::json::object();
    for (int b = 0; b < 256; ++b) {
        std::string sym;
        bpe::detail::append_utf8(sym, bpe::detail::byte_tables().byte_to_cp[(size_t)b]);
        vocab[sym] = b;
    }
    auto vp = temp_file("badmerge_vocab.json");
    auto mp = temp_file("badmerge_merges.txt");
    write_file(vp, vocab.dump());
    write_file(mp, "#version: 0.2\nzz qq\n");
    CHECK_THROWS_AS(bpe::BpeVocab::from_files(vp.string(), mp.string()), ValidationError);
}

TEST_CASE("malformed vocab json reports a parse error with location") {
    auto vp = temp_file("broken_vocab.json");
    auto mp = temp_file("broken_merges.txt");
    write_file(vp, "{\n\"a\": 0,\n\"b\":\n}");
    write_file(mp, "#version: 0.2\n");
    try {
        bpe::BpeVocab::from_files(vp.string(), mp.string());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":4") != std::string::npos);
    }
}

TEST_CASE("malformed merge line reports line number") {
    nlohmann::json vocab = nlohmann::json::object();
    for (int b = 0; b < 256; ++b) {
        std::string sym;
        bpe::detail::append_utf8(sym, bpe::detail::byte_tables().byte_to_cp[(size_t)b]);
        vocab[sym] = b;
    }
    auto vp = temp_file("line_vocab.json");
    auto mp = temp_file("line_merges.txt");
    write_file(vp, vocab.dump());
    write_file(mp, "#version: 0.2\na b c\n");
    try {
        bpe::BpeVocab::from_files(vp.string(), mp.string());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("non-dense ids are rejected") {
    nlohmann::json vocab = nlohmann::json::object();
    for (int b = 0; b < 256; ++b) {
        std::string sym;
        bpe::detail::append_utf8(sym, bpe::detail::byte_tables().byte_to_cp[(size_t)b]);
        vocab[sym] = b == 255 ? 400 : b; // gap at 255
    }
    auto vp = temp_file("gap_vocab.json");
    auto mp = temp_file("gap_merges.txt");
    write_file(vp, vocab.dump());
    write_file(mp, "#version: 0.2\n");
    CHECK_THROWS_AS(bpe::BpeVocab::from_files(vp.string(), mp.string()), ValidationError);
}

TEST_CASE("decode rejects out-of-range id") {
    auto v = bpe::BpeVocab::byte_fallback();
    CHECK_THROWS_AS(v.decode({9999}), ValidationError);
}

TEST_CASE("missing file raises io error") {
    CHECK_THROWS_AS(bpe::BpeVocab::from_files("/nonexistent/v.json", "/nonexistent/m.txt"),
                    IoError);
}

// Gated on real GPT-2 vocab files (see scripts/fetch_gpt2.py).
TEST_CASE("gpt2 vocab: size and pinned ids" * doctest::skip(std::getenv("LATENTSCOPE_GPT2_DIR") == nullptr)) {
    const char* dir = std::getenv("LATENTSCOPE_GPT2_DIR");
    if (!dir) return;
    auto v = bpe::BpeVocab::from_files(std::string(dir) + "/vocab.json",
                                       std::string(dir) + "/merges.txt");
    CHECK(v.vocab_size() == 50257);
    CHECK(v.encode("Hello world") == std::vector<bpe::TokenId>{15496, 995});
    CHECK(v.decode({15496, 995}) == "Hello world");
}

} // TEST_SUITE
