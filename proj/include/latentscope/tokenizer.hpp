#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "latentscope/error.hpp"

namespace latentscope::bpe {

using TokenId = uint32_t;

namespace detail {

// --- UTF-8 ---

inline void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Decodes one codepoint at `pos`; malformed bytes decode as U+FFFD with
// length 1 so raw byte content always survives segmentation.
inline uint32_t decode_utf8(std::string_view s, size_t pos, size_t& len) {
    uint8_t b0 = static_cast<uint8_t>(s[pos]);
    if (b0 < 0x80) {
        len = 1;
        return b0;
    }
    int need = b0 >= 0xF0 ? 3 : b0 >= 0xE0 ? 2 : b0 >= 0xC0 ? 1 : -1;
    if (need < 0 || pos + static_cast<size_t>(need) >= s.size()) {
        len = 1;
        return 0xFFFD;
    }
    uint32_t cp = b0 & (0x3F >> need);
    for (int i = 1; i <= need; ++i) {
        uint8_t b = static_cast<uint8_t>(s[pos + static_cast<size_t>(i)]);
        if ((b & 0xC0) != 0x80) {
            len = 1;
            return 0xFFFD;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    len = static_cast<size_t>(need) + 1;
    return cp;
}

// --- Unicode categories (subset tables for \p{L}, \p{N}, White_Space) ---

struct Range {
    uint32_t lo, hi;
};

inline bool in_ranges(uint32_t cp, const Range* ranges, size_t n) {
    size_t lo = 0, hi = n;
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (cp < ranges[mid].lo)
            hi = mid;
        else if (cp > ranges[mid].hi)
            lo = mid + 1;
        else
            return true;
    }
    return false;
}

inline bool is_letter(uint32_t cp) {
    static constexpr Range kLetters[] = {
        {0x41, 0x5A},     {0x61, 0x7A},     {0xAA, 0xAA},     {0xB5, 0xB5},
        {0xBA, 0xBA},     {0xC0, 0xD6},     {0xD8, 0xF6},     {0xF8, 0x2C1},
        {0x2C6, 0x2D1},   {0x2E0, 0x2E4},   {0x370, 0x374},   {0x376, 0x377},
        {0x37A, 0x37D},   {0x37F, 0x37F},   {0x386, 0x386},   {0x388, 0x38A},
        {0x38C, 0x38C},   {0x38E, 0x3A1},   {0x3A3, 0x3F5},   {0x3F7, 0x481},
        {0x48A, 0x52F},   {0x531, 0x556},   {0x559, 0x559},   {0x560, 0x588},
        {0x5D0, 0x5EA},   {0x5EF, 0x5F2},   {0x620, 0x64A},   {0x66E, 0x66F},
        {0x671, 0x6D3},   {0x6D5, 0x6D5},   {0x6E5, 0x6E6},   {0x6EE, 0x6EF},
        {0x6FA, 0x6FC},   {0x6FF, 0x6FF},   {0x710, 0x72F},   {0x74D, 0x7A5},
        {0x7B1, 0x7B1},   {0x904, 0x939},   {0x93D, 0x93D},   {0x950, 0x950},
        {0x958, 0x961},   {0x971, 0x980},   {0x985, 0x98C},   {0x98F, 0x990},
        {0x993, 0x9A8},   {0x9AA, 0x9B0},   {0x9B2, 0x9B2},   {0x9B6, 0x9B9},
        {0xE01, 0xE30},   {0xE32, 0xE33},   {0xE40, 0xE46},   {0x10A0, 0x10C5},
        {0x10D0, 0x10FA}, {0x1100, 0x1159}, {0x115F, 0x11A2}, {0x11A8, 0x11F9},
        {0x1E00, 0x1F15}, {0x1F18, 0x1F1D}, {0x1F20, 0x1F45}, {0x1F48, 0x1F4D},
        {0x1F50, 0x1F57}, {0x1F59, 0x1F59}, {0x1F5B, 0x1F5B}, {0x1F5D, 0x1F5D},
        {0x1F5F, 0x1F7D}, {0x1F80, 0x1FB4}, {0x1FB6, 0x1FBC}, {0x1FBE, 0x1FBE},
        {0x1FC2, 0x1FC4}, {0x1FC6, 0x1FCC}, {0x1FD0, 0x1FD3}, {0x1FD6, 0x1FDB},
        {0x1FE0, 0x1FEC}, {0x1FF2, 0x1FF4}, {0x1FF6, 0x1FFC}, {0x2071, 0x2071},
        {0x207F, 0x207F}, {0x2090, 0x209C}, {0x2102, 0x2102}, {0x2107, 0x2107},
        {0x210A, 0x2113}, {0x2115, 0x2115}, {0x2119, 0x211D}, {0x2124, 0x2124},
        {0x2126, 0x2126}, {0x2128, 0x2128}, {0x212A, 0x212D}, {0x212F, 0x2139},
        {0x213C, 0x213F}, {0x2145, 0x2149}, {0x2C60, 0x2C7F}, {0x3041, 0x3096},
        {0x309D, 0x309F}, {0x30A1, 0x30FA}, {0x30FC, 0x30FF}, {0x3105, 0x312D},
        {0x3131, 0x318E}, {0x31A0, 0x31B7}, {0x3400, 0x4DBF}, {0x4E00, 0x9FFF},
        {0xA000, 0xA48C}, {0xA4D0, 0xA4FD}, {0xA500, 0xA60C}, {0xA610, 0xA61F},
        {0xA62A, 0xA62B}, {0xA640, 0xA66E}, {0xA717, 0xA71F}, {0xA722, 0xA788},
        {0xA78B, 0xA7CA}, {0xAC00, 0xD7A3}, {0xF900, 0xFA6D}, {0xFB00, 0xFB06},
        {0xFB13, 0xFB17}, {0xFB1F, 0xFB28}, {0xFB2A, 0xFB36}, {0xFF21, 0xFF3A},
        {0xFF41, 0xFF5A}, {0xFF66, 0xFFBE}, {0xFFC2, 0xFFC7}, {0xFFCA, 0xFFCF},
        {0xFFD2, 0xFFD7}, {0xFFDA, 0xFFDC},
    };
    return in_ranges(cp, kLetters, sizeof(kLetters) / sizeof(Range));
}

inline bool is_number(uint32_t cp) {
    static constexpr Range kNumbers[] = {
        {0x30, 0x39},     {0xB2, 0xB3},     {0xB9, 0xB9},     {0xBC, 0xBE},
        {0x660, 0x669},   {0x6F0, 0x6F9},   {0x966, 0x96F},   {0x9E6, 0x9EF},
        {0xE50, 0xE59},   {0x2070, 0x2070}, {0x2074, 0x2079}, {0x2080, 0x2089},
        {0x2150, 0x2189}, {0x2460, 0x249B}, {0x24EA, 0x24FF}, {0x2776, 0x2793},
        {0x3007, 0x3007}, {0x3021, 0x3029}, {0xFF10, 0xFF19},
    };
    return in_ranges(cp, kNumbers, sizeof(kNumbers) / sizeof(Range));
}

inline bool is_whitespace(uint32_t cp) {
    switch (cp) {
        case 0x09:
        case 0x0A:
        case 0x0B:
        case 0x0C:
        case 0x0D:
        case 0x20:
        case 0x85:
        case 0xA0:
        case 0x1680:
        case 0x2028:
        case 0x2029:
        case 0x202F:
        case 0x205F:
        case 0x3000:
            return true;
        default:
            return (cp >= 0x2000 && cp <= 0x200A);
    }
}

// --- GPT-2 byte <-> symbol bijection ---
// Printable bytes map to themselves; the rest get codepoints 256, 257, ...
// in ascending byte order.

struct ByteTables {
    std::array<uint32_t, 256> byte_to_cp;
    std::unordered_map<uint32_t, uint8_t> cp_to_byte;
    std::array<std::string, 256> byte_symbol; // UTF-8 of byte_to_cp[b]
};

inline const ByteTables& byte_tables() {
    static const ByteTables tables = [] {
        ByteTables t;
        auto printable = [](int b) {
            return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
        };
        uint32_t next = 256;
        for (int b = 0; b < 256; ++b) {
            uint32_t cp = printable(b) ? static_cast<uint32_t>(b) : next++;
            t.byte_to_cp[static_cast<size_t>(b)] = cp;
            t.cp_to_byte[cp] = static_cast<uint8_t>(b);
            std::string sym;
            append_utf8(sym, cp);
            t.byte_symbol[static_cast<size_t>(b)] = sym;
        }
        return t;
    }();
    return tables;
}

// --- GPT-2 pre-tokenizer ---
// Splits text into the same chunks as the reference pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
// Returned pieces are byte ranges over the input; concatenation of all
// pieces reproduces the input exactly.

struct Piece {
    size_t begin, end;
};

inline std::vector<Piece> pre_tokenize(std::string_view text) {
    std::vector<Piece> pieces;
    // decode once into codepoints with byte offsets
    std::vector<uint32_t> cps;
    std::vector<size_t> offs;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t len = 0;
        uint32_t cp = decode_utf8(text, pos, len);
        cps.push_back(cp);
        offs.push_back(pos);
        pos += len;
    }
    offs.push_back(text.size());
    const size_t n = cps.size();

    auto is_other = [](uint32_t cp) {
        return !is_whitespace(cp) && !is_letter(cp) && !is_number(cp);
    };

    size_t i = 0;
    while (i < n) {
        uint32_t c = cps[i];
        // contractions: 's 't 're 've 'm 'll 'd
        if (c == '\'' && i + 1 < n) {
            uint32_t c1 = cps[i + 1];
            if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') {
                pieces.push_back({offs[i], offs[i + 2]});
                i += 2;
                continue;
            }
            if (i + 2 < n) {
                uint32_t c2 = cps[i + 2];
                if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') ||
                    (c1 == 'l' && c2 == 'l')) {
                    pieces.push_back({offs[i], offs[i + 3]});
                    i += 3;
                    continue;
                }
            }
        }
        size_t start = i;
        size_t scan = i;
        if (c == ' ' && i + 1 < n && !is_whitespace(cps[i + 1])) scan = i + 1;
        uint32_t head = cps[scan];
        if (is_letter(head)) {
            size_t j = scan;
            while (j < n && is_letter(cps[j])) ++j;
            pieces.push_back({offs[start], offs[j]});
            i = j;
            continue;
        }
        if (is_number(head)) {
            size_t j = scan;
            while (j < n && is_number(cps[j])) ++j;
            pieces.push_back({offs[start], offs[j]});
            i = j;
            continue;
        }
        if (!is_whitespace(head)) {
            size_t j = scan;
            while (j < n && is_other(cps[j])) ++j;
            pieces.push_back({offs[start], offs[j]});
            i = j;
            continue;
        }
        // whitespace run; a run followed by non-whitespace yields its last
        // char to the next token
        size_t j = i;
        while (j < n && is_whitespace(cps[j])) ++j;
        if (j < n && j - i > 1) {
            pieces.push_back({offs[i], offs[j - 1]});
            i = j - 1;
        } else {
            pieces.push_back({offs[i], offs[j]});
            i = j;
        }
    }
    return pieces;
}

} // namespace detail

// GPT-2 style vocabulary: vocab.json (token -> id) plus ranked merges.
class BpeVocab {
public:
    static BpeVocab from_files(const std::string& vocab_path, const std::string& merges_path) {
        BpeVocab v;
        v.load_vocab_json(vocab_path);
        v.load_merges(merges_path);
        v.validate();
        return v;
    }

    // Degenerate byte-fallback vocab: the 256 byte symbols, no merges.
    static BpeVocab byte_fallback() {
        BpeVocab v;
        const auto& bt = detail::byte_tables();
        for (int b = 0; b < 256; ++b) {
            v.token_to_id_[bt.byte_symbol[static_cast<size_t>(b)]] = static_cast<TokenId>(b);
        }
        v.finish_tables();
        v.validate();
        return v;
    }

    size_t vocab_size() const { return token_to_id_.size(); }
    size_t merge_count() const { return merge_rank_.size(); }
    std::optional<TokenId> bos_id() const { return bos_id_; }
    void set_bos_id(TokenId id) { bos_id_ = id; }
    TokenId pad_id() const { return bos_id_ ? *bos_id_ : 0; }

    std::optional<TokenId> lookup(const std::string& token) const {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> ids;
        if (text.empty()) return ids;
        std::unordered_map<std::string, std::vector<TokenId>> memo;
        for (const auto& piece : detail::pre_tokenize(text)) {
            std::string chunk(text.substr(piece.begin, piece.end - piece.begin));
            auto it = memo.find(chunk);
            if (it == memo.end()) it = memo.emplace(chunk, encode_chunk(chunk)).first;
            ids.insert(ids.end(), it->second.begin(), it->second.end());
        }
        return ids;
    }

    std::string decode(const std::vector<TokenId>& ids) const {
        const auto& bt = detail::byte_tables();
        std::string symbols;
        for (TokenId id : ids) {
            if (id >= id_to_token_.size())
                throw ValidationError("decode: token id " + std::to_string(id) +
                                      " out of range (vocab size " +
                                      std::to_string(id_to_token_.size()) + ")");
            symbols += id_to_token_[id];
        }
        std::string out;
        out.reserve(symbols.size());
        size_t pos = 0;
        while (pos < symbols.size()) {
            size_t len = 0;
            uint32_t cp = detail::decode_utf8(symbols, pos, len);
            auto it = bt.cp_to_byte.find(cp);
            if (it == bt.cp_to_byte.end())
                throw ValidationError("decode: token text contains a non byte-level symbol");
            out.push_back(static_cast<char>(it->second));
            pos += len;
        }
        return out;
    }

private:
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, uint32_t> merge_rank_; // "left right" -> rank
    std::optional<TokenId> bos_id_;

    void load_vocab_json(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open vocab file: " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        std::string raw = buf.str();
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error& e) {
            size_t line = 1;
            for (size_t i = 0; i < std::min(e.byte, raw.size()); ++i)
                if (raw[i] == '\n') ++line;
            throw ParseError(path + ":" + std::to_string(line) + ": " + e.what());
        }
        if (!j.is_object()) throw ParseError(path + ": vocab must be a JSON object");
        for (auto& [token, id] : j.items()) {
            if (!id.is_number_unsigned())
                throw ParseError(path + ": id for token '" + token + "' is not an unsigned int");
            auto [_, inserted] = token_to_id_.emplace(token, id.get<TokenId>());
            if (!inserted) throw ValidationError(path + ": duplicate token '" + token + "'");
        }
        finish_tables();
    }

    void finish_tables() {
        id_to_token_.assign(token_to_id_.size(), std::string());
        std::vector<bool> seen(token_to_id_.size(), false);
        for (const auto& [token, id] : token_to_id_) {
            if (id >= token_to_id_.size())
                throw ValidationError("vocab ids not dense: id " + std::to_string(id) +
                                      " >= vocab size " + std::to_string(token_to_id_.size()));
            if (seen[id]) throw ValidationError("duplicate id " + std::to_string(id));
            seen[id] = true;
            id_to_token_[id] = token;
        }
        auto eot = token_to_id_.find("<|endoftext|>");
        if (eot != token_to_id_.end()) bos_id_ = eot->second;
    }

    void load_merges(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open merges file: " + path);
        std::string line;
        size_t line_no = 0;
        uint32_t rank = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line_no == 1 && line.rfind("#version", 0) == 0) continue;
            if (line.empty()) continue;
            size_t space = line.find(' ');
            if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
                line.find(' ', space + 1) != std::string::npos)
                throw ParseError(path + ":" + std::to_string(line_no) +
                                 ": expected exactly two space-separated tokens");
            std::string left = line.substr(0, space);
            std::string right = line.substr(space + 1);
            for (const std::string* part : {&left, &right}) {
                if (!token_to_id_.count(*part))
                    throw ValidationError(path + ":" + std::to_string(line_no) +
                                          ": merge references unknown token '" + *part + "'");
            }
            if (!token_to_id_.count(left + right))
                throw ValidationError(path + ":" + std::to_string(line_no) +
                                      ": merge result '" + left + right + "' not in vocab");
            merge_rank_.emplace(left + " " + right, rank++);
        }
    }

    void validate() const {
        const auto& bt = detail::byte_tables();
        for (int b = 0; b < 256; ++b) {
            if (!token_to_id_.count(bt.byte_symbol[static_cast<size_t>(b)]))
                throw ValidationError("vocab lacks byte token for byte " + std::to_string(b) +
                                      "; byte-level coverage requires all 256");
        }
    }

    // Byte-encode one pre-token and apply merges greedily, lowest rank first.
    std::vector<TokenId> encode_chunk(const std::string& chunk) const {
        const auto& bt = detail::byte_tables();
        std::vector<std::string> parts;
        parts.reserve(chunk.size());
        for (unsigned char b : chunk) parts.push_back(bt.byte_symbol[b]);
        while (parts.size() > 1) {
            uint32_t best_rank = UINT32_MAX;
            size_t best_pos = 0;
            for (size_t i = 0; i + 1 < parts.size(); ++i) {
                auto it = merge_rank_.find(parts[i] + " " + parts[i + 1]);
                if (it != merge_rank_.end() && it->second < best_rank) {
                    best_rank = it->second;
                    best_pos = i;
                }
            }
            if (best_rank == UINT32_MAX) break;
            const std::string left = parts[best_pos];
            const std::string right = parts[best_pos + 1];
            std::vector<std::string> next;
            next.reserve(parts.size());
            size_t i = 0;
            while (i < parts.size()) {
                if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
                    next.push_back(left + right);
                    i += 2;
                } else {
                    next.push_back(parts[i]);
                    ++i;
                }
            }
            parts = std::move(next);
        }
        std::vector<TokenId> ids;
        ids.reserve(parts.size());
        for (const auto& p : parts) {
            auto it = token_to_id_.find(p);
            if (it == token_to_id_.end())
                throw ValidationError("encode: merged token missing from vocab: '" + p + "'");
            ids.push_back(it->second);
        }
        return ids;
    }
};

} // namespace latentscope::bpe
