#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "latentscope/config.hpp"
#include "latentscope/error.hpp"
#include "latentscope/linalg.hpp"
#include "latentscope/util.hpp"

namespace latentscope::store {

constexpr uint32_t kFormatVersion = 1;
constexpr char kMagic[5] = {'L', 'A', 'T', 'D', 'S'};

struct DatasetHeader {
    uint32_t format_version = kFormatVersion;
    ModelConfig model;
    RunConfig run;
    uint64_t seed = 0;
    std::vector<CaptureTag> captures;
    bool compressed = false;
    std::string reducer_path;             // sibling REDM file when compressed
    std::vector<size_t> skipped_samples;  // samples dropped for numeric errors
    std::vector<size_t> pad_lengths;      // per-sample suffix padding; empty = none
    std::vector<uint32_t> singular_ids;   // singular mode: probe token per sample
    Precision dtype = Precision::f32;
    std::array<size_t, 4> shape = {0, 0, 0, 0}; // [samples, seq, captures, dim]

    size_t n_samples() const { return shape[0]; }
    size_t seq_len() const { return shape[1]; }
    size_t n_captures() const { return shape[2]; }
    size_t dim() const { return shape[3]; }
    size_t element_count() const { return shape[0] * shape[1] * shape[2] * shape[3]; }
    size_t payload_bytes() const {
        return element_count() * (dtype == Precision::f32 ? 4 : 2);
    }
    // first probe position that is real data (BOS occupies position 0)
    size_t probe_position() const {
        return run.mode == RunMode::singular && run.prepend_bos ? 1 : 0;
    }
};

inline void to_json(nlohmann::json& j, const DatasetHeader& h) {
    j = nlohmann::json{{"format_version", h.format_version},
                       {"model_config", h.model},
                       {"run_config", h.run},
                       {"seed", h.seed},
                       {"captures", h.captures},
                       {"compressed", h.compressed},
                       {"skipped_samples", h.skipped_samples},
                       {"pad_lengths", h.pad_lengths},
                       {"singular_ids", h.singular_ids},
                       {"dtype", to_string(h.dtype)},
                       {"shape", h.shape}};
    if (!h.reducer_path.empty()) j["reducer_path"] = h.reducer_path;
}

inline void from_json(const nlohmann::json& j, DatasetHeader& h) {
    j.at("format_version").get_to(h.format_version);
    j.at("model_config").get_to(h.model);
    j.at("run_config").get_to(h.run);
    j.at("seed").get_to(h.seed);
    h.captures = j.at("captures").get<std::vector<CaptureTag>>();
    h.compressed = j.value("compressed", false);
    h.reducer_path = j.value("reducer_path", std::string());
    h.skipped_samples = j.value("skipped_samples", std::vector<size_t>{});
    h.pad_lengths = j.value("pad_lengths", std::vector<size_t>{});
    h.singular_ids = j.value("singular_ids", std::vector<uint32_t>{});
    h.dtype = precision_from_string(j.value("dtype", std::string("f32")));
    j.at("shape").get_to(h.shape);
}

// A stored latent dataset. Payload is either owned (fresh captures) or a
// read-only mapping of the file (loads), accessed lazily vector by vector.
class LatentDataset {
public:
    DatasetHeader header;

    static LatentDataset from_memory(DatasetHeader h, std::vector<uint8_t> payload) {
        LatentDataset ds;
        ds.header = std::move(h);
        if (payload.size() != ds.header.payload_bytes())
            throw ValidationError("dataset payload size does not match header shape");
        ds.owned_ = std::move(payload);
        return ds;
    }

    const uint8_t* payload() const {
        return owned_.empty() ? map_.data() + payload_offset_ : owned_.data();
    }
    size_t payload_bytes() const { return header.payload_bytes(); }
    const std::string& header_raw() const { return header_raw_; }

    double value(size_t s, size_t q, size_t c, size_t i) const {
        size_t idx = ((s * header.seq_len() + q) * header.n_captures() + c) * header.dim() + i;
        if (header.dtype == Precision::f32) {
            float v;
            std::memcpy(&v, payload() + idx * 4, 4);
            return v;
        }
        uint16_t h;
        std::memcpy(&h, payload() + idx * 2, 2);
        return half_to_float(h);
    }

    void copy_vector(size_t s, size_t q, size_t c, double* out) const {
        size_t base = ((s * header.seq_len() + q) * header.n_captures() + c) * header.dim();
        if (header.dtype == Precision::f32) {
            const uint8_t* p = payload() + base * 4;
            for (size_t i = 0; i < header.dim(); ++i) {
                float v;
                std::memcpy(&v, p + i * 4, 4);
                out[i] = v;
            }
        } else {
            const uint8_t* p = payload() + base * 2;
            for (size_t i = 0; i < header.dim(); ++i) {
                uint16_t h;
                std::memcpy(&h, p + i * 2, 2);
                out[i] = half_to_float(h);
            }
        }
    }

    size_t pad_start(size_t sample) const {
        if (header.pad_lengths.empty()) return header.seq_len();
        return header.seq_len() - header.pad_lengths[sample];
    }

    friend LatentDataset load(const std::string& path, bool use_mmap);

    void set_header_raw(std::string raw) { header_raw_ = std::move(raw); }

private:
    std::string header_raw_;
    std::vector<uint8_t> owned_;
    MappedFile map_;
    size_t payload_offset_ = 0;
};

// Writes the LATDS layout: magic, u32 version, u64 header length, header
// JSON, payload, trailing CRC-64 of the payload. The payload callback may
// stream in chunks; it must update the running checksum with exactly the
// bytes written.
inline void write_latds(const std::string& path, const std::string& header_json,
                        size_t payload_bytes,
                        const std::function<void(std::ofstream&, Crc64&)>& payload_writer) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write dataset: " + tmp);
        out.write(kMagic, 5);
        uint32_t version = kFormatVersion;
        out.write(reinterpret_cast<const char*>(&version), 4);
        uint64_t hlen = header_json.size();
        out.write(reinterpret_cast<const char*>(&hlen), 8);
        out.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
        Crc64 crc;
        payload_writer(out, crc);
        uint64_t checksum = crc.value();
        auto expected_pos = static_cast<std::streamoff>(17 + header_json.size() + payload_bytes);
        if (out.tellp() != expected_pos) {
            out.close();
            std::remove(tmp.c_str());
            throw IoError("dataset payload writer produced the wrong byte count for " + path);
        }
        out.write(reinterpret_cast<const char*>(&checksum), 8);
        if (!out) {
            out.close();
            std::remove(tmp.c_str());
            throw IoError("write failed: " + path);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        throw IoError("cannot move dataset into place: " + path + ": " + ec.message());
    }
}

inline void save(const LatentDataset& ds, const std::string& path) {
    std::string header_json = ds.header_raw().empty()
                                  ? nlohmann::json(ds.header).dump()
                                  : ds.header_raw();
    write_latds(path, header_json, ds.payload_bytes(), [&](std::ofstream& out, Crc64& crc) {
        out.write(reinterpret_cast<const char*>(ds.payload()),
                  static_cast<std::streamsize>(ds.payload_bytes()));
        crc.update(ds.payload(), ds.payload_bytes());
    });
}

inline LatentDataset load(const std::string& path, bool use_mmap = true) {
    LatentDataset ds;
    MappedFile map(path);
    if (map.size() < 5 + 4 + 8 + 8) throw FormatError(path + ": too small to be a dataset");
    if (std::memcmp(map.data(), kMagic, 5) != 0)
        throw FormatError(path + ": bad magic (not a LATDS file)");
    uint32_t version;
    std::memcpy(&version, map.data() + 5, 4);
    if (version != kFormatVersion)
        throw FormatError(path + ": unsupported format version " + std::to_string(version));
    uint64_t hlen;
    std::memcpy(&hlen, map.data() + 9, 8);
    if (17 + hlen + 8 > map.size())
        throw FormatError(path + ": header length exceeds file size");
    std::string header_json(reinterpret_cast<const char*>(map.data() + 17), hlen);
    try {
        ds.header = nlohmann::json::parse(header_json).get<DatasetHeader>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad dataset header: " + e.what());
    }
    ds.header_raw_ = std::move(header_json);
    size_t payload_off = 17 + hlen;
    size_t expect = ds.header.payload_bytes();
    if (payload_off + expect + 8 != map.size())
        throw FormatError(path + ": payload size does not match header shape");
    uint64_t stored_crc;
    std::memcpy(&stored_crc, map.data() + payload_off + expect, 8);
    uint64_t actual = crc64(map.data() + payload_off, expect);
    if (stored_crc != actual)
        throw CorruptionError(path + ": payload checksum mismatch");
    if (use_mmap) {
        ds.map_ = std::move(map);
        ds.payload_offset_ = payload_off;
    } else {
        ds.owned_.assign(map.data() + payload_off, map.data() + payload_off + expect);
    }
    return ds;
}

// --- selection and augmentation ---

struct Selection {
    std::optional<std::pair<int, int>> block_range; // inclusive; drops emb/final sentinels
    std::vector<int> points;                        // empty = all
    std::vector<Component> components;              // empty = all
    std::optional<AddPhase> add_phase;
    std::optional<std::pair<size_t, size_t>> seq_range; // inclusive original positions
    bool exclude_position_0 = false;
    std::vector<size_t> sample_indices;  // explicit subset
    std::optional<size_t> sample_limit;  // seeded subset size
    uint64_t seed = 0;

    std::string describe() const {
        nlohmann::json j = nlohmann::json::object();
        if (block_range) j["blocks"] = {block_range->first, block_range->second};
        if (!points.empty()) j["points"] = points;
        if (!components.empty()) {
            std::vector<std::string> cs;
            for (auto c : components) cs.push_back(to_string(c));
            j["components"] = cs;
        }
        if (add_phase) j["add_phase"] = to_string(*add_phase);
        if (seq_range) j["seq_range"] = {seq_range->first, seq_range->second};
        if (exclude_position_0) j["exclude_position_0"] = true;
        if (sample_limit) j["sample_limit"] = *sample_limit;
        if (!sample_indices.empty()) j["sample_indices"] = sample_indices;
        return j.dump();
    }

    bool capture_passes(const CaptureTag& t) const {
        if (block_range) {
            if (!t.in_block()) return false;
            if (t.block < block_range->first || t.block > block_range->second) return false;
        }
        if (!points.empty() &&
            std::find(points.begin(), points.end(), t.point) == points.end())
            return false;
        if (!components.empty() &&
            std::find(components.begin(), components.end(), t.component) == components.end())
            return false;
        if (add_phase && t.add_phase != *add_phase) return false;
        return true;
    }

    // Middle-block presets: 2-8 of 12 blocks, 6-27 of 32. Other depths need
    // an explicit range.
    static std::pair<int, int> intermediate_blocks(size_t n_blocks) {
        if (n_blocks == 12) return {2, 8};
        if (n_blocks == 32) return {6, 27};
        throw ValidationError("no intermediate-block preset for depth " +
                              std::to_string(n_blocks) + "; pass an explicit block range");
    }
};

// A rectangular [samples, positions, captures, dim] window over latent data,
// lazy over the source dataset until an augmentation materializes it.
// Collapsed axes (after mean_over) have extent 1 and a marker label.
class LatentView {
public:
    static constexpr size_t kCollapsed = SIZE_MAX;

    static LatentView full(const LatentDataset& ds) {
        LatentView v;
        v.ds_ = &ds;
        v.dim_ = ds.header.dim();
        v.samples_.resize(ds.header.n_samples());
        for (size_t i = 0; i < v.samples_.size(); ++i) v.samples_[i] = i;
        v.positions_.resize(ds.header.seq_len());
        for (size_t i = 0; i < v.positions_.size(); ++i) v.positions_[i] = i;
        v.capture_src_.resize(ds.header.n_captures());
        for (size_t i = 0; i < v.capture_src_.size(); ++i) v.capture_src_[i] = i;
        v.tags_ = ds.header.captures;
        return v;
    }

    size_t n_samples() const { return samples_.size(); }
    size_t n_positions() const { return positions_.size(); }
    size_t n_captures() const { return tags_.size(); }
    size_t dim() const { return dim_; }
    size_t vector_count() const { return n_samples() * n_positions() * n_captures(); }
    bool sample_collapsed() const { return collapsed_[0]; }
    bool sequence_collapsed() const { return collapsed_[1]; }
    bool capture_collapsed() const { return collapsed_[2]; }
    size_t degenerate_count() const { return degenerate_count_; }

    const std::vector<CaptureTag>& tags() const { return tags_; }
    const std::vector<size_t>& sample_labels() const { return samples_; }
    const std::vector<size_t>& position_labels() const { return positions_; }

    bool is_padded(size_t si, size_t qi) const {
        if (collapsed_[0] || collapsed_[1]) return false;
        return positions_[qi] >= pad_start_of(si);
    }

    void vector_at(size_t si, size_t qi, size_t ci, double* out) const {
        if (ds_) {
            ds_->copy_vector(samples_[si], positions_[qi], capture_src_[ci], out);
        } else {
            const double* p =
                owned_->data() + ((si * n_positions() + qi) * n_captures() + ci) * dim_;
            std::copy(p, p + dim_, out);
        }
    }

    LatentView select(const Selection& sel) const {
        LatentView v = *this;
        // captures
        std::vector<size_t> keep_c;
        for (size_t c = 0; c < tags_.size(); ++c)
            if (sel.capture_passes(tags_[c])) keep_c.push_back(c);
        if (keep_c.empty())
            throw ValidationError("selection matched no captures: " + sel.describe());
        // positions
        std::vector<size_t> keep_q;
        for (size_t q = 0; q < positions_.size(); ++q) {
            size_t orig = positions_[q];
            if (sel.exclude_position_0 && orig == 0 && !collapsed_[1]) continue;
            if (sel.seq_range && (orig < sel.seq_range->first || orig > sel.seq_range->second))
                continue;
            keep_q.push_back(q);
        }
        if (keep_q.empty())
            throw ValidationError("selection matched no sequence positions: " + sel.describe());
        // samples
        std::vector<size_t> keep_s;
        if (!sel.sample_indices.empty()) {
            for (size_t s : sel.sample_indices) {
                if (s >= samples_.size())
                    throw ValidationError("sample index " + std::to_string(s) + " out of range");
                keep_s.push_back(s);
            }
        } else if (sel.sample_limit && *sel.sample_limit < samples_.size()) {
            Rng rng(sel.seed);
            auto chosen = sample_without_replacement(rng, samples_.size(), *sel.sample_limit);
            keep_s.assign(chosen.begin(), chosen.end());
        } else {
            keep_s.resize(samples_.size());
            for (size_t i = 0; i < keep_s.size(); ++i) keep_s[i] = i;
        }
        if (keep_s.empty())
            throw ValidationError("selection matched no samples: " + sel.describe());

        return subset(keep_s, keep_q, keep_c);
    }

    // Scales every latent vector to unit length. Vectors with norm below
    // 1e-12 stay untouched and are counted as degenerate.
    LatentView unit_normalize() const {
        LatentView v = materialized();
        size_t degenerate = 0;
        std::vector<double>& data = *v.owned_;
        size_t count = v.vector_count();
        for (size_t idx = 0; idx < count; ++idx) {
            double* p = data.data() + idx * dim_;
            double norm = linalg::l2_norm(p, dim_);
            if (norm < 1e-12) {
                ++degenerate;
                continue;
            }
            for (size_t i = 0; i < dim_; ++i) p[i] /= norm;
        }
        v.degenerate_count_ = degenerate_count_ + degenerate;
        return v;
    }

    enum class Axis { sample = 0, sequence = 1, capture = 2 };

    // Arithmetic mean over the chosen axes; collapsed axes keep extent 1 and
    // a marker label. Padded positions are excluded from every mean they
    // would otherwise enter.
    LatentView mean_over(const std::vector<Axis>& axes) const {
        if (axes.empty()) throw ValidationError("mean_over: no axes given");
        bool over[3] = {false, false, false};
        for (Axis a : axes) over[static_cast<int>(a)] = true;

        const size_t out_s = over[0] ? 1 : n_samples();
        const size_t out_q = over[1] ? 1 : n_positions();
        const size_t out_c = over[2] ? 1 : n_captures();

        LatentView v;
        v.dim_ = dim_;
        v.owned_ = std::make_shared<std::vector<double>>(out_s * out_q * out_c * dim_, 0.0);
        std::vector<size_t> counts(out_s * out_q * out_c, 0);

        std::vector<double> buf(dim_);
        for (size_t si = 0; si < n_samples(); ++si) {
            for (size_t qi = 0; qi < n_positions(); ++qi) {
                if (is_padded(si, qi)) continue;
                for (size_t ci = 0; ci < n_captures(); ++ci) {
                    vector_at(si, qi, ci, buf.data());
                    size_t os = over[0] ? 0 : si;
                    size_t oq = over[1] ? 0 : qi;
                    size_t oc = over[2] ? 0 : ci;
                    size_t cell = (os * out_q + oq) * out_c + oc;
                    double* acc = v.owned_->data() + cell * dim_;
                    for (size_t i = 0; i < dim_; ++i) acc[i] += buf[i];
                    ++counts[cell];
                }
            }
        }
        for (size_t cell = 0; cell < counts.size(); ++cell) {
            if (counts[cell] == 0) continue;
            double* acc = v.owned_->data() + cell * dim_;
            for (size_t i = 0; i < dim_; ++i) acc[i] /= static_cast<double>(counts[cell]);
        }

        v.samples_ = over[0] ? std::vector<size_t>{kCollapsed} : samples_;
        v.positions_ = over[1] ? std::vector<size_t>{kCollapsed} : positions_;
        v.tags_ = over[2] ? std::vector<CaptureTag>{CaptureTag{.block = 0, .point = 0}} : tags_;
        v.collapsed_[0] = collapsed_[0] || over[0];
        v.collapsed_[1] = collapsed_[1] || over[1];
        v.collapsed_[2] = collapsed_[2] || over[2];
        if (!over[0] && !over[1]) v.pad_starts_ = pad_starts_;
        v.degenerate_count_ = degenerate_count_;
        return v;
    }

    // Flattens to a [vectors, dim] matrix with per-row labels, dropping
    // padded cells. Row order is (sample, position, capture), matching the
    // storage order.
    struct Flat {
        linalg::Matrix matrix;
        std::vector<CaptureTag> row_tags;
        std::vector<size_t> row_positions;
        std::vector<size_t> row_samples;
    };

    Flat flatten(bool include_padded = false) const {
        Flat f;
        size_t rows = 0;
        for (size_t si = 0; si < n_samples(); ++si)
            for (size_t qi = 0; qi < n_positions(); ++qi)
                if (include_padded || !is_padded(si, qi)) rows += n_captures();
        f.matrix = linalg::Matrix(rows, dim_);
        f.row_tags.reserve(rows);
        f.row_positions.reserve(rows);
        f.row_samples.reserve(rows);
        size_t r = 0;
        for (size_t si = 0; si < n_samples(); ++si) {
            for (size_t qi = 0; qi < n_positions(); ++qi) {
                if (!include_padded && is_padded(si, qi)) continue;
                for (size_t ci = 0; ci < n_captures(); ++ci) {
                    vector_at(si, qi, ci, f.matrix.row(r));
                    f.row_tags.push_back(tags_[ci]);
                    f.row_positions.push_back(positions_[qi]);
                    f.row_samples.push_back(samples_[si]);
                    ++r;
                }
            }
        }
        return f;
    }

    void attach_pad_starts(std::vector<size_t> starts) { pad_starts_ = std::move(starts); }

private:
    const LatentDataset* ds_ = nullptr;
    std::shared_ptr<std::vector<double>> owned_;
    std::vector<size_t> samples_;
    std::vector<size_t> positions_;
    std::vector<CaptureTag> tags_;
    std::vector<size_t> capture_src_;
    std::vector<size_t> pad_starts_; // aligned with samples_
    size_t dim_ = 0;
    bool collapsed_[3] = {false, false, false};
    size_t degenerate_count_ = 0;

    LatentView materialized() const {
        if (owned_ && !ds_) return *this;
        LatentView v = *this;
        v.owned_ = std::make_shared<std::vector<double>>(vector_count() * dim_);
        for (size_t si = 0; si < n_samples(); ++si)
            for (size_t qi = 0; qi < n_positions(); ++qi)
                for (size_t ci = 0; ci < n_captures(); ++ci)
                    vector_at(si, qi, ci,
                              v.owned_->data() +
                                  ((si * n_positions() + qi) * n_captures() + ci) * dim_);
        // labels become view-local after materialization
        v.ds_ = nullptr;
        v.capture_src_.clear();
        std::vector<size_t> starts;
        if (!pad_starts_.empty() || ds_) {
            starts.resize(n_samples());
            for (size_t si = 0; si < n_samples(); ++si)
                starts[si] = pad_start_of(si);
        }
        v.pad_starts_ = std::move(starts);
        return v;
    }

    size_t pad_start_of(size_t si) const {
        if (!pad_starts_.empty()) return pad_starts_[si];
        if (ds_) return ds_->pad_start(samples_[si]);
        return SIZE_MAX;
    }

    LatentView subset(const std::vector<size_t>& keep_s, const std::vector<size_t>& keep_q,
                      const std::vector<size_t>& keep_c) const {
        LatentView v;
        v.dim_ = dim_;
        v.ds_ = ds_;
        for (int i = 0; i < 3; ++i) v.collapsed_[i] = collapsed_[i];
        v.degenerate_count_ = degenerate_count_;
        for (size_t s : keep_s) v.samples_.push_back(samples_[s]);
        for (size_t q : keep_q) v.positions_.push_back(positions_[q]);
        for (size_t c : keep_c) v.tags_.push_back(tags_[c]);
        if (ds_) {
            for (size_t c : keep_c) v.capture_src_.push_back(capture_src_[c]);
            if (!pad_starts_.empty())
                for (size_t s : keep_s) v.pad_starts_.push_back(pad_starts_[s]);
        } else {
            // materialized source: copy the kept window
            v.owned_ = std::make_shared<std::vector<double>>(
                keep_s.size() * keep_q.size() * keep_c.size() * dim_);
            size_t idx = 0;
            for (size_t s : keep_s)
                for (size_t q : keep_q)
                    for (size_t c : keep_c) {
                        vector_at(s, q, c, v.owned_->data() + idx * dim_);
                        ++idx;
                    }
            if (!pad_starts_.empty())
                for (size_t s : keep_s) v.pad_starts_.push_back(pad_starts_[s]);
        }
        return v;
    }
};

inline LatentView select(const LatentDataset& ds, const Selection& sel) {
    return LatentView::full(ds).select(sel);
}

} // namespace latentscope::store
