#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "latentscope/error.hpp"

namespace latentscope {

// Locale-independent float formatting. General form uses the shortest
// representation that round-trips; fixed form quantizes to `precision`.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int precision) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
    return std::string(buf, res.ptr);
}

// IEEE 754 binary16 <-> binary32.
inline float half_to_float(uint16_t h) {
    uint32_t sign = (h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1F;
    uint32_t mant = h & 0x3FF;
    uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            int shift = 0;
            while (!(mant & 0x400)) {
                mant <<= 1;
                ++shift;
            }
            mant &= 0x3FF;
            bits = sign | ((127 - 15 - shift) << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        bits = sign | 0x7F800000u | (mant << 13);
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline uint16_t float_to_half(float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    uint32_t sign = (bits >> 16) & 0x8000u;
    int32_t exp = static_cast<int32_t>((bits >> 23) & 0xFF) - 127 + 15;
    uint32_t mant = bits & 0x7FFFFFu;
    if (((bits >> 23) & 0xFF) == 0xFF) {
        return static_cast<uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0u));
    }
    if (exp >= 0x1F) {
        return static_cast<uint16_t>(sign | 0x7C00u); // overflow -> inf
    }
    if (exp <= 0) {
        if (exp < -10) return static_cast<uint16_t>(sign);
        // subnormal half
        mant |= 0x800000u;
        uint32_t shift = static_cast<uint32_t>(14 - exp);
        uint32_t half_mant = mant >> shift;
        uint32_t rem = mant & ((1u << shift) - 1);
        uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1))) ++half_mant;
        return static_cast<uint16_t>(sign | half_mant);
    }
    uint32_t half_mant = mant >> 13;
    uint32_t rem = mant & 0x1FFFu;
    uint16_t h = static_cast<uint16_t>(sign | (static_cast<uint32_t>(exp) << 10) | half_mant);
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1))) ++h;
    return h;
}

// CRC-64/XZ (reflected ECMA-182 polynomial), table driven.
namespace detail {
inline const uint64_t* crc64_table() {
    static const auto table = [] {
        static uint64_t t[256];
        const uint64_t poly = 0xC96C5795D7870F42ull;
        for (uint32_t i = 0; i < 256; ++i) {
            uint64_t c = i;
            for (int bit = 0; bit < 8; ++bit) c = (c & 1) ? (c >> 1) ^ poly : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}
} // namespace detail

struct Crc64 {
    uint64_t state = ~0ull;
    void update(const void* data, size_t len) {
        const auto* p = static_cast<const uint8_t*>(data);
        const uint64_t* t = detail::crc64_table();
        for (size_t i = 0; i < len; ++i) state = t[(state ^ p[i]) & 0xFF] ^ (state >> 8);
    }
    uint64_t value() const { return ~state; }
};

inline uint64_t crc64(const void* data, size_t len) {
    Crc64 c;
    c.update(data, len);
    return c.value();
}

// Deterministic helpers over a seeded engine. The distributions are written
// out explicitly because std::uniform_* are not bit-portable across stdlibs.
using Rng = std::mt19937_64;

inline uint64_t rand_below(Rng& rng, uint64_t n) {
    // unbiased rejection sampling
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

inline double rand_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rand_normal(Rng& rng) {
    // Box-Muller, one value per call
    double u1 = rand_unit(rng);
    double u2 = rand_unit(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// k distinct values from [0, n), sorted. Floyd's algorithm keeps this cheap
// when k << n.
inline std::vector<uint64_t> sample_without_replacement(Rng& rng, uint64_t n, uint64_t k) {
    if (k > n) throw ValidationError("sample_without_replacement: k > n");
    std::vector<uint64_t> out;
    out.reserve(k);
    if (k * 2 >= n) {
        std::vector<uint64_t> all(n);
        for (uint64_t i = 0; i < n; ++i) all[i] = i;
        for (uint64_t i = 0; i < k; ++i) std::swap(all[i], all[i + rand_below(rng, n - i)]);
        out.assign(all.begin(), all.begin() + static_cast<ptrdiff_t>(k));
    } else {
        std::vector<bool> seen(n, false);
        for (uint64_t j = n - k; j < n; ++j) {
            uint64_t t = rand_below(rng, j + 1);
            if (seen[t]) t = j;
            seen[t] = true;
            out.push_back(t);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Read-only memory-mapped file. Falls back to nothing: callers that cannot
// mmap should read the file conventionally.
class MappedFile {
public:
    MappedFile() = default;
    explicit MappedFile(const std::string& path) { open(path); }
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;
    MappedFile(MappedFile&& o) noexcept : data_(o.data_), size_(o.size_) {
        o.data_ = nullptr;
        o.size_ = 0;
    }
    MappedFile& operator=(MappedFile&& o) noexcept {
        close();
        data_ = o.data_;
        size_ = o.size_;
        o.data_ = nullptr;
        o.size_ = 0;
        return *this;
    }
    ~MappedFile() { close(); }

    void open(const std::string& path) {
        close();
        int fd = ::open(path.c_str(), O_RDONLY);
        if (fd < 0) throw IoError("cannot open file: " + path);
        struct stat st {};
        if (fstat(fd, &st) != 0) {
            ::close(fd);
            throw IoError("cannot stat file: " + path);
        }
        size_ = static_cast<size_t>(st.st_size);
        if (size_ == 0) {
            ::close(fd);
            data_ = nullptr;
            return;
        }
        void* p = mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
        ::close(fd);
        if (p == MAP_FAILED) throw IoError("mmap failed for: " + path);
        data_ = p;
    }

    void close() {
        if (data_ && data_ != MAP_FAILED) munmap(data_, size_);
        data_ = nullptr;
        size_ = 0;
    }

    const uint8_t* data() const { return static_cast<const uint8_t*>(data_); }
    size_t size() const { return size_; }
    bool is_open() const { return data_ != nullptr; }

private:
    void* data_ = nullptr;
    size_t size_ = 0;
};

// Runs fn(i) for i in [0, n). Each index must write only its own outputs, so
// results are identical for any thread count.
inline void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t nthreads = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (size_t t = 0; t < nthreads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace latentscope
