#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "fusionbench/errors.hpp"
#include "fusionbench/matrix.hpp"

namespace fusionbench {

// FNV-1a, 64-bit. Used for config hashes and for the frozen/fluid/hot
// parameter-state checks; not a cryptographic hash.
class Fnv1a {
public:
    void update(const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= static_cast<std::uint64_t>(p[i]);
            state_ *= 0x100000001b3ull;
        }
    }

    void update(const std::string& s) { update(s.data(), s.size()); }

    void update(std::uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        update(buf, 8);
    }

    void update(const Matrix& m) {
        update(static_cast<std::uint64_t>(m.rows()));
        update(static_cast<std::uint64_t>(m.cols()));
        if (!m.raw().empty()) update(m.raw().data(), m.raw().size() * sizeof(double));
    }

    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ull;
};

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::uint64_t hash_bytes(const std::string& bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.digest();
}

inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file for hashing: " + path);
    Fnv1a h;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h.update(buf, static_cast<std::size_t>(in.gcount()));
        if (!in) break;
    }
    return h.digest();
}

}  // namespace fusionbench
