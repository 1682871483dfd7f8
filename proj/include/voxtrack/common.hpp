#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxtrack {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct NonPositiveDepth : Error {
    explicit NonPositiveDepth(const std::string& w = "depth must be positive") : Error(w) {}
};
struct DegenerateConfiguration : Error {
    explicit DegenerateConfiguration(const std::string& w) : Error(w) {}
};
struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& w) : Error(w) {}
};
struct SpecMismatch : Error {
    explicit SpecMismatch(const std::string& w) : Error(w) {}
};
struct OutOfBounds : Error {
    explicit OutOfBounds(const std::string& w) : Error(w) {}
};
struct EmptyNegatives : Error {
    explicit EmptyNegatives(const std::string& w = "contrastive loss needs at least one negative") : Error(w) {}
};
struct EmptyDictionary : Error {
    explicit EmptyDictionary(const std::string& w = "cannot sample from an empty dictionary") : Error(w) {}
};
struct NoCorrespondences : Error {
    explicit NoCorrespondences(const std::string& w = "no valid correspondences found") : Error(w) {}
};
struct EmptyTemplate : Error {
    explicit EmptyTemplate(const std::string& w = "object template is empty") : Error(w) {}
};
struct CorruptEpisode : Error {
    explicit CorruptEpisode(const std::string& w) : Error(w) {}
};
struct CorruptCheckpoint : Error {
    explicit CorruptCheckpoint(const std::string& w) : Error(w) {}
};
struct LengthMismatch : Error {
    explicit LengthMismatch(const std::string& w) : Error(w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(w) {}
};
struct DataMissing : Error {
    explicit DataMissing(const std::string& w) : Error(w) {}
};

// ---------------------------------------------------------------------------
// Little-endian binary IO. All on-disk float buffers are little-endian 32-bit.
// ---------------------------------------------------------------------------

inline void store_f32_le(float v, unsigned char out[4]) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out[0] = static_cast<unsigned char>(bits & 0xff);
    out[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    out[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    out[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
}

inline float load_f32_le(const unsigned char in[4]) {
    std::uint32_t bits = static_cast<std::uint32_t>(in[0]) |
                         (static_cast<std::uint32_t>(in[1]) << 8) |
                         (static_cast<std::uint32_t>(in[2]) << 16) |
                         (static_cast<std::uint32_t>(in[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_f32_buffer(std::ostream& os, const float* data, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    for (std::size_t i = 0; i < n; ++i) store_f32_le(data[i], &buf[i * 4]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void read_f32_buffer(std::istream& is, float* data, std::size_t n) {
    std::vector<unsigned char> buf(n * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size())
        throw IoError("short read on float buffer");
    for (std::size_t i = 0; i < n; ++i) data[i] = load_f32_le(&buf[i * 4]);
}

// ---------------------------------------------------------------------------
// FNV-1a, used to stamp outputs with a config hash.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace voxtrack
