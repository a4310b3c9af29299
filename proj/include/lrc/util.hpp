#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrc {

// Config, shape and argument problems. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN or Inf showed up in tensor math.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File I/O and format problems. The CLI maps these to exit code 1.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A frozen expert's bytes changed during incremental training. This should
// be unreachable; it firing means parameter isolation is broken.
class FreezeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a over a byte range.
inline uint64_t fnv1a64(const void* bytes, size_t len, uint64_t seed = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

// Locale-independent decimal formatting for all text output.
inline std::string fmt_double(double v, int precision = 9) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, precision);
    return std::string(buf, res.ptr);
}

inline std::string fmt_int(long long v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Thread cap for internal parallelism. Defaults to 1 so every run is
// deterministic unless the operator opts in.
inline unsigned env_thread_cap() {
    const char* s = std::getenv("LATENT_ROUTER_THREADS");
    if (s == nullptr || *s == '\0') {
        return 1;
    }
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end == s || v < 1) {
        return 1;
    }
    return static_cast<unsigned>(v);
}

}  // namespace lrc
