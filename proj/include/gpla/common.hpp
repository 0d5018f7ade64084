#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gpla {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch broadly; the concrete type names show up in CLI output.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-facing configuration (file contents, CLI arguments, enum names).
struct ConfigError : Error {
    using Error::Error;
};

// Shape or size mismatch between tensors / arrays.
struct DimensionError : Error {
    using Error::Error;
};

// A function precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Filesystem / serialization failure.
struct IoError : Error {
    using Error::Error;
};

// Non-finite values encountered during optimization.
struct NumericError : Error {
    using Error::Error;
};

// FNV-1a, used for config hashes, artifact checksums and RNG stream derivation.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// Worker count for embarrassingly parallel sections. GPLA_THREADS overrides;
// results never depend on it (work is split per item, each with its own RNG).
inline int runtime_threads() {
    if (const char* env = std::getenv("GPLA_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

}  // namespace gpla
