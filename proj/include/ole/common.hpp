#pragma once

// Shared error types, deterministic RNG seeding helpers, and numeric
// formatting used across the library. Exit-code mapping for the CLI lives
// in cli.hpp; the typed exceptions below are what it maps from.

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

namespace ole {

/// Configuration file / option errors (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset ingestion / file format errors (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// SVD non-convergence and similar numeric failures.
class DecompositionError : public std::runtime_error {
public:
    explicit DecompositionError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

// splitmix64: cheap, well-mixed stream derivation so that (seed, salt)
// pairs give independent deterministic generators on every platform.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Deterministic generator for a (seed, salt) pair. Distinct salts give
/// decorrelated streams from one user-facing seed.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t salt = 0) {
    return std::mt19937_64(detail::splitmix64(seed ^ detail::splitmix64(salt)));
}

/// Formats a value with 9 significant digits, the contract for every
/// numeric field in emitted CSV artifacts.
inline std::string format_g9(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    return std::string(buf);
}

} // namespace ole
