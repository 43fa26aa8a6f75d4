#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vseg {

/// Base class for all pipeline errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor/volume dimension disagreement. Messages name both shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Input value outside its documented domain.
struct ValidationError : Error {
    using Error::Error;
};

/// On-disk artifact does not match its format contract.
struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Bad run configuration (CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

/// A pipeline stage was invoked before its prerequisites exist (exit code 3).
struct PrereqError : Error {
    using Error::Error;
};

/// Geometrically degenerate input (collinear/coincident point cloud).
struct DegeneracyError : Error {
    using Error::Error;
};

/// API misuse, e.g. backward called with a cache from a different forward.
struct UsageError : Error {
    using Error::Error;
};

/// 64-bit FNV-1a. Used for config hashing and for deriving per-purpose
/// RNG streams from the master seed; stable across platforms.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::uint64_t v, std::uint64_t h) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// The raw 64-bit value behind substream_rng, for components that take a
/// seed rather than a generator.
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view stream,
                                    std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(stream);
    h = fnv1a64(master, h);
    return fnv1a64(index, h);
}

/// Deterministic generator for a named substream of the master seed.
/// Distinct (stream, index) pairs give independent sequences.
inline std::mt19937_64 substream_rng(std::uint64_t master, std::string_view stream,
                                     std::uint64_t index = 0) {
    return std::mt19937_64(substream_seed(master, stream, index));
}

}  // namespace vseg
