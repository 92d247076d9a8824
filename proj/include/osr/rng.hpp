#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace osr {

// All randomness in the toolkit flows through these helpers on top of the raw
// mt19937_64 stream. The std <random> distributions are implementation-defined,
// which would break the per-seed reproducibility contract across standard
// libraries.

/// Uniform double in [0, 1) with 53 bits of precision.
inline double uniform_unit(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform_range(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(g);
}

/// Unbiased uniform index in [0, n), by rejection.
inline std::size_t uniform_index(std::mt19937_64& g, std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = g();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

/// Standard normal sample via Box-Muller (single value per draw pair).
inline double normal_sample(std::mt19937_64& g, double mean = 0.0, double sd = 1.0) {
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((g() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform_unit(g);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Named sub-seed derivation (splitmix64 over the base seed and a tag hash),
/// so one experiment seed fans out into independent split/init/batch/dropout
/// streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace osr
