#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace spt {

// SplitMix64. Every random decision in the project flows through this
// generator so that runs are reproducible across platforms from a single
// 64-bit seed. Do not substitute std:: distributions anywhere on an
// output-affecting path: their results are implementation-defined.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, n) via Lemire's multiply-shift reduction.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) return 0;
        unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Uniform double in (0, 1]; never returns 0 so log() stays finite.
    double uniform_open() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    // Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. Two uniforms per draw, no caching,
    // so the stream position is a simple function of the draw count.
    double normal() {
        double u1 = uniform_open();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Named sub-seed derivation: one config seed fans out to independent
// streams ("mixture", "init", "dropout", "task/template", ...) without
// the streams overlapping.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    SplitMix64 g(base ^ fnv1a64(label));
    return g.next();
}

// In-place Fisher-Yates shuffle driven by SplitMix64.
template <typename T>
void fisher_yates(std::vector<T>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(v[i - 1], v[j]);
    }
}

// First `take` elements of a partial Fisher-Yates over [0, n), in the
// order they were drawn. take >= n returns the identity permutation.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t take,
                                                           SplitMix64& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (take >= n) return idx;
    for (std::size_t i = 0; i < take; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.bounded(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
}

}  // namespace spt
