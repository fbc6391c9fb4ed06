#pragma once

// Seeded draws with a fixed algorithm so runs reproduce across standard
// library implementations (std::*_distribution output is implementation-defined).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

namespace echomimic {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Index drawn with probability proportional to `weights`.
inline std::size_t weighted_index(Rng& rng, std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("weights must be nonnegative");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("weights must have a positive sum");
    double r = uniform01(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (r < weights[i]) return i;
        r -= weights[i];
    }
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return weights.size() - 1;
}

/// Stable per-purpose stream derived from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::string save_rng(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng load_rng(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw std::runtime_error("corrupt RNG state");
    return rng;
}

}  // namespace echomimic
