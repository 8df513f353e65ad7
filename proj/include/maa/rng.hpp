#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace maa {

// splitmix64 finalizer; the backbone of all randomness in the project.
// Every random draw (init, shuffling, dropout, synthetic data) goes through
// this generator so runs are reproducible from a single seed, independent of
// the standard library's distribution implementations.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

// Derives an independent stream seed from (seed, tag, a, b). The tag is
// FNV-1a hashed; the scheme is documented in the README so that per-epoch
// shuffle and dropout streams can be reconstructed from the global seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : tag) {
        h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    }
    std::uint64_t s = seed;
    s = mix64(s ^ h);
    s = mix64(s ^ a);
    s = mix64(s ^ b);
    return s;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    // Uniform in [0, 1) with 53 bits of entropy.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller.
    double gaussian() {
        double u1 = uniform();
        const double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Normal with given stddev, re-drawn until inside +-cut*stddev.
    double truncated_normal(double stddev, double cut = 2.0) {
        double x = gaussian();
        while (std::abs(x) > cut) x = gaussian();
        return x * stddev;
    }

    // In-place Fisher-Yates; deterministic for a given seed on any platform.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

}  // namespace maa
