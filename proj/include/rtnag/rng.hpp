#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rtnag {

// Deterministic RNG. std::mt19937_64 supplies the bit stream; the real-valued
// mappings are done by hand because the standard distributions are
// implementation-defined, and dataset bytes must reproduce exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (the sine twin is discarded to keep the
    // draw count independent of call pairing).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    // Derived stream for a named purpose; keeps per-subject generation
    // independent of iteration order.
    static Rng fork(std::uint64_t seed, std::uint64_t salt) {
        std::uint64_t z = seed ^ salt;
        // splitmix64 finalizer so nearby salts decorrelate
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        z = z ^ (z >> 31);
        return Rng(z);
    }

private:
    std::mt19937_64 eng_;
};

} // namespace rtnag
