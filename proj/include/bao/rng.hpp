#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace bao {

// Deterministic PRNG used everywhere randomness is needed.
//
// mt19937_64 supplies the raw bits; the distributions (uniform, normal,
// integer, shuffle) are implemented here by hand so that a given seed
// produces the identical stream on every platform and standard library.
// std::uniform_real_distribution and friends do not make that guarantee.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        // xoshiro256** step
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    // Standard normal via Box-Muller. The sine counterpart is discarded so
    // the generator carries no hidden state between calls.
    double normal() {
        double u1 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

    // Independent substream derived from the original seed, not the current
    // state; forking is order-insensitive.
    Rng substream(std::uint64_t stream) const {
        std::uint64_t x = seed_ ^ (0xA54FF53A5F1D36F1ULL + stream * 0x9E3779B97F4A7C15ULL);
        return Rng(splitmix64_step(x));
    }

private:
    struct State {
        std::uint64_t s[4];
        std::uint64_t& operator[](int i) { return s[i]; }
    };

    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    static std::uint64_t splitmix64_step(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static State splitmix64(std::uint64_t seed) {
        State st{};
        for (int i = 0; i < 4; ++i) st[i] = splitmix64_step(seed);
        return st;
    }

    std::uint64_t seed_;
    State state_;
};

}  // namespace bao
