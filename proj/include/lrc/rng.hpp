#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace lrc {

// SplitMix64 generator. Small state, good mixing, and trivially splittable:
// fork(stream) derives an independent child generator from the current state
// without advancing it, so seeding stays order-independent across consumers.
// All randomness in the project flows through instances owned by callers;
// nothing reads wall-clock or global state.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed)) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Independent child stream; distinct tags give distinct streams.
    Rng fork(uint64_t tag) const {
        return Rng(mix(state_ ^ mix(tag + 0x632be59bd9b4e019ull)));
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Lemire multiply-shift; n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller, no cached spare so forked streams stay stateless-looking.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

// Fisher-Yates with the caller's stream; std::shuffle is not reproducible
// across standard libraries.
inline void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    }
}

}  // namespace lrc
