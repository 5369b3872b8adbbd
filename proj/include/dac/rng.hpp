#pragma once

#include <cmath>
#include <cstdint>

namespace dac {

// splitmix64 step; the basis of every random stream in the project. Chosen
// over std::mt19937 so that draws are bit-identical across standard libraries
// and can be serialized as a single u64.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Mixes two seeds into one; used to derive independent per-step / per-item
// streams so batch parallelism cannot change any draw.
inline uint64_t fold_seed(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (0x9E3779B97F4A7C15ull + (b << 6) + (b >> 2));
    splitmix64(s);
    return s;
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Draws a fresh pair every call and
    // discards the sine branch, so the generator state is exactly one u64
    // (checkpointable without a cached-spare field).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Fisher-Yates index draw in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

}  // namespace dac
