#pragma once

#include <cmath>
#include <cstdint>

namespace steerlab {

// Counter-based splittable PRNG (splitmix64 core). Every stream is a pure
// function of its seed, so derived streams are order-independent: the
// per-image seed is hash_combine(global_seed, image_id) no matter which
// worker renders the image first. Distributions are implemented here rather
// than via <random> because libstdc++'s normal_distribution is not pinned by
// the standard and would break the bit-exact determinism contracts.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n); n > 0
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // standard normal via Box-Muller; consumes two uniforms per draw
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // independent child stream; deterministic in (parent seed path, key)
    Rng split(uint64_t key) const { return Rng(hash_combine(state_, key)); }

private:
    uint64_t state_;
};

}  // namespace steerlab
