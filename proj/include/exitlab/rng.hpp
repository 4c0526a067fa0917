#pragma once

#include <cmath>
#include <cstdint>

namespace exitlab {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Counter-based uniform in [0,1): the value depends only on (seed, stream,
// index), never on call order, so weight init is reproducible regardless of
// the order tensors are filled in.
inline double counter_uniform(uint64_t seed, uint64_t stream, uint64_t index) {
    uint64_t h = splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two counter-derived uniforms.
inline float counter_normal(uint64_t seed, uint64_t stream, uint64_t index) {
    double u1 = counter_uniform(seed, stream, 2 * index);
    double u2 = counter_uniform(seed, stream, 2 * index + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return static_cast<float>(z);
}

// Small sequential generator for sampling loops.
struct SeqRng {
    uint64_t state;

    explicit SeqRng(uint64_t seed) : state(splitmix64(seed)) {}

    uint64_t next_u64() {
        state = splitmix64(state);
        return state;
    }

    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) { return next_u64() % n; }
};

// FNV-1a 64-bit, used for file checksums and weight fingerprints.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace exitlab
