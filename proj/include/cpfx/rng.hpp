#pragma once

// All randomness flows from a single run seed; components derive their own
// streams by hashing a stream name into the seed, so adding a consumer never
// shifts another component's draws.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace cpfx {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 named_rng(uint64_t seed, std::string_view stream) {
    return std::mt19937_64(splitmix64(seed ^ fnv1a64(stream)));
}

inline double rand_normal(std::mt19937_64& rng, double mean = 0.0, double std = 1.0) {
    std::normal_distribution<double> d(mean, std);
    return d(rng);
}

inline double rand_uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline int rand_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
}

}  // namespace cpfx
