#ifndef LPGFLOW_RNG_HPP
#define LPGFLOW_RNG_HPP

#include <cstdint>
#include <string>

#include "common.hpp"

// Counter-based random streams. Every consumer of randomness opens its own
// stream keyed by (seed, purpose tag); draws depend only on (key, counter),
// never on global state, so any subset of the pipeline replays bit-identically
// regardless of what ran before it.

namespace lpgflow {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// stable sub-seed for item `index` of a tagged family, e.g. scene i of a run
inline uint64_t derive_seed(uint64_t seed, const std::string& tag, uint64_t index) {
    return splitmix64(splitmix64(seed ^ fnv1a64(tag)) + index);
}

class RngStream {
public:
    RngStream(uint64_t seed, const std::string& tag, uint64_t index = 0)
        : key_(splitmix64(splitmix64(seed ^ fnv1a64(tag)) ^ index)), counter_(0) {}

    uint64_t next_u64() {
        return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * (++counter_));
    }

    // uniform in [0, 1)
    float next_float() {
        return float(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    double next_double() {
        return double(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    // uniform integer in [lo, hi] inclusive
    int64_t next_int(int64_t lo, int64_t hi) {
        LPG_REQUIRE(lo <= hi, "next_int: empty range");
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(next_u64() % span);
    }

    float uniform(float lo, float hi) {
        return lo + (hi - lo) * next_float();
    }

    // standard normal via Box-Muller; the second value of each pair is cached
    float next_normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        double r     = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586 * u2;
        cached_      = float(r * std::sin(theta));
        has_cached_  = true;
        return float(r * std::cos(theta));
    }

private:
    uint64_t key_;
    uint64_t counter_;
    bool has_cached_ = false;
    float cached_    = 0.0f;
};

}  // namespace lpgflow

#endif  // LPGFLOW_RNG_HPP
