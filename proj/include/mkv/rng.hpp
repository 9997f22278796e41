#pragma once

#include <cmath>
#include <cstdint>

namespace mkv::rng {

// Counter-based streams: every draw is a pure function of a 64-bit key, so
// simulations are reproducible for any worker count and any evaluation order.

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derived stream key; sub() descends one level (purpose tag, particle, step, ...).
struct Key {
    std::uint64_t v;

    explicit Key(std::uint64_t seed) : v(splitmix64(seed ^ 0x6d4b7f1e9c2a5513ULL)) {}
    Key sub(std::uint64_t id) const {
        Key k(0);
        k.v = splitmix64(v ^ (id * kGolden + 0x94d049bb133111ebULL));
        return k;
    }
};

// Uniform in the open interval (0,1).
inline double uniform01(Key k) {
    return (static_cast<double>(k.v >> 11) + 0.5) * 0x1.0p-53;
}

// Acklam's rational approximation to the inverse normal CDF (|error| < 1.15e-9).
double normal_quantile(double p);

inline double normal(Key k) { return normal_quantile(uniform01(k)); }

inline double exponential(Key k, double rate) { return -std::log(uniform01(k)) / rate; }

}  // namespace mkv::rng
