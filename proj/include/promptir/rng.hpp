#pragma once

#include <cmath>
#include <cstdint>

namespace promptir {

// Counter-based deterministic generator. Every draw is a pure function of
// (key, counter), so independent streams can be derived for parallel or
// resumable work without shared state: stream(seed, index) gives each
// sample / step its own sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    // Independent stream for (seed, index). Used per dataset sample and
    // per training step so regeneration after resume is exact.
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        Rng r(seed);
        r.key_ = mix(r.key_ + mix(index + 0x632be59bd9b4e019ull));
        return r;
    }

    static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
        return stream(mix(seed + mix(a)), b);
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0,1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    bool coin() { return (next_u64() & 1ull) != 0; }

    // Standard normal via Box-Muller. Two uniforms per draw, no caching,
    // so the stream position stays a pure function of the draw count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace promptir
