#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace dsa {

/// Counter-based pseudo-random generator.
///
/// Every output is a stateless hash of (key, counter), so identical seeds
/// reproduce identical streams on any platform, and split() derives an
/// independent substream without sharing state with the parent. Statistical
/// quality is that of the splitmix64 finalizer, which is plenty for the
/// Monte-Carlo sampling done here.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

    /// Independent substream; deterministic in (seed, stream).
    SeededRng split(std::uint64_t stream) const {
        SeededRng r(*this);
        r.key_ = mix(key_ ^ mix(stream ^ 0x94d049bb133111ebULL));
        r.counter_ = 0;
        r.has_spare_ = false;
        return r;
    }

    std::uint64_t seed_key() const { return key_; }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform double in (0, 1); never returns 0 so log() is safe.
    double uniform() {
        const std::uint64_t bits = next_u64() >> 11; // 53 significant bits
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (both variates used).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("SeededRng::below: n must be positive");
        // 64-bit hash bias over realistic n is negligible for sampling work.
        return next_u64() % n;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace dsa
