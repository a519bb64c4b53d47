#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace kalm {

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

// Deterministic random stream. std::mt19937_64 output is fixed by the
// standard, but the std distributions are not, so all draws here go through
// our own uniform/normal/bounded implementations. Two streams constructed
// with the same seed produce identical sequences on every platform.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : seed_(seed), eng_(detail::splitmix64(seed)) {}

    uint64_t seed() const { return seed_; }

    // Independent stream for a sub-task; stable under reordering of calls.
    RandomStream derive(uint64_t salt) const {
        return RandomStream(detail::splitmix64(seed_ ^ (salt * 0x9e3779b97f4a7c15ULL)));
    }

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled so the result does not
    // depend on the platform's std::uniform_int_distribution.
    uint64_t bounded(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    // Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // u1 in (0, 1] so the log is finite.
        const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    Eigen::Vector3d in_box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
        return {uniform(lo.x(), hi.x()), uniform(lo.y(), hi.y()), uniform(lo.z(), hi.z())};
    }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace kalm
