#pragma once

#include <cmath>
#include <cstdint>
#include <charconv>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradflow {

// Density floor: logs of grid densities are computed as log(max(rho, kDensityFloor)),
// and nodes below the floor are excluded from ratio-based integrands.
inline constexpr double kDensityFloor = 1e-30;

// Absolute-continuity proxy: rho_tilde above this where rho is floored means the
// divergence is +inf on the grid; such states are rejected rather than floored.
inline constexpr double kSupportThreshold = 1e-12;

inline bool nearly_equal(double a, double b, double tol) {
    return std::fabs(a - b) <= tol;
}

/// Deterministic 64-bit generator (xoshiro-free: std::mt19937_64 is stable across
/// platforms; distributions are hand-rolled below because std:: distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
        // splitmix64 warmup decorrelates small seeds
        for (int i = 0; i < 4; ++i) next();
    }

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, m).
    std::uint64_t below(std::uint64_t m) { return next() % m; }

    /// Standard normal via Box-Muller (deterministic given the seed).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Fixed 17-significant-digit formatting; round-trip exact and locale independent.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace gradflow
