#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gradflow/core.hpp"
#include "gradflow/grid.hpp"

namespace gradflow {

/// Smooth seeded space-time perturbation velocity: per axis a low-order Fourier
/// field in space, modulated by sin(pi t / T) in time so it vanishes at both
/// endpoints of the horizon. Reproducible given (grid, seed).
class BumpField {
public:
    BumpField(const Grid& g, Rng& rng) : grid_(g) {
        spatial_.resize(static_cast<std::size_t>(g.dimension()),
                        std::vector<double>(g.size(), 0.0));
        for (int a = 0; a < g.dimension(); ++a) {
            double coef[2][kModes];
            for (int k = 0; k < kModes; ++k) {
                coef[0][k] = rng.normal() / std::sqrt(2.0 * kModes);
                coef[1][k] = rng.normal() / std::sqrt(2.0 * kModes);
            }
            auto& field = spatial_[static_cast<std::size_t>(a)];
            for (std::size_t i = 0; i < g.size(); ++i) {
                double acc = 0.0;
                for (int b = 0; b < g.dimension(); ++b) {
                    const Axis& ax = g.axis(b);
                    double u = (g.coordinate(i, b) - ax.lo) / (ax.hi - ax.lo);
                    for (int k = 0; k < kModes; ++k) {
                        double w = (k + 1) * M_PI * u;
                        acc += coef[0][k] * std::cos(w) + coef[1][k] * std::sin(w);
                    }
                }
                field[i] = acc / g.dimension();
            }
        }
    }

    double time_factor(double t, double T) const { return std::sin(M_PI * t / T); }

    /// Adds magnitude * bump(t) to a velocity field in place.
    void add_to(VelocityField& v, double magnitude, double t, double T) const {
        double s = magnitude * time_factor(t, T);
        for (int a = 0; a < grid_.dimension(); ++a) {
            const auto& src = spatial_[static_cast<std::size_t>(a)];
            auto& dst = v.components[static_cast<std::size_t>(a)];
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
        }
    }

    const std::vector<double>& spatial(int axis) const {
        return spatial_[static_cast<std::size_t>(axis)];
    }

private:
    static constexpr int kModes = 3;
    Grid grid_;
    std::vector<std::vector<double>> spatial_;
};

}  // namespace gradflow
