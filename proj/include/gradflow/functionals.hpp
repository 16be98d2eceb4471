#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gradflow/core.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/objective.hpp"

namespace gradflow {

namespace detail {

inline double floored(double v) { return std::max(v, kDensityFloor); }

inline std::vector<double> log_ratio_field(const GridDensity& num, const GridDensity& den) {
    std::vector<double> out(num.values.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::log(floored(num.values[i])) - std::log(floored(den.values[i]));
    return out;
}

inline void check_support(const GridDensity& top, const GridDensity& bottom, const char* what) {
    for (std::size_t i = 0; i < top.values.size(); ++i) {
        if (top.values[i] > kSupportThreshold && bottom.values[i] <= kDensityFloor) {
            throw std::invalid_argument(std::string(what) +
                                        ": support violation at node " + std::to_string(i));
        }
    }
}

}  // namespace detail

/// Gibbs entropy -int rho log rho (k = 1).
inline double entropy(const GridDensity& rho) {
    double s = 0.0;
    for (double v : rho.values)
        if (v > kDensityFloor) s -= v * std::log(v);
    return s * rho.grid.cell_volume();
}

/// F = U - T S = <H,rho> + kT int rho log rho (Boltzmann constant k = 1).
inline double free_energy(const GridDensity& rho, const Potential& pot) {
    require(pot.dimension == rho.grid.dimension(), "free_energy: dimension mismatch");
    double u = 0.0;
    for (std::size_t i = 0; i < rho.values.size(); ++i)
        u += pot.value_at(rho.grid, i) * rho.values[i];
    u *= rho.grid.cell_volume();
    return u - pot.kT * entropy(rho);
}

/// D(rho_tilde || rho) = int log(rho_tilde/rho) rho_tilde.
inline double relative_entropy(const GridDensity& rho_tilde, const GridDensity& rho) {
    require_same_grid(rho_tilde.grid, rho.grid, "relative_entropy");
    detail::check_support(rho_tilde, rho, "relative_entropy");
    double d = 0.0;
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
        double t = rho_tilde.values[i];
        if (t <= kDensityFloor) continue;
        d += t * (std::log(t) - std::log(detail::floored(rho.values[i])));
    }
    return d * rho.grid.cell_volume();
}

/// Wasserstein gradient of D(rho||rho_bar): grad log(rho/rho_bar), second-order
/// differences of the floored log-ratio (robust where either density underflows).
inline VelocityField wasserstein_gradient_single(const GridDensity& rho, const GridDensity& rho_bar) {
    require_same_grid(rho.grid, rho_bar.grid, "wasserstein_gradient_single");
    auto lr = detail::log_ratio_field(rho, rho_bar);
    VelocityField v = VelocityField::zero(rho.grid);
    for (int a = 0; a < rho.grid.dimension(); ++a)
        v.components[static_cast<std::size_t>(a)] = nodal_derivative(rho.grid, lr, a);
    return v;
}

/// Product-space gradient of D(rho_tilde||rho): (grad log(rt/r), -grad(rt/r)).
/// The second component is formed algebraically as s * (first component) with
/// s the nodal floored ratio, which makes the weighted-flux identity
/// rho_tilde * first = rho * (-second) hold to roundoff.
inline std::pair<VelocityField, VelocityField>
wasserstein_gradient_pair(const GridDensity& rho_tilde, const GridDensity& rho) {
    require_same_grid(rho_tilde.grid, rho.grid, "wasserstein_gradient_pair");
    VelocityField first = wasserstein_gradient_single(rho_tilde, rho);
    VelocityField second = VelocityField::zero(rho.grid);
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
        double s = detail::floored(rho_tilde.values[i]) / detail::floored(rho.values[i]);
        for (int a = 0; a < rho.grid.dimension(); ++a)
            second.components[static_cast<std::size_t>(a)][i] =
                -s * first.components[static_cast<std::size_t>(a)][i];
    }
    return {std::move(first), std::move(second)};
}

/// Relative Fisher information int ||grad log(rt/r)||^2 rt. Nodes where either
/// density is floored are excluded; the error is bounded by the excluded mass.
inline double relative_fisher(const GridDensity& rho_tilde, const GridDensity& rho) {
    require_same_grid(rho_tilde.grid, rho.grid, "relative_fisher");
    detail::check_support(rho_tilde, rho, "relative_fisher");
    VelocityField g = wasserstein_gradient_single(rho_tilde, rho);
    double acc = 0.0;
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
        if (rho_tilde.values[i] <= kDensityFloor || rho.values[i] <= kDensityFloor) continue;
        double n2 = 0.0;
        for (int a = 0; a < rho.grid.dimension(); ++a) {
            double gi = g.components[static_cast<std::size_t>(a)][i];
            n2 += gi * gi;
        }
        acc += n2 * rho_tilde.values[i];
    }
    return acc * rho.grid.cell_volume();
}

/// W2 between 1D densities by quantile coupling: piecewise-linear CDFs are
/// inverted at kLevels midpoint quantiles and the squared displacement integrated.
inline double wasserstein1d(const GridDensity& rho0, const GridDensity& rho1) {
    require(rho0.grid.dimension() == 1 && rho1.grid.dimension() == 1,
            "wasserstein1d: dimension must be 1");
    constexpr int kLevels = 10000;

    struct Quantiles {
        std::vector<double> x;
    };
    auto quantiles = [&](const GridDensity& d) {
        const int n = d.grid.axis(0).nodes;
        const double h = d.grid.axis(0).spacing();
        const double lo = d.grid.axis(0).lo;
        std::vector<double> cdf(static_cast<std::size_t>(n) + 1, 0.0);
        for (int i = 0; i < n; ++i)
            cdf[static_cast<std::size_t>(i) + 1] =
                cdf[static_cast<std::size_t>(i)] + std::max(d.values[static_cast<std::size_t>(i)], 0.0) * h;
        const double mass = cdf.back();
        require(mass > 0.0, "wasserstein1d: zero mass");
        Quantiles q;
        q.x.resize(kLevels);
        int cell = 0;
        for (int k = 0; k < kLevels; ++k) {
            double target = (k + 0.5) / kLevels * mass;
            while (cell + 1 < n && cdf[static_cast<std::size_t>(cell) + 1] < target) ++cell;
            double dm = cdf[static_cast<std::size_t>(cell) + 1] - cdf[static_cast<std::size_t>(cell)];
            double frac = dm > 0.0 ? (target - cdf[static_cast<std::size_t>(cell)]) / dm : 0.5;
            q.x[static_cast<std::size_t>(k)] = lo + (cell + frac) * h;
        }
        return q;
    };

    Quantiles a = quantiles(rho0), b = quantiles(rho1);
    double acc = 0.0;
    for (int k = 0; k < kLevels; ++k) {
        double dx = a.x[static_cast<std::size_t>(k)] - b.x[static_cast<std::size_t>(k)];
        acc += dx * dx;
    }
    return std::sqrt(acc / kLevels);
}

}  // namespace gradflow
