#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "gradflow/core.hpp"

namespace gradflow {

/// Uniform cell-centered grid on a truncated box, dimension 1 or 2.
/// Axis a has n_a cells over [lo_a, hi_a]; node i sits at the cell center
/// lo + (i+1/2)h. Midpoint quadrature (value x cell volume) is then exact
/// over the stated box and pairs with the finite-volume flux stencils,
/// whose faces are the cell boundaries.
struct Axis {
    double lo = 0.0;
    double hi = 0.0;
    int nodes = 0;
    double spacing() const { return (hi - lo) / nodes; }
};

class Grid {
public:
    Grid() = default;

    static Grid make1d(double lo, double hi, int nodes) {
        Grid g;
        g.axes_ = {Axis{lo, hi, nodes}};
        g.validate();
        return g;
    }

    static Grid make2d(double lox, double hix, int nx, double loy, double hiy, int ny) {
        Grid g;
        g.axes_ = {Axis{lox, hix, nx}, Axis{loy, hiy, ny}};
        g.validate();
        return g;
    }

    int dimension() const { return static_cast<int>(axes_.size()); }
    const Axis& axis(int a) const { return axes_[static_cast<std::size_t>(a)]; }

    std::size_t size() const {
        std::size_t s = 1;
        for (const auto& ax : axes_) s *= static_cast<std::size_t>(ax.nodes);
        return s;
    }

    double cell_volume() const {
        double v = 1.0;
        for (const auto& ax : axes_) v *= ax.spacing();
        return v;
    }

    /// Row-major flattening; axis 0 is the slow index.
    std::size_t stride(int a) const {
        std::size_t s = 1;
        for (int b = a + 1; b < dimension(); ++b)
            s *= static_cast<std::size_t>(axes_[static_cast<std::size_t>(b)].nodes);
        return s;
    }

    std::array<int, 2> unflatten(std::size_t idx) const {
        if (dimension() == 1) return {static_cast<int>(idx), 0};
        int ny = axes_[1].nodes;
        return {static_cast<int>(idx) / ny, static_cast<int>(idx) % ny};
    }

    double coordinate(std::size_t idx, int a) const {
        auto ij = unflatten(idx);
        const Axis& ax = axes_[static_cast<std::size_t>(a)];
        return ax.lo + (ij[static_cast<std::size_t>(a)] + 0.5) * ax.spacing();
    }

    bool same_as(const Grid& other) const {
        if (dimension() != other.dimension()) return false;
        for (int a = 0; a < dimension(); ++a) {
            const Axis &x = axis(a), &y = other.axis(a);
            if (x.nodes != y.nodes || x.lo != y.lo || x.hi != y.hi) return false;
        }
        return true;
    }

private:
    void validate() const {
        require(axes_.size() == 1 || axes_.size() == 2, "grid: dimension must be 1 or 2");
        for (const auto& ax : axes_) {
            require(ax.hi > ax.lo, "grid: upper bound must exceed lower bound");
            require(ax.nodes >= 16, "grid: node count >= 16 per axis required");
        }
    }

    std::vector<Axis> axes_;
};

/// Probability density sampled at cell centers. Mass is the midpoint quadrature.
struct GridDensity {
    Grid grid;
    std::vector<double> values;

    double mass() const {
        double s = std::accumulate(values.begin(), values.end(), 0.0);
        return s * grid.cell_volume();
    }

    GridDensity& normalize() {
        double m = mass();
        require(m > 0.0, "density: cannot normalize zero mass");
        for (double& v : values) v /= m;
        return *this;
    }
};

/// One component per axis, values at cell centers.
struct VelocityField {
    Grid grid;
    std::vector<std::vector<double>> components;  // [axis][node]

    static VelocityField zero(const Grid& g) {
        VelocityField v;
        v.grid = g;
        v.components.assign(static_cast<std::size_t>(g.dimension()),
                            std::vector<double>(g.size(), 0.0));
        return v;
    }
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    require(a.same_as(b), std::string(what) + ": grid mismatch");
}

/// Quadrature of an arbitrary nodal field against the grid measure.
inline double integrate(const Grid& g, const std::vector<double>& f) {
    return std::accumulate(f.begin(), f.end(), 0.0) * g.cell_volume();
}

/// Second-order nodal derivative along one axis: central interior, one-sided ends.
inline std::vector<double> nodal_derivative(const Grid& g, const std::vector<double>& f, int a) {
    const int n = g.axis(a).nodes;
    const double h = g.axis(a).spacing();
    const std::size_t st = g.stride(a);
    const std::size_t lines = g.size() / static_cast<std::size_t>(n);
    std::vector<double> out(g.size(), 0.0);
    for (std::size_t line = 0; line < lines; ++line) {
        std::size_t base;
        if (g.dimension() == 1) {
            base = 0;
        } else if (a == 0) {
            base = line;  // stride over axis1 positions
        } else {
            base = line * g.stride(0);
        }
        auto at = [&](int i) -> double { return f[base + static_cast<std::size_t>(i) * st]; };
        auto& o = out;
        o[base] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
        for (int i = 1; i + 1 < n; ++i)
            o[base + static_cast<std::size_t>(i) * st] = (at(i + 1) - at(i - 1)) / (2.0 * h);
        o[base + static_cast<std::size_t>(n - 1) * st] =
            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h);
    }
    return out;
}

/// Gaussian with diagonal covariance, normalized discretely on the grid.
inline GridDensity make_gaussian(const Grid& g, const std::vector<double>& mean,
                                 const std::vector<double>& variance) {
    require(static_cast<int>(mean.size()) == g.dimension() &&
                static_cast<int>(variance.size()) == g.dimension(),
            "gaussian: mean/variance dimension mismatch");
    for (double v : variance) require(v > 0.0, "gaussian: variance must be positive");
    GridDensity d;
    d.grid = g;
    d.values.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        double e = 0.0;
        for (int a = 0; a < g.dimension(); ++a) {
            double dx = g.coordinate(i, a) - mean[static_cast<std::size_t>(a)];
            e += dx * dx / (2.0 * variance[static_cast<std::size_t>(a)]);
        }
        d.values[i] = std::exp(-e);
    }
    d.normalize();
    return d;
}

/// Mixture of two diagonal Gaussians, for randomized property tests.
inline GridDensity make_gaussian_mixture(const Grid& g, double w,
                                         const std::vector<double>& m1, const std::vector<double>& v1,
                                         const std::vector<double>& m2, const std::vector<double>& v2) {
    GridDensity a = make_gaussian(g, m1, v1);
    GridDensity b = make_gaussian(g, m2, v2);
    GridDensity out;
    out.grid = g;
    out.values.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        out.values[i] = w * a.values[i] + (1.0 - w) * b.values[i];
    out.normalize();
    return out;
}

inline std::vector<double> density_moments_mean(const GridDensity& d) {
    std::vector<double> m(static_cast<std::size_t>(d.grid.dimension()), 0.0);
    const double vol = d.grid.cell_volume();
    for (std::size_t i = 0; i < d.values.size(); ++i)
        for (int a = 0; a < d.grid.dimension(); ++a)
            m[static_cast<std::size_t>(a)] += d.grid.coordinate(i, a) * d.values[i] * vol;
    double mass = d.mass();
    for (double& x : m) x /= mass;
    return m;
}

inline std::vector<double> density_moments_variance(const GridDensity& d) {
    auto mean = density_moments_mean(d);
    std::vector<double> v(static_cast<std::size_t>(d.grid.dimension()), 0.0);
    const double vol = d.grid.cell_volume();
    for (std::size_t i = 0; i < d.values.size(); ++i)
        for (int a = 0; a < d.grid.dimension(); ++a) {
            double dx = d.grid.coordinate(i, a) - mean[static_cast<std::size_t>(a)];
            v[static_cast<std::size_t>(a)] += dx * dx * d.values[i] * vol;
        }
    double mass = d.mass();
    for (double& x : v) x /= mass;
    return v;
}

}  // namespace gradflow
