#pragma once

#include <cmath>

#include "gradflow/objective.hpp"

namespace gradflow::test {

/// Worst relative deviation of the analytic gradient from central finite
/// differences of the value, over `count` seeded points in [-3,3]^n.
inline double fd_gradient_error(const ObjectiveField& f, int count, std::uint64_t seed,
                                double step = 1e-5) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < count; ++trial) {
        Vec x(f.dimension);
        for (int j = 0; j < f.dimension; ++j) x[j] = 6.0 * rng.uniform() - 3.0;
        Vec g = f.gradient(x);
        for (int j = 0; j < f.dimension; ++j) {
            Vec xp = x, xm = x;
            xp[j] += step;
            xm[j] -= step;
            double fd = (f.value(xp) - f.value(xm)) / (2.0 * step);
            worst = std::max(worst, std::fabs(fd - g[j]) / std::max(1.0, std::fabs(g[j])));
        }
    }
    return worst;
}

inline double fd_hessian_error(const ObjectiveField& f, int count, std::uint64_t seed,
                               double step = 1e-5) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < count; ++trial) {
        Vec x(f.dimension);
        for (int j = 0; j < f.dimension; ++j) x[j] = 6.0 * rng.uniform() - 3.0;
        Mat h = f.hessian(x);
        for (int j = 0; j < f.dimension; ++j) {
            Vec xp = x, xm = x;
            xp[j] += step;
            xm[j] -= step;
            Vec col = (f.gradient(xp) - f.gradient(xm)) / (2.0 * step);
            for (int i = 0; i < f.dimension; ++i)
                worst = std::max(worst,
                                 std::fabs(col[i] - h(i, j)) / std::max(1.0, std::fabs(h(i, j))));
        }
    }
    return worst;
}

}  // namespace gradflow::test
