#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "gradflow/core.hpp"
#include "gradflow/grid.hpp"

namespace gradflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Differentiable scalar objective on R^n. The Hessian callback is optional;
/// flows that need it (Newton) reject objectives without one.
struct ObjectiveField {
    int dimension = 0;
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;
    std::function<Mat(const Vec&)> hessian;  // empty when unavailable

    bool has_hessian() const { return static_cast<bool>(hessian); }
};

/// Hamiltonian H with temperature parameter kT. Gradient is needed by the
/// Fokker-Planck drift; the density representation lives on a truncated grid.
struct Potential {
    int dimension = 0;
    double kT = 1.0;
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;

    double value_at(const Grid& g, std::size_t idx) const {
        Vec x(dimension);
        for (int a = 0; a < dimension; ++a) x[a] = g.coordinate(idx, a);
        return value(x);
    }
};

/// f(x) = 1/2 (x-c)^T A (x-c) with exact gradient and Hessian.
inline ObjectiveField make_quadratic(const Mat& matrix, const Vec& center) {
    const auto n = matrix.rows();
    require(matrix.cols() == n, "make_quadratic: matrix must be square");
    require(center.size() == n, "make_quadratic: center dimension mismatch");
    double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-12 * std::max(1.0, matrix.cwiseAbs().maxCoeff()),
            "make_quadratic: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(matrix);
    require(es.eigenvalues().minCoeff() > 0.0,
            "make_quadratic: matrix is not positive definite");

    ObjectiveField f;
    f.dimension = static_cast<int>(n);
    Mat A = matrix;
    Vec c = center;
    f.value = [A, c](const Vec& x) { return 0.5 * (x - c).dot(A * (x - c)); };
    f.gradient = [A, c](const Vec& x) { return Vec(A * (x - c)); };
    f.hessian = [A](const Vec&) { return A; };
    return f;
}

inline ObjectiveField make_isotropic_quadratic(int n) {
    return make_quadratic(Mat::Identity(n, n), Vec::Zero(n));
}

/// 1D double well f(x) = (x^2-1)^2/4; non-convex, non-log-concave equilibrium.
inline ObjectiveField make_double_well() {
    ObjectiveField f;
    f.dimension = 1;
    f.value = [](const Vec& x) {
        double u = x[0] * x[0] - 1.0;
        return 0.25 * u * u;
    };
    f.gradient = [](const Vec& x) {
        Vec g(1);
        g[0] = x[0] * (x[0] * x[0] - 1.0);
        return g;
    };
    f.hessian = [](const Vec& x) {
        Mat h(1, 1);
        h(0, 0) = 3.0 * x[0] * x[0] - 1.0;
        return h;
    };
    return f;
}

inline Potential make_potential(const ObjectiveField& f, double kT = 1.0) {
    require(kT > 0.0, "potential: kT must be positive");
    Potential p;
    p.dimension = f.dimension;
    p.kT = kT;
    p.value = f.value;
    p.gradient = f.gradient;
    return p;
}

inline Potential make_quadratic_potential(const Mat& A, double kT = 1.0) {
    return make_potential(make_quadratic(A, Vec::Zero(A.rows())), kT);
}

/// Boltzmann density rho_bar = Z^{-1} exp(-H/kT) on the truncated grid.
/// Z is a midpoint quadrature; the exponent is shifted by its grid minimum
/// before exponentiating so stiff potentials cannot overflow.
inline GridDensity boltzmann_density(const Potential& pot, const Grid& grid) {
    require(pot.dimension == grid.dimension(), "boltzmann_density: dimension mismatch");
    const std::size_t n = grid.size();
    std::vector<double> e(n);
    double emin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        double hv = pot.value_at(grid, i);
        require(std::isfinite(hv), "boltzmann_density: H is not finite on the grid");
        e[i] = hv / pot.kT;
        emin = std::min(emin, e[i]);
    }
    GridDensity d;
    d.grid = grid;
    d.values.resize(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d.values[i] = std::exp(-(e[i] - emin));
        z += d.values[i];
    }
    z *= grid.cell_volume();
    require(z > 0.0 && std::isfinite(z), "boltzmann_density: zero or non-finite normalization");
    for (double& v : d.values) v /= z;
    return d;
}

}  // namespace gradflow
