#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gradflow/core.hpp"
#include "gradflow/objective.hpp"

namespace gradflow {

/// Time-gridded state/control path. Controls are piecewise constant on
/// [t_i, t_{i+1}) and there is one fewer control than states; integrators
/// store the exact difference quotients (x_{i+1}-x_i)/dt so the feasibility
/// residual is roundoff-level by construction.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> controls;

    std::size_t steps() const { return controls.size(); }

    double feasibility_residual() const {
        double r = 0.0;
        for (std::size_t i = 0; i < controls.size(); ++i) {
            double dt = times[i + 1] - times[i];
            r = std::max(r, (states[i + 1] - states[i] - controls[i] * dt).norm());
        }
        return r;
    }
};

/// Coordinate-subsampling process Pi(t): diagonal 0/1 masks with exactly k ones,
/// resampled every resample_interval. Masks are drawn lazily in epoch order from
/// the seeded generator, so a given (seed, n, k, interval) always yields the
/// same sequence no matter which consumer forces their realization.
class ProjectionProcess {
public:
    ProjectionProcess(int dimension, int batch_size, double resample_interval, std::uint64_t seed)
        : n_(dimension), k_(batch_size), interval_(resample_interval), seed_(seed), rng_(seed) {
        require(dimension >= 1, "projection: dimension must be positive");
        require(batch_size >= 1 && batch_size <= dimension,
                "projection: batch size must lie in [1, dimension]");
        require(resample_interval > 0.0, "projection: resample interval must be positive");
    }

    int dimension() const { return n_; }
    int batch_size() const { return k_; }
    double resample_interval() const { return interval_; }
    std::uint64_t seed() const { return seed_; }

    std::size_t epoch_of(double t) const {
        return static_cast<std::size_t>(std::floor(t / interval_ + 1e-9));
    }

    const std::vector<std::uint8_t>& mask_at(double t) {
        std::size_t e = epoch_of(t);
        while (masks_.size() <= e) masks_.push_back(draw_mask());
        return masks_[e];
    }

    const std::vector<std::vector<std::uint8_t>>& realized_masks() const { return masks_; }

private:
    std::vector<std::uint8_t> draw_mask() {
        // partial Fisher-Yates over index pool; first k survivors get ones
        std::vector<int> idx(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i) idx[static_cast<std::size_t>(i)] = i;
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(n_), 0);
        for (int i = 0; i < k_; ++i) {
            std::size_t j = static_cast<std::size_t>(i) +
                            static_cast<std::size_t>(rng_.below(static_cast<std::uint64_t>(n_ - i)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
            mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
        }
        return mask;
    }

    int n_;
    int k_;
    double interval_;
    std::uint64_t seed_;
    Rng rng_;
    std::vector<std::vector<std::uint8_t>> masks_;
};

namespace detail {

inline std::size_t step_count(double T, double dt) {
    require(dt > 0.0 && T > 0.0, "flow: T and dt must be positive");
    require(dt <= T, "flow: dt must not exceed T");
    return static_cast<std::size_t>(std::llround(std::ceil(T / dt - 1e-12)));
}

inline void check_finite(const Vec& x, std::size_t step) {
    if (!x.allFinite())
        throw std::runtime_error("flow: non-finite state at step " + std::to_string(step));
}

template <typename Rhs>
Trajectory integrate_rk4(const Rhs& rhs, const Vec& x0, double T, double dt_requested) {
    const std::size_t n = step_count(T, dt_requested);
    const double dt = T / static_cast<double>(n);
    Trajectory traj;
    traj.times.resize(n + 1);
    traj.states.resize(n + 1);
    traj.controls.resize(n);
    traj.states[0] = x0;
    traj.times[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec& x = traj.states[i];
        Vec k1 = rhs(x, i);
        Vec k2 = rhs(x + 0.5 * dt * k1, i);
        Vec k3 = rhs(x + 0.5 * dt * k2, i);
        Vec k4 = rhs(x + dt * k3, i);
        traj.states[i + 1] = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_finite(traj.states[i + 1], i);
        traj.times[i + 1] = static_cast<double>(i + 1) * dt;
        traj.controls[i] = (traj.states[i + 1] - traj.states[i]) / dt;
    }
    return traj;
}

inline Vec newton_direction(const ObjectiveField& f, const Vec& x, std::size_t step) {
    Mat h = f.hessian(x);
    Eigen::SelfAdjointEigenSolver<Mat> es(h);
    if (es.eigenvalues().minCoeff() <= 1e-12)
        throw std::runtime_error("newton_flow: Hessian not positive definite (min eigenvalue " +
                                 std::to_string(es.eigenvalues().minCoeff()) + ") at step " +
                                 std::to_string(step));
    Vec y = es.eigenvectors().transpose() * f.gradient(x);
    y = y.cwiseQuotient(es.eigenvalues());
    return es.eigenvectors() * y;
}

}  // namespace detail

/// RK4 integration of xdot = -grad f.
inline Trajectory gradient_flow(const ObjectiveField& f, const Vec& x0, double T, double dt) {
    return detail::integrate_rk4([&](const Vec& x, std::size_t) { return Vec(-f.gradient(x)); },
                                 x0, T, dt);
}

/// RK4 integration of xdot = -H_f(x)^{-1} grad f.
inline Trajectory newton_flow(const ObjectiveField& f, const Vec& x0, double T, double dt) {
    require(f.has_hessian(), "newton_flow: objective has no Hessian");
    return detail::integrate_rk4(
        [&](const Vec& x, std::size_t i) { return Vec(-detail::newton_direction(f, x, i)); },
        x0, T, dt);
}

/// Forward-Euler integration of xdot = -Pi(t) grad f; Pi is piecewise constant
/// per resample epoch (high-order stepping gains nothing across mask switches).
inline Trajectory sgd_flow(const ObjectiveField& f, const Vec& x0, double T, double dt,
                           ProjectionProcess& proj) {
    require(proj.dimension() == f.dimension, "sgd_flow: projection dimension mismatch");
    require(proj.resample_interval() >= dt, "sgd_flow: resample interval must be >= dt");
    const std::size_t n = detail::step_count(T, dt);
    const double h = T / static_cast<double>(n);
    Trajectory traj;
    traj.times.resize(n + 1);
    traj.states.resize(n + 1);
    traj.controls.resize(n);
    traj.states[0] = x0;
    traj.times[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& mask = proj.mask_at(traj.times[i]);
        Vec g = f.gradient(traj.states[i]);
        for (int j = 0; j < f.dimension; ++j)
            if (!mask[static_cast<std::size_t>(j)]) g[j] = 0.0;
        traj.states[i + 1] = traj.states[i] - h * g;
        detail::check_finite(traj.states[i + 1], i);
        traj.times[i + 1] = static_cast<double>(i + 1) * h;
        traj.controls[i] = (traj.states[i + 1] - traj.states[i]) / h;
    }
    return traj;
}

enum class WeightKind { identity, inverse_hessian, projection };

/// Selects the metric M of the flow: the action's gradient term carries the
/// dual norm ||grad f||^2_{M^-1} and the control term the metric norm ||u||^2_M
/// (M = I, M = H_f, or M = Pi with Pi its own pseudo-inverse).
struct ActionWeighting {
    WeightKind kind = WeightKind::identity;
    ProjectionProcess* projection = nullptr;

    static ActionWeighting identity() { return {WeightKind::identity, nullptr}; }
    static ActionWeighting inverse_hessian() { return {WeightKind::inverse_hessian, nullptr}; }
    static ActionWeighting with_projection(ProjectionProcess& p) {
        return {WeightKind::projection, &p};
    }
};

struct AccountedCost {
    double running = 0.0;
    double terminal = 0.0;
    double total = 0.0;
};

namespace detail {

inline double grad_dual_norm2(const ObjectiveField& f, const ActionWeighting& w,
                              const Vec& x, double t) {
    Vec g = f.gradient(x);
    switch (w.kind) {
        case WeightKind::identity:
            return g.squaredNorm();
        case WeightKind::inverse_hessian: {
            return g.dot(newton_direction(f, x, 0));
        }
        case WeightKind::projection: {
            const auto& mask = w.projection->mask_at(t);
            double s = 0.0;
            for (int j = 0; j < f.dimension; ++j)
                if (mask[static_cast<std::size_t>(j)]) s += g[j] * g[j];
            return s;
        }
    }
    return 0.0;
}

inline double control_metric_norm2(const ObjectiveField& f, const ActionWeighting& w,
                                   const Vec& x, const Vec& u, double t) {
    switch (w.kind) {
        case WeightKind::identity:
            return u.squaredNorm();
        case WeightKind::inverse_hessian:
            return u.dot(f.hessian(x) * u);
        case WeightKind::projection: {
            const auto& mask = w.projection->mask_at(t);
            double s = 0.0;
            for (int j = 0; j < f.dimension; ++j)
                if (mask[static_cast<std::size_t>(j)]) s += u[j] * u[j];
            return s;
        }
    }
    return 0.0;
}

}  // namespace detail

/// Action J = int [ 1/2 ||grad f||^2_dual + 1/2 ||u||^2_metric ] dt + f(x(T)).
/// The state-dependent integrand is integrated by the per-interval trapezoid rule
/// (both endpoints evaluated with the interval's mask when weighting by Pi), which
/// keeps the optimal-cost identity residual at O(dt^2).
inline AccountedCost action_euclidean(const Trajectory& traj, const ObjectiveField& f,
                                      ActionWeighting weighting,
                                      double feasibility_threshold = 1e-8,
                                      bool waive_feasibility = false) {
    require(weighting.kind != WeightKind::inverse_hessian || f.has_hessian(),
            "action_euclidean: inverse_hessian weighting requires a Hessian");
    require(weighting.kind != WeightKind::projection || weighting.projection != nullptr,
            "action_euclidean: projection weighting requires a process");
    if (!waive_feasibility)
        require(traj.feasibility_residual() <= feasibility_threshold,
                "action_euclidean: trajectory violates the dynamics constraint");
    AccountedCost cost;
    for (std::size_t i = 0; i < traj.steps(); ++i) {
        double dt = traj.times[i + 1] - traj.times[i];
        double t = traj.times[i];  // interval tag: Pi(t) is constant on [t_i, t_{i+1})
        double ga = detail::grad_dual_norm2(f, weighting, traj.states[i], t);
        double gb = detail::grad_dual_norm2(f, weighting, traj.states[i + 1], t);
        double ca = detail::control_metric_norm2(f, weighting, traj.states[i], traj.controls[i], t);
        double cb = detail::control_metric_norm2(f, weighting, traj.states[i + 1], traj.controls[i], t);
        cost.running += dt * 0.5 * (0.5 * (ga + gb) + 0.5 * (ca + cb));
    }
    cost.terminal = f.value(traj.states.back());
    cost.total = cost.running + cost.terminal;
    return cost;
}

/// Lagrange functional  int u . grad S dt - S(x(T)) + S(x(0)); identically zero
/// along feasible trajectories up to the O(dt^2 T) line-integral quadrature error.
inline double lagrange_functional(const Trajectory& traj, const ObjectiveField& S) {
    double acc = 0.0;
    for (std::size_t i = 0; i < traj.steps(); ++i) {
        double dt = traj.times[i + 1] - traj.times[i];
        Vec gmid = 0.5 * (S.gradient(traj.states[i]) + S.gradient(traj.states[i + 1]));
        acc += dt * traj.controls[i].dot(gmid);
    }
    return acc - S.value(traj.states.back()) + S.value(traj.states.front());
}

struct DissipationPoint {
    double t;
    double lhs;  // df/dt by finite differences along the path
    double rhs;  // -||grad f||^2 in the weighting's dual norm
};

struct DissipationSeries {
    std::vector<DissipationPoint> points;
    double max_mismatch = 0.0;
    double reported_constant = 0.0;  // max_mismatch / dt^2
};

/// Checks df/dt = -||grad f||^2_W along the path: central differences at interior
/// nodes, second-order one-sided at the ends.
inline DissipationSeries dissipation_check_euclidean(const Trajectory& traj,
                                                     const ObjectiveField& f,
                                                     ActionWeighting weighting) {
    const std::size_t m = traj.states.size();
    require(m >= 3, "dissipation_check: need at least three states");
    std::vector<double> fv(m);
    for (std::size_t i = 0; i < m; ++i) fv[i] = f.value(traj.states[i]);
    const double dt = traj.times[1] - traj.times[0];
    DissipationSeries out;
    out.points.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        double lhs;
        if (i == 0)
            lhs = (-3.0 * fv[0] + 4.0 * fv[1] - fv[2]) / (2.0 * dt);
        else if (i == m - 1)
            lhs = (3.0 * fv[m - 1] - 4.0 * fv[m - 2] + fv[m - 3]) / (2.0 * dt);
        else
            lhs = (fv[i + 1] - fv[i - 1]) / (2.0 * dt);
        double rhs = -detail::grad_dual_norm2(f, weighting, traj.states[i], traj.times[i]);
        out.points.push_back({traj.times[i], lhs, rhs});
        out.max_mismatch = std::max(out.max_mismatch, std::fabs(lhs - rhs));
    }
    out.reported_constant = out.max_mismatch / (dt * dt);
    return out;
}

struct GapReport {
    double optimal_total = 0.0;
    std::vector<double> samples;
    double gap = 0.0;  // min(samples) - optimal_total
    int flagged = 0;   // diverged samples recorded as +inf
};

/// Numerical optimality certificate: integrates the weighting's matching flow,
/// then re-integrates m control perturbations u* + eps b(t) and compares totals.
/// b(t) = sin(pi t / T) g with g a seeded normal vector, normalized to unit
/// L^2[0,T] norm, so the perturbation vanishes at the pinned initial time.
inline GapReport optimality_gap(const ObjectiveField& f, const Vec& x0, double T, double dt,
                                ActionWeighting weighting, int perturbations, double magnitude,
                                std::uint64_t seed) {
    Trajectory opt;
    switch (weighting.kind) {
        case WeightKind::identity:
            opt = gradient_flow(f, x0, T, dt);
            break;
        case WeightKind::inverse_hessian:
            opt = newton_flow(f, x0, T, dt);
            break;
        case WeightKind::projection:
            require(weighting.projection != nullptr, "optimality_gap: projection process required");
            opt = sgd_flow(f, x0, T, dt, *weighting.projection);
            break;
    }
    GapReport report;
    report.optimal_total = action_euclidean(opt, f, weighting).total;

    Rng rng(seed);
    const std::size_t n = opt.steps();
    const double h = opt.times[1] - opt.times[0];
    report.samples.reserve(static_cast<std::size_t>(perturbations));
    for (int p = 0; p < perturbations; ++p) {
        Vec dir(f.dimension);
        for (int j = 0; j < f.dimension; ++j) dir[j] = rng.normal();
        double norm = dir.norm();
        if (norm > 0.0) dir /= norm * std::sqrt(T / 2.0);  // unit L^2[0,T] bump

        Trajectory pert;
        pert.times = opt.times;
        pert.states.resize(n + 1);
        pert.controls.resize(n);
        pert.states[0] = x0;
        bool diverged = false;
        for (std::size_t i = 0; i < n; ++i) {
            double tmid = 0.5 * (opt.times[i] + opt.times[i + 1]);
            Vec u = opt.controls[i] + magnitude * std::sin(M_PI * tmid / T) * dir;
            if (weighting.kind == WeightKind::projection) {
                const auto& mask = weighting.projection->mask_at(opt.times[i]);
                for (int j = 0; j < f.dimension; ++j)
                    if (!mask[static_cast<std::size_t>(j)]) u[j] = 0.0;
            }
            pert.states[i + 1] = pert.states[i] + h * u;
            pert.controls[i] = (pert.states[i + 1] - pert.states[i]) / h;
            if (!pert.states[i + 1].allFinite()) {
                diverged = true;
                break;
            }
        }
        if (diverged) {
            report.samples.push_back(std::numeric_limits<double>::infinity());
            ++report.flagged;
            continue;
        }
        report.samples.push_back(action_euclidean(pert, f, weighting).total);
    }
    double best = std::numeric_limits<double>::infinity();
    for (double s : report.samples) best = std::min(best, s);
    report.gap = best - report.optimal_total;
    return report;
}

}  // namespace gradflow
