#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gradflow/bumps.hpp"
#include "gradflow/core.hpp"
#include "gradflow/faces.hpp"
#include "gradflow/functionals.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/objective.hpp"

namespace gradflow {

/// Tracked functionals along a density flow.
struct FlowReport {
    std::vector<double> times;
    std::vector<double> divergence_series;  // D(rho_t || rho_bar)
    std::vector<double> fisher_series;
    std::vector<double> mass_series;
    std::vector<double> action_running;  // accumulated fluid action
    double terminal_divergence = 0.0;
};

namespace detail {

/// Bernstein function z / (e^z - 1) of the Scharfetter-Gummel flux.
inline double bernoulli_fn(double z) {
    if (std::fabs(z) < 1e-5) return 1.0 - 0.5 * z + z * z / 12.0;
    return z / std::expm1(z);
}

inline void check_no_negative(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (x < -1e-12)
            throw std::runtime_error(std::string(what) + ": density went negative beyond -1e-12");
}

}  // namespace detail

/// One conservative upwind step of d rho/dt + div(v rho) = 0 with zero-flux
/// boundaries. Face velocities are arithmetic means of the adjacent nodes.
inline GridDensity continuity_step(const GridDensity& rho, const VelocityField& v, double dt) {
    require_same_grid(rho.grid, v.grid, "continuity_step");
    require(dt > 0.0, "continuity_step: dt must be positive");
    const Grid& g = rho.grid;
    double cfl = 0.0;
    for (int a = 0; a < g.dimension(); ++a) {
        double vmax = 0.0;
        for (double x : v.components[static_cast<std::size_t>(a)])
            vmax = std::max(vmax, std::fabs(x));
        cfl += vmax * dt / g.axis(a).spacing();
    }
    if (cfl > 0.9)
        throw std::runtime_error("continuity_step: CFL violation, |v| dt/dx = " +
                                 std::to_string(cfl));
    GridDensity out = rho;
    for (int a = 0; a < g.dimension(); ++a) {
        const double h = g.axis(a).spacing();
        const auto& va = v.components[static_cast<std::size_t>(a)];
        for_each_face(g, a, [&](std::size_t L, std::size_t R) {
            double vf = 0.5 * (va[L] + va[R]);
            double flux = vf >= 0.0 ? vf * rho.values[L] : vf * rho.values[R];
            out.values[L] -= dt / h * flux;
            out.values[R] += dt / h * flux;
        });
    }
    return out;
}

namespace detail {

/// Static per-face Scharfetter-Gummel coefficients for the Fokker-Planck flux
/// F = aL rho_L - aR rho_R with drift b = -grad H / kT and unit diffusion.
/// The scheme is conservative, positivity preserving under the explicit bound,
/// and keeps the Boltzmann density stationary on the grid.
struct SgStencil {
    // per axis, indexed by left cell of the face (only valid at interior faces)
    std::vector<std::vector<double>> aL, aR;
    double max_drift_cfl_per_dt = 0.0;  // sum_a max|b_a| / h_a

    SgStencil(const Grid& g, const Potential& pot) {
        aL.resize(static_cast<std::size_t>(g.dimension()));
        aR.resize(static_cast<std::size_t>(g.dimension()));
        std::vector<double> hval(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) hval[i] = pot.value_at(g, i);
        for (int a = 0; a < g.dimension(); ++a) {
            const double h = g.axis(a).spacing();
            auto& cl = aL[static_cast<std::size_t>(a)];
            auto& cr = aR[static_cast<std::size_t>(a)];
            cl.assign(g.size(), 0.0);
            cr.assign(g.size(), 0.0);
            double bmax = 0.0;
            for_each_face(g, a, [&](std::size_t L, std::size_t R) {
                double b = -(hval[R] - hval[L]) / (h * pot.kT);
                bmax = std::max(bmax, std::fabs(b));
                double pe = b * h;
                cl[L] = bernoulli_fn(-pe) / h;
                cr[L] = bernoulli_fn(pe) / h;
            });
            max_drift_cfl_per_dt += bmax / h;
        }
    }

    void apply(const Grid& g, const std::vector<double>& rho, double dt,
               std::vector<double>& out) const {
        out = rho;
        for (int a = 0; a < g.dimension(); ++a) {
            const double h = g.axis(a).spacing();
            const auto& cl = aL[static_cast<std::size_t>(a)];
            const auto& cr = aR[static_cast<std::size_t>(a)];
            for_each_face(g, a, [&](std::size_t L, std::size_t R) {
                double flux = cl[L] * rho[L] - cr[L] * rho[R];
                out[L] -= dt / h * flux;
                out[R] += dt / h * flux;
            });
        }
    }
};

inline double diffusion_stability_bound(const Grid& g) {
    double s = 0.0;
    for (int a = 0; a < g.dimension(); ++a) {
        double h = g.axis(a).spacing();
        s += 1.0 / (h * h);
    }
    return 0.4 / s;
}

}  // namespace detail

/// Explicit finite-volume integration of the entropy gradient flow
/// d rho/dt = div((grad H / kT) rho) + Lap rho (unit diffusion, sigma^2 = 2).
/// Snapshots are stored roughly 100 per run; the report's running action is the
/// snapshot-level trapezoid of the relative Fisher information, which is the
/// fluid action integrand of the optimal feedback velocity.
inline std::pair<std::vector<GridDensity>, FlowReport>
fokker_planck_flow(const GridDensity& rho0, const Potential& pot, double T, double dt) {
    require(pot.dimension == rho0.grid.dimension(), "fokker_planck_flow: dimension mismatch");
    require(T > 0.0 && dt > 0.0 && dt <= T, "fokker_planck_flow: need 0 < dt <= T");
    const Grid& g = rho0.grid;
    double bound = detail::diffusion_stability_bound(g);
    if (dt > bound)
        throw std::runtime_error("fokker_planck_flow: dt " + std::to_string(dt) +
                                 " exceeds the explicit stability bound " + std::to_string(bound));
    detail::SgStencil stencil(g, pot);
    if (stencil.max_drift_cfl_per_dt * dt > 0.9)
        throw std::runtime_error("fokker_planck_flow: advective CFL violation, ratio = " +
                                 std::to_string(stencil.max_drift_cfl_per_dt * dt));

    GridDensity rho_bar = boltzmann_density(pot, g);
    const auto nsteps = static_cast<std::size_t>(std::llround(std::ceil(T / dt - 1e-12)));
    const double h = T / static_cast<double>(nsteps);
    const std::size_t cadence = std::max<std::size_t>(1, (nsteps + 99) / 100);

    std::vector<GridDensity> snapshots;
    FlowReport report;
    GridDensity rho = rho0;
    std::vector<double> next(g.size());

    auto record = [&](double t) {
        double fis = relative_fisher(rho, rho_bar);
        if (!report.times.empty()) {
            double dt_snap = t - report.times.back();
            report.action_running.push_back(report.action_running.back() +
                                            0.5 * (report.fisher_series.back() + fis) * dt_snap);
        } else {
            report.action_running.push_back(0.0);
        }
        report.times.push_back(t);
        report.divergence_series.push_back(relative_entropy(rho, rho_bar));
        report.fisher_series.push_back(fis);
        report.mass_series.push_back(rho.mass());
        snapshots.push_back(rho);
    };
    record(0.0);

    for (std::size_t s = 1; s <= nsteps; ++s) {
        stencil.apply(g, rho.values, h, next);
        rho.values.swap(next);
        if ((s % cadence) == 0 || s == nsteps) {
            detail::check_no_negative(rho.values, "fokker_planck_flow");
            record(static_cast<double>(s) * h);
        }
    }
    report.terminal_divergence = report.divergence_series.back();
    return {std::move(snapshots), std::move(report)};
}

/// Feedback velocities -grad log(rho/rho_bar) recomputed from each snapshot.
inline std::vector<VelocityField>
optimal_velocities_fp(const std::vector<GridDensity>& snapshots, const GridDensity& rho_bar) {
    std::vector<VelocityField> out;
    out.reserve(snapshots.size());
    for (const auto& s : snapshots) {
        VelocityField v = wasserstein_gradient_single(s, rho_bar);
        for (auto& comp : v.components)
            for (double& x : comp) x = -x;
        out.push_back(std::move(v));
    }
    return out;
}

struct FpDissipationPoint {
    double t;
    double lhs;  // dD/dt by central differences over snapshots
    double rhs;  // -fisher
};

struct FpDissipationSeries {
    std::vector<FpDissipationPoint> points;  // interior snapshot times
    double max_mismatch = 0.0;
};

inline FpDissipationSeries dissipation_check_fp(const FlowReport& report) {
    require(report.times.size() >= 3, "dissipation_check_fp: need at least three snapshots");
    FpDissipationSeries out;
    for (std::size_t k = 1; k + 1 < report.times.size(); ++k) {
        double lhs = (report.divergence_series[k + 1] - report.divergence_series[k - 1]) /
                     (report.times[k + 1] - report.times[k - 1]);
        double rhs = -report.fisher_series[k];
        out.points.push_back({report.times[k], lhs, rhs});
        out.max_mismatch = std::max(out.max_mismatch, std::fabs(lhs - rhs));
    }
    return out;
}

struct DriftDecomposition {
    VelocityField current;
    VelocityField osmotic;
    VelocityField backward;
};

/// Splits a forward drift into current and osmotic parts: osmotic = (sigma^2/2)
/// grad log rho, current = forward - osmotic, backward = forward - sigma^2 grad
/// log rho. current + osmotic = forward holds exactly by construction.
inline DriftDecomposition drift_decomposition(const GridDensity& rho,
                                              const VelocityField& forward_drift,
                                              double sigma2) {
    require_same_grid(rho.grid, forward_drift.grid, "drift_decomposition");
    require(sigma2 > 0.0, "drift_decomposition: sigma^2 must be positive");
    std::vector<double> lr(rho.values.size());
    for (std::size_t i = 0; i < lr.size(); ++i)
        lr[i] = std::log(detail::floored(rho.values[i]));
    DriftDecomposition out{VelocityField::zero(rho.grid), VelocityField::zero(rho.grid),
                           VelocityField::zero(rho.grid)};
    for (int a = 0; a < rho.grid.dimension(); ++a) {
        auto score = nodal_derivative(rho.grid, lr, a);
        auto& cur = out.current.components[static_cast<std::size_t>(a)];
        auto& osm = out.osmotic.components[static_cast<std::size_t>(a)];
        auto& bwd = out.backward.components[static_cast<std::size_t>(a)];
        const auto& fwd = forward_drift.components[static_cast<std::size_t>(a)];
        for (std::size_t i = 0; i < score.size(); ++i) {
            osm[i] = 0.5 * sigma2 * score[i];
            cur[i] = fwd[i] - osm[i];
            bwd[i] = fwd[i] - sigma2 * score[i];
        }
    }
    return out;
}

/// Fluid-dynamic action: running cost 1/2 int (||v||^2 + ||grad log(rho/rho_bar)||^2) rho,
/// trapezoid over the aligned snapshot series, plus terminal divergence.
struct FluidCost {
    double running = 0.0;
    double terminal = 0.0;
    double total = 0.0;
};

inline double fluid_action_integrand(const GridDensity& rho, const VelocityField& v,
                                     const GridDensity& rho_bar) {
    VelocityField g = wasserstein_gradient_single(rho, rho_bar);
    double acc = 0.0;
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
        if (rho.values[i] <= kDensityFloor) continue;
        double n2 = 0.0;
        for (int a = 0; a < rho.grid.dimension(); ++a) {
            double vi = v.components[static_cast<std::size_t>(a)][i];
            double gi = g.components[static_cast<std::size_t>(a)][i];
            n2 += vi * vi + gi * gi;
        }
        acc += 0.5 * n2 * rho.values[i];
    }
    return acc * rho.grid.cell_volume();
}

inline FluidCost fluid_action(const std::vector<GridDensity>& snapshots,
                              const std::vector<VelocityField>& velocities,
                              const GridDensity& rho_bar, double dt) {
    require(!snapshots.empty() && snapshots.size() == velocities.size(),
            "fluid_action: snapshots and velocities must align");
    for (const auto& s : snapshots) require_same_grid(s.grid, rho_bar.grid, "fluid_action");
    FluidCost cost;
    std::vector<double> phi(snapshots.size());
    for (std::size_t k = 0; k < snapshots.size(); ++k)
        phi[k] = fluid_action_integrand(snapshots[k], velocities[k], rho_bar);
    for (std::size_t k = 0; k + 1 < snapshots.size(); ++k)
        cost.running += 0.5 * (phi[k] + phi[k + 1]) * dt;
    cost.terminal = relative_entropy(snapshots.back(), rho_bar);
    cost.total = cost.running + cost.terminal;
    return cost;
}

/// Equilibrium-velocity form of the virial identity: with the reference flow at
/// rest, 1/2 int ||v||^2 rho should match 1/2 int ||grad log(rho/rho_bar)||^2 rho
/// whenever v is the optimal feedback.
inline std::pair<double, double> virial_check(const GridDensity& rho, const VelocityField& v,
                                              const GridDensity& rho_bar) {
    require_same_grid(rho.grid, v.grid, "virial_check");
    require_same_grid(rho.grid, rho_bar.grid, "virial_check");
    VelocityField g = wasserstein_gradient_single(rho, rho_bar);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
        if (rho.values[i] <= kDensityFloor) continue;
        double v2 = 0.0, g2 = 0.0;
        for (int a = 0; a < rho.grid.dimension(); ++a) {
            double vi = v.components[static_cast<std::size_t>(a)][i];
            double gi = g.components[static_cast<std::size_t>(a)][i];
            v2 += vi * vi;
            g2 += gi * gi;
        }
        lhs += 0.5 * v2 * rho.values[i];
        rhs += 0.5 * g2 * rho.values[i];
    }
    double vol = rho.grid.cell_volume();
    return {lhs * vol, rhs * vol};
}

struct FpGapReport {
    double optimal_total = 0.0;
    std::vector<double> samples;
    double gap = 0.0;
    int flagged = 0;  // CFL-violating samples dropped
};

namespace detail {

/// One feedback-plus-bump transport; returns the fluid action total or NaN when
/// a CFL rejection drops the sample. A null bump runs the plain feedback flow,
/// which is the gap's baseline (so zero magnitude gives a gap of exactly zero).
inline double transported_fluid_total(const GridDensity& rho0, const GridDensity& rho_bar,
                                      double T, double dt, const BumpField* bump,
                                      double magnitude) {
    const auto nsteps = static_cast<std::size_t>(std::llround(std::ceil(T / dt - 1e-12)));
    const double h = T / static_cast<double>(nsteps);
    GridDensity rho = rho0;
    double running = 0.0, phi_prev = 0.0;
    auto velocity_at = [&](double t) {
        VelocityField v = wasserstein_gradient_single(rho, rho_bar);
        for (auto& comp : v.components)
            for (double& x : comp) x = -x;
        if (bump) bump->add_to(v, magnitude, t, T);
        return v;
    };
    for (std::size_t s = 0; s < nsteps; ++s) {
        double t = static_cast<double>(s) * h;
        VelocityField v = velocity_at(t + 0.5 * h);
        double phi = fluid_action_integrand(rho, v, rho_bar);
        if (s > 0) running += 0.5 * (phi_prev + phi) * h;
        phi_prev = phi;
        try {
            rho = continuity_step(rho, v, h);
        } catch (const std::runtime_error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    }
    VelocityField v_end = velocity_at(T);
    double phi_end = fluid_action_integrand(rho, v_end, rho_bar);
    running += 0.5 * (phi_prev + phi_end) * h;
    return running + relative_entropy(rho, rho_bar);
}

}  // namespace detail

/// Optimality certificate on Wasserstein space: the feedback flow's fluid action
/// against m runs transported by continuity_step with the feedback velocity
/// perturbed by seeded space-time bumps. The baseline runs through the identical
/// transport path with no bump, so the certificate compares like with like.
inline FpGapReport optimality_gap_fp(const GridDensity& rho0, const Potential& pot, double T,
                                     double dt, int perturbations, double magnitude,
                                     std::uint64_t seed) {
    GridDensity rho_bar = boltzmann_density(pot, rho0.grid);
    FpGapReport out;
    out.optimal_total = detail::transported_fluid_total(rho0, rho_bar, T, dt, nullptr, 0.0);
    require(std::isfinite(out.optimal_total), "optimality_gap_fp: baseline flow violated CFL");

    Rng rng(seed);
    for (int p = 0; p < perturbations; ++p) {
        BumpField bump(rho0.grid, rng);
        double total = detail::transported_fluid_total(rho0, rho_bar, T, dt, &bump, magnitude);
        if (std::isnan(total)) {
            ++out.flagged;
            continue;
        }
        out.samples.push_back(total);
    }
    double best = std::numeric_limits<double>::infinity();
    for (double s : out.samples) best = std::min(best, s);
    out.gap = best - out.optimal_total;
    return out;
}

}  // namespace gradflow
