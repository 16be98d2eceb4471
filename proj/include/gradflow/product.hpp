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
#include "gradflow/fokker_planck.hpp"
#include "gradflow/functionals.hpp"
#include "gradflow/grid.hpp"

namespace gradflow {

/// Pair of densities evolving on the product Wasserstein space. The pointwise
/// sum at construction time is kept for conservation checks: the coupled flow
/// moves density between the components through a single shared flux, so
/// rho_tilde + rho is invariant up to roundoff.
struct ProductState {
    GridDensity rho_tilde;
    GridDensity rho;
    std::vector<double> initial_sum;

    ProductState(GridDensity rt, GridDensity r) : rho_tilde(std::move(rt)), rho(std::move(r)) {
        require_same_grid(rho_tilde.grid, rho.grid, "ProductState");
        require(nearly_equal(rho_tilde.mass(), 1.0, 1e-9), "ProductState: rho_tilde not normalized");
        require(nearly_equal(rho.mass(), 1.0, 1e-9), "ProductState: rho not normalized");
        initial_sum.resize(rho.values.size());
        for (std::size_t i = 0; i < initial_sum.size(); ++i)
            initial_sum[i] = rho_tilde.values[i] + rho.values[i];
    }

    const Grid& grid() const { return rho.grid; }

    double sum_drift() const {
        double d = 0.0;
        for (std::size_t i = 0; i < initial_sum.size(); ++i)
            d = std::max(d, std::fabs(rho_tilde.values[i] + rho.values[i] - initial_sum[i]));
        return d;
    }
};

/// Shared face flux of the coupled steepest descent, one array per axis indexed
/// by the left cell of each interior face.
///
/// The primary form is J = [d rho_tilde - sbar d rho] / h with sbar the
/// arithmetic mean of the nodal ratios s = rho_tilde/rho. Under that choice the
/// discrete product rule d(s rho) = sbar d rho + rhobar d s is exact, so the two
/// textbook faces rho_face grad(rt/r) and rt_face grad log(rt/r) (the latter with
/// the log-mean face ratio) coincide with J identically; the agreement diagnostic
/// reports their worst relative deviation, which is pure roundoff on positive pairs.
struct SharedFlux {
    std::vector<std::vector<double>> flux;  // [axis][left cell]
    double max_face_ratio = 0.0;            // max sbar over live faces
    double max_form_deviation = 0.0;        // relative, across the three forms
};

namespace detail {

inline double nodal_ratio(double rt, double r) { return floored(rt) / floored(r); }

/// Donor limit: no face may move more than this fraction of the donor cell's
/// content per step and axis. In strongly graded tails the linear stability
/// bound still admits transfers larger than a near-vacuum donor cell holds;
/// unlimited, such a step dips the cell negative, the floor then turns its
/// ratio into garbage and the flux feedback diverges. The limiter keeps both
/// components strictly positive and is inactive wherever transfers are small
/// against the local densities, i.e. everywhere that carries real mass.
inline double donor_limit_fraction(int dimension) { return 0.5 / (2.0 * dimension); }

/// Face flux J = rho_face * grad(rt/r), with rho_face the arithmetic face mean
/// and the ratio difference taken between capped nodal ratios. By the exact
/// half-sum product rule this equals the raw form grad(rt) - (rt/r) grad(r) on
/// uncapped positive nodes, but unlike that form it never subtracts two large
/// poorly-resolved terms: in exponentially graded tails the raw form loses its
/// cancellation to truncation error and can even flip the flux sign, draining
/// cells negative, while rho_face * delta(s) keeps the sign structurally.
inline SharedFlux compute_flux(const ProductState& state, bool with_diagnostics,
                               bool support_checked) {
    if (support_checked) check_support(state.rho_tilde, state.rho, "shared_flux");
    const Grid& g = state.grid();
    const auto& rt = state.rho_tilde.values;
    const auto& r = state.rho.values;
    SharedFlux out;
    out.flux.assign(static_cast<std::size_t>(g.dimension()), std::vector<double>(g.size(), 0.0));
    std::vector<double> s(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) s[i] = nodal_ratio(rt[i], r[i]);
    for (int a = 0; a < g.dimension(); ++a) {
        const double h = g.axis(a).spacing();
        auto& fa = out.flux[static_cast<std::size_t>(a)];
        for_each_face(g, a, [&](std::size_t L, std::size_t R) {
            bool dead = rt[L] <= kDensityFloor && rt[R] <= kDensityFloor &&
                        r[L] <= kDensityFloor && r[R] <= kDensityFloor;
            if (dead) return;
            double rbar = std::max(0.5 * (r[L] + r[R]), 0.0);
            double j = rbar * (s[R] - s[L]) / h;
            fa[L] = j;
            out.max_face_ratio = std::max(out.max_face_ratio, 0.5 * (s[L] + s[R]));
            if (with_diagnostics && rt[L] > kDensityFloor && rt[R] > kDensityFloor &&
                r[L] > kDensityFloor && r[R] > kDensityFloor) {
                double ds = s[R] - s[L];
                double dls = std::log(s[R]) - std::log(s[L]);
                double logmean = std::fabs(dls) > 1e-14 ? ds / dls : s[L];
                double j1 = (logmean * rbar) * dls / h;  // rt grad log(rt/r)
                double j2 = ((rt[R] - rt[L]) - 0.5 * (s[L] + s[R]) * (r[R] - r[L])) / h;
                double scale = std::max({std::fabs(j), std::fabs(j1), std::fabs(j2), 1e-300});
                out.max_form_deviation =
                    std::max({out.max_form_deviation, std::fabs(j1 - j) / scale,
                              std::fabs(j2 - j) / scale});
            }
        });
    }
    return out;
}

/// Per-cell increments of dt * div J for the donor-limited shared flux; the
/// caller applies +upd to rho_tilde and -upd to rho. A positive face flux J
/// hands rho_tilde density from the right cell to the left one (and rho the
/// other way), so the per-face cap is the donor fraction of whichever cell
/// each component is drawn from.
inline void accumulate_limited_update(const Grid& g, const SharedFlux& J, double dt,
                                      const std::vector<double>& rt,
                                      const std::vector<double>& r, std::vector<double>& upd) {
    std::fill(upd.begin(), upd.end(), 0.0);
    const double frac = donor_limit_fraction(g.dimension());
    for (int a = 0; a < g.dimension(); ++a) {
        const double h = g.axis(a).spacing();
        const auto& fa = J.flux[static_cast<std::size_t>(a)];
        for_each_face(g, a, [&](std::size_t L, std::size_t R) {
            double inc = dt / h * fa[L];
            double cap = inc >= 0.0 ? frac * std::min(rt[R], r[L]) : frac * std::min(rt[L], r[R]);
            cap = std::max(cap, 0.0);
            inc = std::clamp(inc, -cap, cap);
            upd[L] += inc;
            upd[R] -= inc;
        });
    }
}

}  // namespace detail

inline SharedFlux shared_flux(const ProductState& state, bool with_diagnostics = false) {
    return detail::compute_flux(state, with_diagnostics, true);
}

/// Largest explicit step the coupled update tolerates: the pair-difference mode
/// diffuses with coefficient 1 + rho_tilde/rho, so the bound tracks the worst
/// live face ratio and is recomputed every step by the adaptive driver.
inline double product_stability_bound(const Grid& g, double max_face_ratio) {
    double s = 0.0;
    for (int a = 0; a < g.dimension(); ++a) {
        double h = g.axis(a).spacing();
        s += 1.0 / (h * h);
    }
    return 0.4 / ((1.0 + max_face_ratio) * s);
}

/// One explicit step of the coupled system: both components are updated with the
/// identical discrete divergence of the shared flux, with opposite signs. The
/// stepping path relies on the floor/cap policy rather than the support check:
/// the scheme itself creates roundoff-deep tail values that the strict check
/// would misread as genuine absolute-continuity failures.
inline ProductState product_step(const ProductState& state, double dt) {
    require(dt > 0.0, "product_step: dt must be positive");
    SharedFlux J = detail::compute_flux(state, false, false);
    double bound = product_stability_bound(state.grid(), J.max_face_ratio);
    if (dt > bound)
        throw std::runtime_error("product_step: dt " + std::to_string(dt) +
                                 " exceeds the ratio-dependent stability bound " +
                                 std::to_string(bound));
    ProductState next = state;
    const Grid& g = state.grid();
    std::vector<double> upd(g.size());
    detail::accumulate_limited_update(g, J, dt, state.rho_tilde.values, state.rho.values, upd);
    for (std::size_t i = 0; i < g.size(); ++i) {
        next.rho_tilde.values[i] += upd[i];
        next.rho.values[i] -= upd[i];
    }
    detail::check_no_negative(next.rho_tilde.values, "product_step");
    detail::check_no_negative(next.rho.values, "product_step");
    return next;
}

struct ReffRate {
    double combined = 0.0;  // -int (1 + rt/r) ||grad log(rt/r)||^2 rt
    double split = 0.0;     // -[ int ||grad log(rt/r)||^2 rt + int ||grad(rt/r)||^2 r ]
    double fisher = 0.0;    // int ||grad log(rt/r)||^2 rt
};

/// Entropy production rate of the coupled steepest descent. The split form uses
/// grad(rt/r) = s grad log(rt/r) algebraically, so combined and split agree to
/// roundoff; nodes with either density floored are excluded from the quadrature.
inline ReffRate reff_rate(const ProductState& state) {
    detail::check_support(state.rho_tilde, state.rho, "reff_rate");
    VelocityField g = wasserstein_gradient_single(state.rho_tilde, state.rho);
    const Grid& grid = state.grid();
    ReffRate out;
    double combined = 0.0, split = 0.0, fisher = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double rt = state.rho_tilde.values[i], r = state.rho.values[i];
        if (rt <= kDensityFloor || r <= kDensityFloor) continue;
        double s = rt / r;
        double g2 = 0.0;
        for (int a = 0; a < grid.dimension(); ++a) {
            double gi = g.components[static_cast<std::size_t>(a)][i];
            g2 += gi * gi;
        }
        combined += (1.0 + s) * g2 * rt;
        split += g2 * rt + (s * s * g2) * r;
        fisher += g2 * rt;
    }
    double vol = grid.cell_volume();
    out.combined = -combined * vol;
    out.split = -split * vol;
    out.fisher = fisher * vol;
    return out;
}

/// d/dt D(rho_tilde || rho) for a generic pair of transport velocities:
/// int grad log(rt/r) . (vt - v) rt dx.
inline double pt_rate(const ProductState& state, const VelocityField& vt, const VelocityField& v) {
    require_same_grid(state.grid(), vt.grid, "pt_rate");
    require_same_grid(state.grid(), v.grid, "pt_rate");
    VelocityField g = wasserstein_gradient_single(state.rho_tilde, state.rho);
    double acc = 0.0;
    for (std::size_t i = 0; i < state.grid().size(); ++i) {
        double rt = state.rho_tilde.values[i];
        if (rt <= kDensityFloor || state.rho.values[i] <= kDensityFloor) continue;
        for (int a = 0; a < state.grid().dimension(); ++a) {
            std::size_t aa = static_cast<std::size_t>(a);
            acc += g.components[aa][i] * (vt.components[aa][i] - v.components[aa][i]) * rt;
        }
    }
    return acc * state.grid().cell_volume();
}

/// Optimal feedback velocities of the product problem: vt = -grad log(rt/r),
/// v = +grad(rt/r) (formed as s grad log(rt/r)). Vacuum nodes carry none and the
/// ratio is the floored nodal ratio, matching the flux construction.
inline std::pair<VelocityField, VelocityField> optimal_velocities_product(const ProductState& state) {
    VelocityField g = wasserstein_gradient_single(state.rho_tilde, state.rho);
    VelocityField vt = VelocityField::zero(state.grid());
    VelocityField v = VelocityField::zero(state.grid());
    for (std::size_t i = 0; i < state.grid().size(); ++i) {
        double rt = state.rho_tilde.values[i], r = state.rho.values[i];
        if (rt <= kDensityFloor || r <= kDensityFloor) continue;
        double s = detail::nodal_ratio(rt, r);
        for (int a = 0; a < state.grid().dimension(); ++a) {
            std::size_t aa = static_cast<std::size_t>(a);
            vt.components[aa][i] = -g.components[aa][i];
            v.components[aa][i] = s * g.components[aa][i];
        }
    }
    return {std::move(vt), std::move(v)};
}

struct ProductReport {
    std::vector<double> times;
    std::vector<double> divergence_series;
    std::vector<double> reff_rate_series;
    std::vector<double> fisher_series;
    std::vector<double> sum_drift_series;
    std::vector<double> mass_tilde_series;
    std::vector<double> mass_series;
    std::vector<double> action_running;
    double terminal_divergence = 0.0;
    double stop_time = 0.0;
    bool stopped_by_fisher = false;
    double max_step_antisymmetry = 0.0;  // worst node-wise |d rho_tilde + d rho| per step
    std::size_t steps = 0;
};

struct ProductRunResult {
    std::vector<std::pair<GridDensity, GridDensity>> snapshots;
    ProductReport report;
    ProductState final_state;
};

namespace detail {

struct PairScratch {
    std::vector<double> s, ls, g2;
    double divergence = 0.0, reff = 0.0, fisher = 0.0, max_ratio = 0.0;

    void refresh(const Grid& grid, const std::vector<double>& rt, const std::vector<double>& r) {
        const std::size_t n = grid.size();
        s.resize(n);
        ls.resize(n);
        g2.assign(n, 0.0);
        max_ratio = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = nodal_ratio(rt[i], r[i]);
            ls[i] = std::log(s[i]);
            max_ratio = std::max(max_ratio, s[i]);
        }
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (rt[i] > kDensityFloor) d += rt[i] * ls[i];
        divergence = d * grid.cell_volume();
        for (int a = 0; a < grid.dimension(); ++a) {
            auto da = nodal_derivative(grid, ls, a);
            for (std::size_t i = 0; i < n; ++i) g2[i] += da[i] * da[i];
        }
        double cr = 0.0, fi = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (rt[i] <= kDensityFloor || r[i] <= kDensityFloor) continue;
            cr += (1.0 + s[i]) * g2[i] * rt[i];
            fi += g2[i] * rt[i];
        }
        reff = -cr * grid.cell_volume();
        fisher = fi * grid.cell_volume();
    }
};

}  // namespace detail

/// Adaptive explicit integration of the coupled steepest descent. Each step uses
/// min(dt_max, ratio-dependent stability bound), halving further if the
/// divergence fails to decrease (slack 1e-8). The running action is the per-step
/// trapezoid of -reff_rate, which is the product action integrand of the optimal
/// feedback velocities evaluated along the realized flow. An optional Fisher
/// threshold stops equilibration runs early.
inline ProductRunResult product_flow_run(const ProductState& state0, double T, double dt_max,
                                         double fisher_stop = 0.0) {
    require(T > 0.0 && dt_max > 0.0, "product_flow_run: need positive T and dt");
    ProductState state = state0;
    const Grid& grid = state.grid();
    detail::PairScratch cur, nxt;
    cur.refresh(grid, state.rho_tilde.values, state.rho.values);

    ProductRunResult result{{}, {}, state};
    ProductReport& rep = result.report;
    double t = 0.0, action = 0.0;
    const double snap_interval = T / 100.0;
    double next_snap = 0.0;

    auto record = [&]() {
        rep.times.push_back(t);
        rep.divergence_series.push_back(cur.divergence);
        rep.reff_rate_series.push_back(cur.reff);
        rep.fisher_series.push_back(cur.fisher);
        rep.sum_drift_series.push_back(state.sum_drift());
        rep.mass_tilde_series.push_back(state.rho_tilde.mass());
        rep.mass_series.push_back(state.rho.mass());
        rep.action_running.push_back(action);
        result.snapshots.emplace_back(state.rho_tilde, state.rho);
    };
    record();
    next_snap = snap_interval;

    std::vector<double> upd(grid.size());
    while (t < T) {
        SharedFlux J = detail::compute_flux(state, false, false);
        double bound = product_stability_bound(grid, J.max_face_ratio);
        double dt = std::min({dt_max, bound, T - t});
        int halvings = 0;
        for (;;) {
            detail::accumulate_limited_update(grid, J, dt, state.rho_tilde.values,
                                              state.rho.values, upd);
            ProductState trial = state;
            double anti = 0.0;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                double before_t = trial.rho_tilde.values[i];
                double before_r = trial.rho.values[i];
                trial.rho_tilde.values[i] = before_t + upd[i];
                trial.rho.values[i] = before_r - upd[i];
                anti = std::max(anti, std::fabs((trial.rho_tilde.values[i] - before_t) +
                                                (trial.rho.values[i] - before_r)));
            }
            nxt.refresh(grid, trial.rho_tilde.values, trial.rho.values);
            if (nxt.divergence <= cur.divergence + 1e-8) {
                rep.max_step_antisymmetry = std::max(rep.max_step_antisymmetry, anti);
                detail::check_no_negative(trial.rho_tilde.values, "product_flow_run");
                detail::check_no_negative(trial.rho.values, "product_flow_run");
                action += 0.5 * dt * (-cur.reff - nxt.reff);
                state = std::move(trial);
                std::swap(cur, nxt);
                t += dt;
                ++rep.steps;
                break;
            }
            if (++halvings > 60)
                throw std::runtime_error(
                    "product_flow_run: divergence kept increasing after 60 halvings at t = " +
                    std::to_string(t));
            dt *= 0.5;
        }
        bool stop = fisher_stop > 0.0 && cur.fisher < fisher_stop;
        if (t >= next_snap - 1e-15 || t >= T || stop) {
            record();
            while (next_snap <= t + 1e-15) next_snap += snap_interval;
        }
        if (stop) {
            rep.stopped_by_fisher = true;
            break;
        }
    }
    rep.stop_time = t;
    rep.terminal_divergence = cur.divergence;
    result.final_state = state;
    return result;
}

struct ProductCost {
    double running = 0.0;
    double terminal = 0.0;
    double total = 0.0;
};

inline double product_action_integrand(const ProductState& state, const VelocityField& vt,
                                       const VelocityField& v) {
    VelocityField g = wasserstein_gradient_single(state.rho_tilde, state.rho);
    const Grid& grid = state.grid();
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double rt = state.rho_tilde.values[i], r = state.rho.values[i];
        double kinetic = 0.0;
        for (int a = 0; a < grid.dimension(); ++a) {
            std::size_t aa = static_cast<std::size_t>(a);
            double vti = vt.components[aa][i], vi = v.components[aa][i];
            kinetic += vti * vti * rt + vi * vi * r;
        }
        acc += kinetic;
        if (rt > kDensityFloor && r > kDensityFloor) {
            double s = rt / r;
            double g2 = 0.0;
            for (int a = 0; a < grid.dimension(); ++a) {
                double gi = g.components[static_cast<std::size_t>(a)][i];
                g2 += gi * gi;
            }
            acc += g2 * rt + (s * s * g2) * r;
        }
    }
    return 0.5 * acc * grid.cell_volume();
}

/// Action of the two-velocity steering problem over an aligned snapshot series:
/// running integrand 1/2 [ ||vt||^2 rt + ||v||^2 r + ||grad log(rt/r)||^2 rt +
/// ||grad(rt/r)||^2 r ], terminal D(rt_1 || r_1). Trapezoid in time.
inline ProductCost product_action(const std::vector<std::pair<GridDensity, GridDensity>>& snapshots,
                                  const std::vector<VelocityField>& vt_series,
                                  const std::vector<VelocityField>& v_series, double dt) {
    require(!snapshots.empty() && snapshots.size() == vt_series.size() &&
                snapshots.size() == v_series.size(),
            "product_action: series must align");
    ProductCost cost;
    std::vector<double> phi(snapshots.size());
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
        ProductState st(snapshots[k].first, snapshots[k].second);
        require_same_grid(st.grid(), vt_series[k].grid, "product_action");
        require_same_grid(st.grid(), v_series[k].grid, "product_action");
        phi[k] = product_action_integrand(st, vt_series[k], v_series[k]);
    }
    for (std::size_t k = 0; k + 1 < snapshots.size(); ++k)
        cost.running += 0.5 * (phi[k] + phi[k + 1]) * dt;
    GridDensity rt = snapshots.back().first;
    GridDensity r = snapshots.back().second;
    cost.terminal = relative_entropy(rt, r);
    cost.total = cost.running + cost.terminal;
    return cost;
}

struct ProductGapReport {
    double optimal_total = 0.0;
    std::vector<double> samples;
    double gap = 0.0;
    int flagged = 0;
};

namespace detail {

/// One pair of feedback-plus-bump transports; NaN when a CFL rejection drops the
/// sample. Null bumps run the plain feedback transport (the gap baseline).
/// The per-step work shares a single log-ratio gradient pass between the
/// velocity fields and the action integrand.
inline double transported_product_total(const ProductState& state0, double T, double dt_max,
                                        const BumpField* bump_t, const BumpField* bump_r,
                                        double magnitude) {
    const Grid& grid = state0.grid();
    ProductState state = state0;
    const std::size_t n = grid.size();
    const int dim = grid.dimension();
    std::vector<double> ls(n);
    VelocityField g = VelocityField::zero(grid);
    VelocityField vt = VelocityField::zero(grid);
    VelocityField v = VelocityField::zero(grid);

    double t = 0.0, running = 0.0;
    double phi_prev = 0.0, dt_prev = 0.0;
    bool first = true;

    // refreshes g, vt, v for the current state and returns (phi, smax, cfl_per_dt)
    auto prepare = [&](double bump_time) {
        const auto& rt = state.rho_tilde.values;
        const auto& r = state.rho.values;
        for (std::size_t i = 0; i < n; ++i)
            ls[i] = std::log(floored(rt[i])) - std::log(floored(r[i]));
        for (int a = 0; a < dim; ++a)
            g.components[static_cast<std::size_t>(a)] = nodal_derivative(grid, ls, a);
        double phi = 0.0, smax = 0.0, cfl_per_dt = 0.0;
        std::vector<double> vmax(static_cast<std::size_t>(dim), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            bool live = rt[i] > kDensityFloor && r[i] > kDensityFloor;
            double s = live ? rt[i] / r[i] : 0.0;
            if (live) smax = std::max(smax, s);
            double g2 = 0.0;
            for (int a = 0; a < dim; ++a) {
                std::size_t aa = static_cast<std::size_t>(a);
                double gi = live ? g.components[aa][i] : 0.0;
                vt.components[aa][i] = live ? -gi : 0.0;
                v.components[aa][i] = live ? s * gi : 0.0;
                g2 += gi * gi;
            }
            if (live) phi += g2 * rt[i] + (s * s * g2) * r[i];
        }
        if (bump_t) bump_t->add_to(vt, magnitude, bump_time, T);
        if (bump_r) bump_r->add_to(v, magnitude, bump_time, T);
        for (std::size_t i = 0; i < n; ++i) {
            double kin = 0.0;
            for (int a = 0; a < dim; ++a) {
                std::size_t aa = static_cast<std::size_t>(a);
                double vti = vt.components[aa][i], vi = v.components[aa][i];
                kin += vti * vti * state.rho_tilde.values[i] + vi * vi * state.rho.values[i];
                vmax[aa] = std::max({vmax[aa], std::fabs(vti), std::fabs(vi)});
            }
            phi += kin;
        }
        for (int a = 0; a < dim; ++a)
            cfl_per_dt += vmax[static_cast<std::size_t>(a)] / grid.axis(a).spacing();
        return std::tuple<double, double, double>(0.5 * phi * grid.cell_volume(), smax,
                                                  cfl_per_dt);
    };

    while (t < T) {
        auto [phi, smax, cfl_per_dt] = prepare(t);
        double bound =
            std::min(cfl_per_dt > 0.0 ? 0.8 / cfl_per_dt : std::numeric_limits<double>::infinity(),
                     product_stability_bound(grid, smax));
        double dt = std::min({dt_max, bound, T - t});
        if (!first) running += 0.5 * (phi_prev + phi) * dt_prev;
        first = false;
        phi_prev = phi;
        dt_prev = dt;
        try {
            GridDensity rt_next = continuity_step(state.rho_tilde, vt, dt);
            GridDensity r_next = continuity_step(state.rho, v, dt);
            state.rho_tilde = std::move(rt_next);
            state.rho = std::move(r_next);
        } catch (const std::runtime_error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        t += dt;
    }
    auto [phi_end, smax_end, cfl_end] = prepare(T);
    (void)smax_end;
    (void)cfl_end;
    running += 0.5 * (phi_prev + phi_end) * dt_prev;
    return running + relative_entropy(state.rho_tilde, state.rho);
}

}  // namespace detail

/// Optimality certificate on the product space: both feedback velocities are
/// perturbed by independent seeded bumps and each component is transported by
/// its own continuity_step; every admissible pair must cost at least the
/// steepest descent's action up to scheme error. The baseline runs the same
/// transport with no bumps so a zero magnitude yields a gap of exactly zero.
inline ProductGapReport optimality_gap_product(const ProductState& state0, double T, double dt_max,
                                               int perturbations, double magnitude,
                                               std::uint64_t seed) {
    ProductGapReport out;
    out.optimal_total =
        detail::transported_product_total(state0, T, dt_max, nullptr, nullptr, 0.0);
    require(std::isfinite(out.optimal_total), "optimality_gap_product: baseline violated CFL");

    Rng rng(seed);
    const Grid& grid = state0.grid();
    for (int p = 0; p < perturbations; ++p) {
        BumpField bump_t(grid, rng);
        BumpField bump_r(grid, rng);
        double total =
            detail::transported_product_total(state0, T, dt_max, &bump_t, &bump_r, magnitude);
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
