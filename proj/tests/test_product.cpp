#include <catch2/catch_amalgamated.hpp>

#include "gradflow/product.hpp"

using namespace gradflow;
using Catch::Approx;

namespace {

Grid wide_grid() { return Grid::make1d(-12.0, 12.0, 2401); }

ProductState shifted_pair() {
    Grid g = wide_grid();
    return ProductState(make_gaussian(g, {1.0}, {1.0}), make_gaussian(g, {0.0}, {1.0}));
}

// coarse version of the two-Gaussian equilibration case
ProductState coarse_desk() {
    Grid g = Grid::make1d(-8.0, 8.0, 401);
    return ProductState(make_gaussian(g, {-1.0}, {0.5}), make_gaussian(g, {1.0}, {0.5}));
}

}  // namespace

TEST_CASE("shared flux vanishes at equal densities") {
    Grid g = Grid::make1d(-6.0, 6.0, 301);
    GridDensity d = make_gaussian(g, {0.3}, {0.9});
    ProductState st(d, d);
    SharedFlux J = shared_flux(st);
    for (double j : J.flux[0]) CHECK(std::fabs(j) < 1e-12);
}

TEST_CASE("shared flux matches rho_tilde times the unit log-gradient") {
    ProductState st = shifted_pair();
    SharedFlux J = shared_flux(st);
    const Grid& g = st.grid();
    // grad log ratio = 1, so J should be the face value of rho_tilde
    for (std::size_t i = 300; i + 300 < g.size(); i += 60) {
        double face_rt = 0.5 * (st.rho_tilde.values[i] + st.rho_tilde.values[i + 1]);
        CHECK(J.flux[0][i] == Approx(face_rt).margin(1e-3));
    }
}

TEST_CASE("the three flux forms agree to roundoff on positive pairs") {
    Grid g = Grid::make1d(-8.0, 8.0, 501);
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        double m1 = rng.uniform() - 0.5, m2 = rng.uniform() - 0.5;
        double v1 = 0.7 + rng.uniform(), v2 = 0.7 + rng.uniform();
        ProductState st(make_gaussian(g, {m1}, {v1}), make_gaussian(g, {m2}, {v2}));
        SharedFlux J = shared_flux(st, true);
        CHECK(J.max_form_deviation < 1e-8);
    }
}

TEST_CASE("shared flux rejects support violations") {
    Grid g = Grid::make1d(-5.0, 5.0, 201);
    GridDensity rt = make_gaussian(g, {0.0}, {1.0});
    GridDensity r{g, std::vector<double>(g.size(), 0.0)};
    for (std::size_t i = 0; i < g.size() / 2; ++i) r.values[i] = 1.0;
    r.normalize();
    // bypass the normalized-state constructor checks: same mass, half support
    ProductState st(rt, r);
    CHECK_THROWS_AS(shared_flux(st), std::invalid_argument);
}

TEST_CASE("product step holds equal pairs fixed and conserves structure") {
    Grid g = Grid::make1d(-6.0, 6.0, 301);
    GridDensity d = make_gaussian(g, {0.0}, {1.0});
    ProductState st(d, d);
    ProductState next = product_step(st, 1e-5);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(std::fabs(next.rho_tilde.values[i] - d.values[i]) < 1e-12);
        CHECK(std::fabs(next.rho.values[i] - d.values[i]) < 1e-12);
    }

    ProductState pair = shifted_pair();
    SharedFlux J = shared_flux(pair);
    double bound = product_stability_bound(pair.grid(), J.max_face_ratio);
    ProductState after = product_step(pair, 0.5 * bound);
    CHECK(after.sum_drift() < 1e-14);
    // antisymmetric updates node by node
    for (std::size_t i = 0; i < pair.grid().size(); ++i) {
        double dt_t = after.rho_tilde.values[i] - pair.rho_tilde.values[i];
        double dt_r = after.rho.values[i] - pair.rho.values[i];
        CHECK(std::fabs(dt_t + dt_r) < 1e-15);
    }
    CHECK(std::fabs(after.rho_tilde.mass() - 1.0) < 1e-12);
    CHECK(std::fabs(after.rho.mass() - 1.0) < 1e-12);

    CHECK_THROWS_WITH(product_step(pair, 10.0 * bound),
                      Catch::Matchers::ContainsSubstring("stability"));
}

TEST_CASE("product step works on 2d grids") {
    Grid g = Grid::make2d(-5.0, 5.0, 64, -5.0, 5.0, 64);
    ProductState st(make_gaussian(g, {-0.5, 0.0}, {0.8, 1.0}),
                    make_gaussian(g, {0.5, 0.2}, {1.0, 0.7}));
    SharedFlux J = shared_flux(st);
    double bound = product_stability_bound(g, J.max_face_ratio);
    ProductState after = product_step(st, 0.9 * bound);
    CHECK(after.sum_drift() < 1e-14);
    CHECK(std::fabs(after.rho_tilde.mass() - 1.0) < 1e-12);
}

TEST_CASE("reff rate closed form and split agreement") {
    ProductState st = shifted_pair();

    // quadrature oracle for int rho_tilde^2 / rho dx = e^{m^2} at m = 1
    double ratio_integral = 0.0;
    const Grid& g = st.grid();
    for (std::size_t i = 0; i < g.size(); ++i)
        ratio_integral +=
            st.rho_tilde.values[i] * st.rho_tilde.values[i] / st.rho.values[i] * g.cell_volume();
    CHECK(ratio_integral == Approx(std::exp(1.0)).margin(1e-3));

    ReffRate rr = reff_rate(st);
    CHECK(rr.combined == Approx(-(1.0 + std::exp(1.0))).margin(1e-3));
    CHECK(std::fabs(rr.combined - rr.split) <= 1e-6 * std::fabs(rr.combined));
    CHECK(rr.fisher == Approx(1.0).margin(1e-4));

    GridDensity d = make_gaussian(g, {0.0}, {1.0});
    ProductState eq(d, d);
    CHECK(reff_rate(eq).combined == Approx(0.0).margin(1e-12));
}

TEST_CASE("reff rate dominates the single-flow dissipation") {
    Grid g = Grid::make1d(-8.0, 8.0, 601);
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        double m1 = rng.uniform() - 0.5, m2 = rng.uniform() - 0.5;
        double v1 = 0.6 + rng.uniform(), v2 = 0.6 + rng.uniform();
        ProductState st(make_gaussian(g, {m1}, {v1}), make_gaussian(g, {m2}, {v2}));
        ReffRate rr = reff_rate(st);
        CHECK(rr.combined <= -rr.fisher + 1e-12);
    }
}

TEST_CASE("pt rate consistency") {
    ProductState st = shifted_pair();
    const Grid& g = st.grid();

    VelocityField same = VelocityField::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i) same.components[0][i] = 0.3;
    CHECK(pt_rate(st, same, same) == 0.0);

    auto [vt, v] = optimal_velocities_product(st);
    ReffRate rr = reff_rate(st);
    CHECK(std::fabs(pt_rate(st, vt, v) - rr.combined) <= 1e-6 * std::fabs(rr.combined));

    // transported finite difference against the rate under generic fields
    VelocityField gen_t = VelocityField::zero(g), gen_r = VelocityField::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double x = g.coordinate(i, 0);
        gen_t.components[0][i] = 0.6 * std::sin(0.4 * x);
        gen_r.components[0][i] = -0.5 * std::cos(0.7 * x);
    }
    double rate = pt_rate(st, gen_t, gen_r);
    const double dt = 1e-6;
    GridDensity rt1 = continuity_step(st.rho_tilde, gen_t, dt);
    GridDensity r1 = continuity_step(st.rho, gen_r, dt);
    double fd = (relative_entropy(rt1, r1) - relative_entropy(st.rho_tilde, st.rho)) / dt;
    CHECK(fd == Approx(rate).margin(1e-2));
}

TEST_CASE("coupled run equilibrates to the conserved-sum average") {
    ProductState st = coarse_desk();
    ProductRunResult run = product_flow_run(st, 30.0, 1e-3, 1e-6);
    CHECK(run.report.stopped_by_fisher);
    const Grid& g = st.grid();
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double avg = 0.5 * st.initial_sum[i];
        worst = std::max(worst, std::fabs(run.final_state.rho_tilde.values[i] - avg));
        worst = std::max(worst, std::fabs(run.final_state.rho.values[i] - avg));
    }
    CHECK(worst < 5e-3);

    // structural invariants over the whole run
    for (double d : run.report.sum_drift_series) CHECK(d <= 1e-12);
    for (double m : run.report.mass_tilde_series) CHECK(m == Approx(1.0).margin(1e-12));
    for (double m : run.report.mass_series) CHECK(m == Approx(1.0).margin(1e-12));
    for (std::size_t k = 1; k < run.report.divergence_series.size(); ++k)
        CHECK(run.report.divergence_series[k] <=
              run.report.divergence_series[k - 1] + 1e-8);
}

TEST_CASE("identical initial pair stays constant along the run") {
    Grid g = Grid::make1d(-6.0, 6.0, 301);
    GridDensity d = make_gaussian(g, {0.2}, {0.8});
    ProductRunResult run = product_flow_run(ProductState(d, d), 0.5, 1e-4);
    for (const auto& [rt, r] : run.snapshots)
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(std::fabs(rt.values[i] - d.values[i]) < 1e-12);
            CHECK(std::fabs(r.values[i] - d.values[i]) < 1e-12);
        }
}

TEST_CASE("product action of the coupled flow equals the initial divergence") {
    ProductState st = coarse_desk();
    ProductRunResult run = product_flow_run(st, 1.0, 1e-3);
    double total = run.report.action_running.back() + run.report.terminal_divergence;
    CHECK(total == Approx(run.report.divergence_series.front()).margin(2e-2));
}

TEST_CASE("product action closed forms on frozen pairs") {
    Grid g = wide_grid();
    GridDensity n11 = make_gaussian(g, {1.0}, {1.0});
    GridDensity n01 = make_gaussian(g, {0.0}, {1.0});

    // equal pair, zero velocities: total vanishes
    std::vector<std::pair<GridDensity, GridDensity>> eq(6, {n01, n01});
    std::vector<VelocityField> zeros(6, VelocityField::zero(g));
    ProductCost c0 = product_action(eq, zeros, zeros, 0.2);
    CHECK(std::fabs(c0.total) < 1e-8);

    // frozen shifted pair: running = T/2 (fisher + int |grad(rt/r)|^2 r), terminal = 1/2.
    // quadrature oracle for the second integral: int e^{2x-1} N(0,1) dx = e
    double oracle = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        oracle += std::exp(2.0 * g.coordinate(i, 0) - 1.0) * n01.values[i] * g.cell_volume();
    CHECK(oracle == Approx(std::exp(1.0)).margin(1e-3));

    std::vector<std::pair<GridDensity, GridDensity>> frozen(6, {n11, n01});
    ProductCost c1 = product_action(frozen, zeros, zeros, 0.2);
    CHECK(c1.running == Approx(0.5 * (1.0 + std::exp(1.0))).margin(2e-2));
    CHECK(c1.terminal == Approx(0.5).margin(1e-4));
}

TEST_CASE("perturbed velocity pairs never beat the coupled descent") {
    ProductState st = coarse_desk();
    ProductGapReport gap = optimality_gap_product(st, 1.0, 1e-3, 5, 0.2, 17);
    CHECK(gap.gap >= -1e-2);
    CHECK(static_cast<int>(gap.samples.size()) + gap.flagged == 5);

    ProductGapReport zero = optimality_gap_product(st, 0.5, 1e-3, 2, 0.0, 17);
    CHECK(zero.gap == 0.0);
}

TEST_CASE("one hand-built perturbation matches direct quadrature on a frozen pair") {
    // single sample with a constant bump field 0.5 against hand quadrature
    Grid g = wide_grid();
    GridDensity n11 = make_gaussian(g, {1.0}, {1.0});
    GridDensity n01 = make_gaussian(g, {0.0}, {1.0});
    ProductState st(n11, n01);
    VelocityField vt = VelocityField::zero(g), v = VelocityField::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i) vt.components[0][i] = 0.5;
    double phi = product_action_integrand(st, vt, v);
    // 1/2 [ 0.25 + fisher + int |grad(rt/r)|^2 r ] with the Gaussian oracles
    double expect = 0.5 * (0.25 + 1.0 + std::exp(1.0));
    CHECK(phi == Approx(expect).margin(1e-3));
}
