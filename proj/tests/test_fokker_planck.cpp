#include <catch2/catch_amalgamated.hpp>

#include "gradflow/fokker_planck.hpp"

using namespace gradflow;
using Catch::Approx;

namespace {

Potential ou_potential(double kT = 1.0) {
    Mat A(1, 1);
    A << 1.0;
    return make_quadratic_potential(A, kT);
}

VelocityField constant_field(const Grid& g, double c) {
    VelocityField v = VelocityField::zero(g);
    for (auto& comp : v.components)
        for (double& x : comp) x = c;
    return v;
}

}  // namespace

TEST_CASE("continuity step with zero velocity is the identity") {
    Grid g = Grid::make1d(-5.0, 5.0, 201);
    GridDensity rho = make_gaussian(g, {0.0}, {1.0});
    GridDensity out = continuity_step(rho, VelocityField::zero(g), 1e-3);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(out.values[i] == rho.values[i]);
}

TEST_CASE("constant transport shifts the mean by c dt") {
    Grid g = Grid::make1d(-5.0, 5.0, 401);
    GridDensity rho = make_gaussian(g, {0.0}, {0.5});
    const double c = 0.8, dt = 1e-3;
    GridDensity out = continuity_step(rho, constant_field(g, c), dt);
    double shift = density_moments_mean(out)[0] - density_moments_mean(rho)[0];
    CHECK(shift == Approx(c * dt).epsilon(0.02));
}

TEST_CASE("continuity step conserves mass and positivity for arbitrary fields") {
    Grid g = Grid::make1d(-4.0, 4.0, 257);
    GridDensity rho = make_gaussian_mixture(g, 0.4, {-1.0}, {0.3}, {1.5}, {0.7});
    VelocityField v = VelocityField::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i)
        v.components[0][i] = std::sin(3.0 * g.coordinate(i, 0));
    GridDensity out = continuity_step(rho, v, 1e-3);
    CHECK(std::fabs(out.mass() - rho.mass()) < 1e-14);
    for (double x : out.values) CHECK(x >= 0.0);

    CHECK_THROWS_WITH(continuity_step(rho, constant_field(g, 100.0), 0.1),
                      Catch::Matchers::ContainsSubstring("CFL"));
}

TEST_CASE("continuity step works on 2d grids") {
    Grid g = Grid::make2d(-3.0, 3.0, 48, -3.0, 3.0, 48);
    GridDensity rho = make_gaussian(g, {0.0, 0.5}, {0.5, 0.8});
    VelocityField v = VelocityField::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        v.components[0][i] = 0.5;
        v.components[1][i] = -0.25;
    }
    GridDensity out = continuity_step(rho, v, 1e-3);
    CHECK(std::fabs(out.mass() - rho.mass()) < 1e-13);
    double sx = density_moments_mean(out)[0] - density_moments_mean(rho)[0];
    double sy = density_moments_mean(out)[1] - density_moments_mean(rho)[1];
    CHECK(sx == Approx(0.5e-3).epsilon(0.05));
    CHECK(sy == Approx(-0.25e-3).epsilon(0.05));
}

TEST_CASE("ou flow reproduces the moment oracle at coarse resolution") {
    Grid g = Grid::make1d(-10.0, 10.0, 801);
    GridDensity rho0 = make_gaussian(g, {2.0}, {0.25});
    auto [snaps, report] = fokker_planck_flow(rho0, ou_potential(), 1.0, 4e-5);
    double mean = density_moments_mean(snaps.back())[0];
    double var = density_moments_variance(snaps.back())[0];
    CHECK(mean == Approx(2.0 * std::exp(-1.0)).margin(5e-3));
    CHECK(var == Approx(1.0 + (0.25 - 1.0) * std::exp(-2.0)).margin(5e-3));
    for (double m : report.mass_series) CHECK(m == Approx(1.0).margin(1e-9));
    // Lyapunov property
    for (std::size_t k = 1; k < report.divergence_series.size(); ++k)
        CHECK(report.divergence_series[k] <= report.divergence_series[k - 1] + 1e-8);
}

TEST_CASE("the Boltzmann density is a fixed point of the flow") {
    Grid g = Grid::make1d(-8.0, 8.0, 401);
    Potential pot = ou_potential();
    GridDensity rho_bar = boltzmann_density(pot, g);
    auto [snaps, report] = fokker_planck_flow(rho_bar, pot, 0.1, 1e-4);
    for (const auto& s : snaps)
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(std::fabs(s.values[i] - rho_bar.values[i]) < 1e-6);
}

TEST_CASE("flow rejects unstable steps") {
    Grid g = Grid::make1d(-8.0, 8.0, 401);
    GridDensity rho0 = make_gaussian(g, {1.0}, {0.5});
    CHECK_THROWS_WITH(fokker_planck_flow(rho0, ou_potential(), 1.0, 1e-2),
                      Catch::Matchers::ContainsSubstring("stability"));
}

TEST_CASE("drift-diffusion and feedback-transport forms agree for one step") {
    Grid g = Grid::make1d(-10.0, 10.0, 1601);
    Potential pot = ou_potential();
    GridDensity rho = make_gaussian(g, {1.0}, {0.5});
    GridDensity rho_bar = boltzmann_density(pot, g);
    const double dt = 1e-5;

    auto [snaps, report] = fokker_planck_flow(rho, pot, dt, dt);
    GridDensity sg = snaps.back();

    VelocityField v = wasserstein_gradient_single(rho, rho_bar);
    for (auto& comp : v.components)
        for (double& x : comp) x = -x;
    GridDensity cont = continuity_step(rho, v, dt);

    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
        worst = std::max(worst, std::fabs(sg.values[i] - cont.values[i]));
    CHECK(worst < 1e-3);
}

TEST_CASE("dissipation check matches the Gaussian Fisher oracle") {
    Grid g = Grid::make1d(-10.0, 10.0, 1201);
    Potential pot = ou_potential();
    GridDensity rho0 = make_gaussian(g, {1.0}, {1.0});
    auto [snaps, report] = fokker_planck_flow(rho0, pot, 0.2, 2e-5);
    // rhs at t=0 is -relative Fisher of the mean-shifted Gaussian = -1
    CHECK(report.fisher_series.front() == Approx(1.0).margin(1e-3));
    auto series = dissipation_check_fp(report);
    CHECK(series.max_mismatch < 5e-3);

    // at equilibrium both sides vanish
    GridDensity rho_bar = boltzmann_density(pot, g);
    auto [s2, r2] = fokker_planck_flow(rho_bar, pot, 0.05, 2e-5);
    auto eq = dissipation_check_fp(r2);
    for (const auto& p : eq.points) {
        CHECK(std::fabs(p.lhs) < 1e-8);
        CHECK(std::fabs(p.rhs) < 1e-8);
    }
}

TEST_CASE("drift decomposition identities") {
    Grid g = Grid::make1d(-8.0, 8.0, 801);
    Potential pot = ou_potential();
    GridDensity rho_bar = boltzmann_density(pot, g);

    // equilibrium: forward drift -grad H / kT gives zero current velocity
    VelocityField fwd = VelocityField::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        Vec x(1);
        x << g.coordinate(i, 0);
        fwd.components[0][i] = -pot.gradient(x)[0] / pot.kT;
    }
    auto dec = drift_decomposition(rho_bar, fwd, 2.0);
    for (std::size_t i = 50; i + 50 < g.size(); ++i)
        CHECK(std::fabs(dec.current.components[0][i]) < 1e-6);

    // Gaussian score: osmotic = grad log rho = -x/v for sigma^2 = 2
    GridDensity n0v = make_gaussian(g, {0.0}, {1.5});
    auto d2 = drift_decomposition(n0v, VelocityField::zero(g), 2.0);
    for (std::size_t i = 100; i + 100 < g.size(); i += 40) {
        double x = g.coordinate(i, 0);
        CHECK(d2.osmotic.components[0][i] == Approx(-x / 1.5).margin(1e-4));
        CHECK(d2.current.components[0][i] == Approx(-d2.osmotic.components[0][i]).margin(1e-15));
    }
    // current + osmotic = forward exactly
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(d2.current.components[0][i] + d2.osmotic.components[0][i] == 0.0);
}

TEST_CASE("fluid action of the optimal flow equals the initial divergence") {
    Grid g = Grid::make1d(-10.0, 10.0, 801);
    GridDensity rho0 = make_gaussian(g, {2.0}, {0.25});
    auto [snaps, report] = fokker_planck_flow(rho0, ou_potential(), 1.0, 4e-5);
    double total = report.action_running.back() + report.terminal_divergence;
    CHECK(total == Approx(report.divergence_series.front()).margin(2e-2));
}

TEST_CASE("fluid action closed forms on frozen flows") {
    Grid g = Grid::make1d(-12.0, 12.0, 2401);
    Potential pot = ou_potential();
    GridDensity rho_bar = boltzmann_density(pot, g);
    GridDensity n11 = make_gaussian(g, {1.0}, {1.0});

    // frozen at the equilibrium with zero velocity: everything vanishes
    std::vector<GridDensity> eq_snaps(11, rho_bar);
    std::vector<VelocityField> zeros(11, VelocityField::zero(g));
    FluidCost c0 = fluid_action(eq_snaps, zeros, rho_bar, 0.1);
    CHECK(std::fabs(c0.total) < 1e-8);

    // frozen at N(1,1): running = T/2 * fisher, terminal = 1/2
    std::vector<GridDensity> snaps(11, n11);
    FluidCost c1 = fluid_action(snaps, zeros, rho_bar, 0.1);
    CHECK(c1.running == Approx(0.5).margin(1e-3));
    CHECK(c1.terminal == Approx(0.5).margin(1e-4));
    CHECK(c1.total == Approx(1.0).margin(1e-3));
}

TEST_CASE("virial identity") {
    Grid g = Grid::make1d(-12.0, 12.0, 1201);
    GridDensity rho = make_gaussian(g, {1.0}, {1.0});
    GridDensity rho_bar = make_gaussian(g, {0.0}, {1.0});

    VelocityField opt = wasserstein_gradient_single(rho, rho_bar);
    for (auto& comp : opt.components)
        for (double& x : comp) x = -x;
    auto [lhs, rhs] = virial_check(rho, opt, rho_bar);
    CHECK(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(rhs)));

    auto [l0, r0] = virial_check(rho, VelocityField::zero(g), rho_bar);
    CHECK(l0 == 0.0);
    CHECK(r0 == Approx(0.5).margin(1e-4));

    auto [le, re] = virial_check(rho_bar, opt, rho_bar);
    CHECK(re == Approx(0.0).margin(1e-12));
}

TEST_CASE("ou moment errors shrink at least first order when halving spacing") {
    Mat A(1, 1);
    A << 1.0;
    Potential pot = make_quadratic_potential(A, 1.0);
    double mex = 2.0 * std::exp(-1.0);
    double vex = 1.0 + (0.25 - 1.0) * std::exp(-2.0);
    auto error_at = [&](int nodes, double dt) {
        Grid g = Grid::make1d(-10.0, 10.0, nodes);
        auto [snaps, rep] = fokker_planck_flow(make_gaussian(g, {2.0}, {0.25}), pot, 1.0, dt);
        return std::fabs(density_moments_mean(snaps.back())[0] - mex) +
               std::fabs(density_moments_variance(snaps.back())[0] - vex);
    };
    double coarse = error_at(401, 1.6e-4);
    double fine = error_at(801, 4e-5);
    CHECK(fine <= 0.65 * coarse);
}

TEST_CASE("perturbed transports never beat the feedback flow") {
    Grid g = Grid::make1d(-8.0, 8.0, 401);
    GridDensity rho0 = make_gaussian(g, {1.5}, {0.5});
    FpGapReport gap = optimality_gap_fp(rho0, ou_potential(), 0.5, 2e-4, 6, 0.2, 11);
    CHECK(gap.flagged == 0);
    CHECK(gap.gap >= -5e-3);

    FpGapReport zero = optimality_gap_fp(rho0, ou_potential(), 0.25, 2e-4, 2, 0.0, 11);
    CHECK(zero.gap == 0.0);
}
