#include <catch2/catch_amalgamated.hpp>

#include "gradflow/euclidean.hpp"

using namespace gradflow;
using Catch::Approx;

namespace {

ObjectiveField diag_quadratic(std::initializer_list<double> d) {
    const auto n = static_cast<Eigen::Index>(d.size());
    Mat A = Mat::Zero(n, n);
    Eigen::Index i = 0;
    for (double v : d) A(i, i) = v, ++i;
    return make_quadratic(A, Vec::Zero(n));
}

Vec vec2(double a, double b) {
    Vec x(2);
    x << a, b;
    return x;
}

ObjectiveField linear_objective(const Vec& a) {
    ObjectiveField f;
    f.dimension = static_cast<int>(a.size());
    f.value = [a](const Vec& x) { return a.dot(x); };
    f.gradient = [a](const Vec&) { return a; };
    return f;
}

}  // namespace

TEST_CASE("gradient flow matches the linear ODE oracle") {
    auto iso = make_isotropic_quadratic(2);
    auto traj = gradient_flow(iso, vec2(1.0, 0.0), 1.0, 1e-3);
    CHECK(traj.states.back()[0] == Approx(std::exp(-1.0)).margin(1e-6));
    CHECK(traj.states.back()[1] == Approx(0.0).margin(1e-12));
    CHECK(traj.feasibility_residual() < 1e-12);

    auto aniso = diag_quadratic({1.0, 4.0});
    auto t2 = gradient_flow(aniso, vec2(1.0, 1.0), 1.0, 1e-3);
    CHECK(t2.states.back()[0] == Approx(std::exp(-1.0)).margin(1e-6));
    CHECK(t2.states.back()[1] == Approx(std::exp(-4.0)).margin(1e-6));

    // f nonincreasing step by step
    for (std::size_t i = 1; i < t2.states.size(); ++i)
        CHECK(aniso.value(t2.states[i]) <= aniso.value(t2.states[i - 1]));
}

TEST_CASE("gradient flow is stationary at the minimizer and validates dt") {
    auto iso = make_isotropic_quadratic(2);
    auto traj = gradient_flow(iso, Vec::Zero(2), 0.5, 1e-2);
    for (const auto& x : traj.states) CHECK(x.norm() == 0.0);
    CHECK_THROWS_AS(gradient_flow(iso, vec2(1.0, 0.0), 0.5, 1.0), std::invalid_argument);
}

TEST_CASE("newton flow contracts all quadratics at unit rate") {
    auto stiff = diag_quadratic({1.0, 100.0});
    auto traj = newton_flow(stiff, vec2(1.0, 1.0), 1.0, 1e-3);
    CHECK(traj.states.back()[0] == Approx(std::exp(-1.0)).margin(1e-6));
    CHECK(traj.states.back()[1] == Approx(std::exp(-1.0)).margin(1e-6));

    auto iso = make_isotropic_quadratic(2);
    auto tn = newton_flow(iso, vec2(1.0, 0.0), 1.0, 1e-3);
    auto tg = gradient_flow(iso, vec2(1.0, 0.0), 1.0, 1e-3);
    for (std::size_t i = 0; i < tn.states.size(); ++i)
        CHECK((tn.states[i] - tg.states[i]).norm() < 1e-10);

    auto fixed = newton_flow(stiff, Vec::Zero(2), 1.0, 1e-2);
    for (const auto& x : fixed.states) CHECK(x.norm() == 0.0);
}

TEST_CASE("newton flow aborts on indefinite Hessians") {
    auto dw = make_double_well();
    Vec x0(1);
    x0 << 0.0;  // H_f(0) = -1
    CHECK_THROWS_WITH(newton_flow(dw, x0, 1.0, 1e-2),
                      Catch::Matchers::ContainsSubstring("positive definite"));
}

TEST_CASE("projection process draws reproducible k-subsets") {
    ProjectionProcess a(6, 2, 0.1, 2024);
    ProjectionProcess b(6, 2, 0.1, 2024);
    for (double t : {0.0, 0.15, 0.35, 0.91}) {
        const auto& ma = a.mask_at(t);
        const auto& mb = b.mask_at(t);
        int ones = 0;
        for (std::size_t j = 0; j < ma.size(); ++j) {
            CHECK(ma[j] == mb[j]);
            ones += ma[j];
        }
        CHECK(ones == 2);
    }
    CHECK(a.realized_masks().size() == 10);  // epochs 0..9 realized lazily
    CHECK_THROWS_AS(ProjectionProcess(4, 5, 0.1, 1), std::invalid_argument);
}

TEST_CASE("full-batch projection reproduces explicit Euler bitwise") {
    auto f = make_isotropic_quadratic(4);
    Vec x0(4);
    x0 << 1.0, -0.5, 2.0, 0.25;
    const double dt = 1e-3;
    ProjectionProcess proj(4, 4, 0.05, 5);
    auto traj = sgd_flow(f, x0, 1.0, dt, proj);
    Vec x = x0;
    for (std::size_t i = 0; i < traj.steps(); ++i) {
        Vec g = f.gradient(x);
        x = x - dt * g;
        for (int j = 0; j < 4; ++j) CHECK(x[j] == traj.states[i + 1][j]);
    }
}

TEST_CASE("projected flow decreases f at the realized-mask rate") {
    auto f = make_isotropic_quadratic(4);
    Vec x0(4);
    x0 << 1.0, 1.0, 1.0, 1.0;
    const double dt = 1e-3;
    ProjectionProcess proj(4, 2, 0.05, 77);
    auto traj = sgd_flow(f, x0, 1.0, dt, proj);
    for (std::size_t i = 0; i < traj.steps(); ++i) {
        const auto& mask = proj.mask_at(traj.times[i]);
        Vec g = f.gradient(traj.states[i]);
        double masked = 0.0;
        for (int j = 0; j < 4; ++j)
            if (mask[static_cast<std::size_t>(j)]) masked += g[j] * g[j];
        double df = f.value(traj.states[i + 1]) - f.value(traj.states[i]);
        CHECK(std::fabs(df + dt * masked) <= 10.0 * dt * dt);
        CHECK(df <= 10.0 * dt * dt);
    }
}

TEST_CASE("identical seeds give bitwise-identical projected trajectories") {
    auto f = make_isotropic_quadratic(4);
    Vec x0(4);
    x0 << 0.3, -1.0, 0.8, 2.0;
    ProjectionProcess p1(4, 2, 0.07, 123), p2(4, 2, 0.07, 123);
    auto t1 = sgd_flow(f, x0, 0.6, 1e-3, p1);
    auto t2 = sgd_flow(f, x0, 0.6, 1e-3, p2);
    for (std::size_t i = 0; i < t1.states.size(); ++i)
        for (int j = 0; j < 4; ++j) CHECK(t1.states[i][j] == t2.states[i][j]);
    CHECK_THROWS_AS(sgd_flow(f, x0, 0.6, 0.2, p1), std::invalid_argument);
}

TEST_CASE("action of the gradient flow equals f(x0)") {
    auto iso = make_isotropic_quadratic(2);
    auto traj = gradient_flow(iso, vec2(1.0, 0.0), 5.0, 1e-3);
    auto cost = action_euclidean(traj, iso, ActionWeighting::identity());
    CHECK(cost.total == Approx(0.5).margin(1e-4));
}

TEST_CASE("stationary trajectories cost exactly the terminal value") {
    auto iso = make_isotropic_quadratic(2);
    Trajectory traj;
    Vec x0 = Vec::Zero(2);
    for (int i = 0; i <= 10; ++i) {
        traj.times.push_back(0.1 * i);
        traj.states.push_back(x0);
        if (i < 10) traj.controls.push_back(Vec::Zero(2));
    }
    auto cost = action_euclidean(traj, iso, ActionWeighting::identity());
    CHECK(cost.running == 0.0);
    CHECK(cost.total == iso.value(x0));
}

TEST_CASE("weighted action of the Newton flow equals f(x0)") {
    auto stiff = diag_quadratic({1.0, 100.0});
    auto traj = newton_flow(stiff, vec2(1.0, 1.0), 5.0, 1e-3);
    auto cost = action_euclidean(traj, stiff, ActionWeighting::inverse_hessian());
    CHECK(cost.total == Approx(50.5).margin(1e-3));
}

TEST_CASE("weighted action of the projected flow equals f(x0)") {
    auto f = make_isotropic_quadratic(4);
    Vec x0(4);
    x0 << 1.0, 1.0, 1.0, 1.0;
    const double dt = 1e-3, T = 1.0;
    ProjectionProcess proj(4, 2, 0.05, 31);
    auto traj = sgd_flow(f, x0, T, dt, proj);
    auto cost = action_euclidean(traj, f, ActionWeighting::with_projection(proj));
    CHECK(cost.total == Approx(f.value(x0)).margin(1e-6 + 10.0 * dt * dt * T));
}

TEST_CASE("action rejects missing Hessians and infeasible trajectories") {
    auto lin = linear_objective(vec2(1.0, 2.0));
    auto iso = make_isotropic_quadratic(2);
    auto traj = gradient_flow(iso, vec2(1.0, 0.0), 1.0, 1e-2);
    CHECK_THROWS_AS(action_euclidean(traj, lin, ActionWeighting::inverse_hessian()),
                    std::invalid_argument);

    Trajectory bad = traj;
    bad.controls[0] = vec2(100.0, 100.0);
    CHECK_THROWS_AS(action_euclidean(bad, iso, ActionWeighting::identity()),
                    std::invalid_argument);
    CHECK_NOTHROW(action_euclidean(bad, iso, ActionWeighting::identity(), 1e-8, true));
}

TEST_CASE("lagrange functional vanishes along feasible trajectories") {
    auto aniso = diag_quadratic({1.0, 4.0});
    auto traj = gradient_flow(aniso, vec2(1.0, 1.0), 1.0, 1e-3);
    CHECK(std::fabs(lagrange_functional(traj, aniso)) < 1e-6);

    // generic C^2 test function, invariant bound 10 dt^2 T
    ObjectiveField cosf;
    cosf.dimension = 2;
    cosf.value = [](const Vec& x) { return std::cos(x[0]) + std::cos(x[1]); };
    cosf.gradient = [](const Vec& x) {
        Vec g(2);
        g << -std::sin(x[0]), -std::sin(x[1]);
        return g;
    };
    CHECK(std::fabs(lagrange_functional(traj, cosf)) <= 10.0 * 1e-6 * 1.0);
}

TEST_CASE("lagrange functional on constant and infeasible trajectories") {
    Trajectory constant;
    Vec x0 = vec2(0.4, -0.2);
    for (int i = 0; i <= 5; ++i) {
        constant.times.push_back(0.2 * i);
        constant.states.push_back(x0);
        if (i < 5) constant.controls.push_back(Vec::Zero(2));
    }
    auto iso = make_isotropic_quadratic(2);
    CHECK(lagrange_functional(constant, iso) == 0.0);

    // x frozen, u = c, S linear: Lambda = T (c . a) exactly
    Vec c = vec2(0.7, -0.3), a = vec2(2.0, 1.0);
    Trajectory infeasible = constant;
    for (auto& u : infeasible.controls) u = c;
    CHECK(lagrange_functional(infeasible, linear_objective(a)) == Approx(1.0 * c.dot(a)));
}

TEST_CASE("dissipation series matches the closed forms at t = 0") {
    auto iso = make_isotropic_quadratic(2);
    auto traj = gradient_flow(iso, vec2(1.0, 0.0), 1.0, 1e-3);
    auto series = dissipation_check_euclidean(traj, iso, ActionWeighting::identity());
    CHECK(series.points.front().rhs == Approx(-1.0));
    CHECK(series.points.front().lhs == Approx(-1.0).margin(1e-5));
    for (const auto& p : series.points) CHECK(p.rhs <= 0.0);

    auto stiff = diag_quadratic({1.0, 100.0});
    auto tn = newton_flow(stiff, vec2(1.0, 1.0), 1.0, 1e-3);
    auto sn = dissipation_check_euclidean(tn, stiff, ActionWeighting::inverse_hessian());
    CHECK(sn.points.front().rhs == Approx(-101.0).margin(1e-10));
    CHECK(sn.points.front().lhs == Approx(-101.0).margin(1e-3));

    auto still = gradient_flow(iso, Vec::Zero(2), 1.0, 1e-2);
    auto ss = dissipation_check_euclidean(still, iso, ActionWeighting::identity());
    for (const auto& p : ss.points) {
        CHECK(p.lhs == 0.0);
        CHECK(p.rhs == 0.0);
    }
}

TEST_CASE("perturbed controls never beat the flow") {
    auto iso = make_isotropic_quadratic(2);
    GapReport gap = optimality_gap(iso, vec2(1.0, 0.0), 1.0, 1e-3,
                                   ActionWeighting::identity(), 100, 0.1, 7);
    CHECK(gap.gap >= -(1e-6 + 10.0 * 1e-6));
    CHECK(gap.flagged == 0);

    auto aniso = diag_quadratic({1.0, 4.0});
    GapReport g2 = optimality_gap(aniso, vec2(1.0, 1.0), 1.0, 1e-3,
                                  ActionWeighting::identity(), 100, 0.05, 8);
    for (double total : g2.samples) CHECK(total >= 2.5 - (1e-6 + 1e-5));
}

TEST_CASE("zero perturbation magnitude reproduces the optimal cost exactly") {
    auto iso = make_isotropic_quadratic(2);
    GapReport gap = optimality_gap(iso, vec2(1.0, 0.0), 1.0, 1e-3,
                                   ActionWeighting::identity(), 5, 0.0, 7);
    CHECK(gap.gap == 0.0);
}

TEST_CASE("rk4 converges at fourth order on the quadratic oracle") {
    auto iso = make_isotropic_quadratic(1);
    Vec x0(1);
    x0 << 1.0;
    auto err = [&](double dt) {
        auto traj = gradient_flow(iso, x0, 1.0, dt);
        return std::fabs(traj.states.back()[0] - std::exp(-1.0));
    };
    double ratio = err(0.1) / err(0.05);
    CHECK(ratio > 10.0);
    CHECK(ratio < 22.0);
}

TEST_CASE("euler action totals move at first order in dt") {
    auto f = make_isotropic_quadratic(2);
    Vec x0 = vec2(1.0, 1.0);
    auto total_at = [&](double dt) {
        ProjectionProcess proj(2, 2, 1.0, 3);
        auto traj = sgd_flow(f, x0, 1.0, dt, proj);
        return action_euclidean(traj, f, ActionWeighting::with_projection(proj)).total;
    };
    double d1 = std::fabs(total_at(2e-3) - total_at(1e-3));
    CHECK(d1 < 0.05 * 2e-3 / 1e-3 * 1e-2);  // O(dt) scale, loose constant
}
