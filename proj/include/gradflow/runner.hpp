#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gradflow/config.hpp"
#include "gradflow/io.hpp"

namespace gradflow {

inline constexpr const char* kToolVersion = "0.1.0";

/// One residual check declared by an experiment; failing any flips the exit
/// status to 2 (config problems are the caller's exit 1).
struct ResidualCheck {
    std::string name;
    double residual = 0.0;
    double tolerance = 0.0;
    bool passed() const { return residual <= tolerance; }
};

struct RunResult {
    int status = 0;  // 0 ok, 2 when a declared check failed
    std::vector<ResidualCheck> checks;
};

namespace detail {

inline json checks_json(const std::vector<ResidualCheck>& checks) {
    json j = json::array();
    for (const auto& c : checks)
        j.push_back({{"name", c.name},
                     {"residual", c.residual},
                     {"tolerance", c.tolerance},
                     {"passed", c.passed()}});
    return j;
}

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                           const std::vector<ResidualCheck>& checks) {
    json j;
    j["tool"] = "gradflow";
    j["version"] = kToolVersion;
    j["config"] = cfg.raw;
    j["checks"] = checks_json(checks);
    write_json_file(dir / "manifest.json", j);
}

inline double monotonicity_violation(const std::vector<double>& series, double slack) {
    double worst = 0.0;
    for (std::size_t i = 1; i < series.size(); ++i)
        worst = std::max(worst, series[i] - series[i - 1] - slack);
    return std::max(worst, 0.0);
}

inline RunResult run_euclidean_kind(const ExperimentConfig& cfg,
                                    const std::filesystem::path& dir) {
    ObjectiveField f = build_objective(cfg);
    Vec x0(static_cast<Eigen::Index>(cfg.x0.size()));
    for (std::size_t i = 0; i < cfg.x0.size(); ++i)
        x0[static_cast<Eigen::Index>(i)] = cfg.x0[i];

    Trajectory traj;
    ActionWeighting weighting = ActionWeighting::identity();
    ProjectionProcess proj(f.dimension, std::min(cfg.batch_size, f.dimension),
                           cfg.resample_interval, cfg.seed);
    switch (cfg.kind) {
        case ExperimentKind::euclidean:
            traj = gradient_flow(f, x0, cfg.T, cfg.dt);
            break;
        case ExperimentKind::newton:
            traj = newton_flow(f, x0, cfg.T, cfg.dt);
            weighting = ActionWeighting::inverse_hessian();
            break;
        case ExperimentKind::sgd:
            traj = sgd_flow(f, x0, cfg.T, cfg.dt, proj);
            weighting = ActionWeighting::with_projection(proj);
            break;
        default:
            break;
    }
    write_trajectory_csv(dir / "trajectory.csv", traj, f, weighting);

    RunResult result;
    result.checks.push_back({"feasibility_residual", traj.feasibility_residual(), 1e-8});

    double fmax_rise = 0.0;
    double slack = cfg.kind == ExperimentKind::sgd ? 10.0 * cfg.dt * cfg.dt : 0.0;
    for (std::size_t i = 1; i < traj.states.size(); ++i)
        fmax_rise = std::max(fmax_rise, f.value(traj.states[i]) - f.value(traj.states[i - 1]) - slack);
    result.checks.push_back({"objective_monotone", std::max(fmax_rise, 0.0), 0.0});

    AccountedCost cost = action_euclidean(traj, f, weighting);
    double ident_tol = 1e-3 + 10.0 * cfg.dt * cfg.dt * cfg.T;
    result.checks.push_back(
        {"optimal_cost_identity", std::fabs(cost.total - f.value(x0)), ident_tol});

    json summary;
    summary["action"] = {{"running", cost.running}, {"terminal", cost.terminal},
                         {"total", cost.total}};
    summary["f_initial"] = f.value(x0);
    summary["lagrange_functional"] = lagrange_functional(traj, f);
    auto diss = dissipation_check_euclidean(traj, f, weighting);
    summary["dissipation_max_mismatch"] = diss.max_mismatch;

    if (cfg.perturbation_count > 0) {
        GapReport gap = optimality_gap(f, x0, cfg.T, cfg.dt, weighting, cfg.perturbation_count,
                                       cfg.perturbation_magnitude, cfg.seed);
        write_json_file(dir / "gap.json", gap_report_json(gap));
        result.checks.push_back({"perturbation_gap", std::max(-gap.gap, 0.0), ident_tol});
        summary["gap"] = gap.gap;
    } else {
        // smoke contract: gap.json always exists for euclidean kinds
        GapReport empty;
        empty.optimal_total = cost.total;
        empty.gap = 0.0;
        write_json_file(dir / "gap.json", gap_report_json(empty));
    }
    write_json_file(dir / "summary.json", summary);
    for (const auto& c : result.checks)
        if (!c.passed()) result.status = 2;
    return result;
}

inline RunResult run_fokker_planck(const ExperimentConfig& cfg,
                                   const std::filesystem::path& dir) {
    Potential pot = build_potential(cfg);
    Grid grid = build_grid(cfg);
    GridDensity rho0 = make_gaussian(grid, cfg.gaussian_mean, cfg.gaussian_var);
    auto [snapshots, report] = fokker_planck_flow(rho0, pot, cfg.T, cfg.dt);
    GridDensity rho_bar = boltzmann_density(pot, grid);

    write_flow_report_csv(dir / "report.csv", report);
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
        auto stem = snapshot_name("snapshot", k);
        write_density_csv(dir / (stem + ".csv"), snapshots[k]);
        write_json_file(dir / (stem + ".json"), density_header_json(snapshots[k]));
    }

    RunResult result;
    double mass_drift = 0.0;
    for (double m : report.mass_series) mass_drift = std::max(mass_drift, std::fabs(m - 1.0));
    result.checks.push_back({"mass_conservation", mass_drift, 1e-9});
    result.checks.push_back(
        {"divergence_monotone", monotonicity_violation(report.divergence_series, 1e-8), 0.0});

    auto diss = dissipation_check_fp(report);
    double action_total = report.action_running.back() + report.terminal_divergence;
    double action_resid = std::fabs(action_total - report.divergence_series.front());

    json summary;
    summary["terminal_mean"] = density_moments_mean(snapshots.back());
    summary["terminal_variance"] = density_moments_variance(snapshots.back());
    summary["terminal_divergence"] = report.terminal_divergence;
    summary["dissipation_max_mismatch"] = diss.max_mismatch;
    summary["action_identity_residual"] = action_resid;
    summary["mass_drift"] = mass_drift;

    if (cfg.perturbation_count > 0) {
        FpGapReport gap = optimality_gap_fp(rho0, pot, cfg.T, cfg.dt, cfg.perturbation_count,
                                            cfg.perturbation_magnitude, cfg.seed);
        write_json_file(dir / "gap.json", gap_report_json(gap));
        summary["gap"] = gap.gap;
    }
    write_json_file(dir / "summary.json", summary);
    for (const auto& c : result.checks)
        if (!c.passed()) result.status = 2;
    return result;
}

inline RunResult run_product(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    Grid grid = build_grid(cfg);
    ProductState state0(make_gaussian(grid, cfg.mean_tilde, cfg.var_tilde),
                        make_gaussian(grid, cfg.mean_rho, cfg.var_rho));
    ProductRunResult run = product_flow_run(state0, cfg.T, cfg.dt, cfg.fisher_stop);

    write_product_report_csv(dir / "report.csv", run.report);
    for (std::size_t k = 0; k < run.snapshots.size(); ++k) {
        auto stem_t = snapshot_name("snapshot_tilde", k);
        auto stem_r = snapshot_name("snapshot_rho", k);
        write_density_csv(dir / (stem_t + ".csv"), run.snapshots[k].first);
        write_density_csv(dir / (stem_r + ".csv"), run.snapshots[k].second);
    }
    write_json_file(dir / "grid.json", density_header_json(run.snapshots.front().first));

    RunResult result;
    double mass_drift = 0.0;
    for (double m : run.report.mass_tilde_series) mass_drift = std::max(mass_drift, std::fabs(m - 1.0));
    for (double m : run.report.mass_series) mass_drift = std::max(mass_drift, std::fabs(m - 1.0));
    result.checks.push_back({"mass_conservation", mass_drift, 1e-9});

    double sum_drift = 0.0;
    for (double d : run.report.sum_drift_series) sum_drift = std::max(sum_drift, d);
    result.checks.push_back({"pointwise_sum_drift", sum_drift, 1e-12});
    result.checks.push_back(
        {"divergence_monotone", monotonicity_violation(run.report.divergence_series, 1e-8), 0.0});

    ReffRate rr = reff_rate(run.final_state);
    double reff_rel = std::fabs(rr.combined - rr.split) / std::max(1e-300, std::fabs(rr.combined));
    result.checks.push_back({"reff_split_agreement", rr.combined == 0.0 ? 0.0 : reff_rel, 1e-6});

    // distance of each component from the conserved-sum average
    double limit_t = 0.0, limit_r = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double avg = 0.5 * state0.initial_sum[i];
        limit_t = std::max(limit_t, std::fabs(run.final_state.rho_tilde.values[i] - avg));
        limit_r = std::max(limit_r, std::fabs(run.final_state.rho.values[i] - avg));
    }

    json summary;
    summary["terminal_divergence"] = run.report.terminal_divergence;
    summary["stop_time"] = run.report.stop_time;
    summary["stopped_by_fisher"] = run.report.stopped_by_fisher;
    summary["steps"] = run.report.steps;
    summary["sum_drift_max"] = sum_drift;
    summary["limit_distance_tilde"] = limit_t;
    summary["limit_distance_rho"] = limit_r;
    summary["action_identity_residual"] =
        std::fabs(run.report.action_running.back() + run.report.terminal_divergence -
                  run.report.divergence_series.front());

    if (cfg.perturbation_count > 0) {
        ProductGapReport gap =
            optimality_gap_product(state0, cfg.T, cfg.dt, cfg.perturbation_count,
                                   cfg.perturbation_magnitude, cfg.seed);
        write_json_file(dir / "gap.json", gap_report_json(gap));
        summary["gap"] = gap.gap;
    }
    write_json_file(dir / "summary.json", summary);
    for (const auto& c : result.checks)
        if (!c.passed()) result.status = 2;
    return result;
}

}  // namespace detail

/// Executes the configured experiment into cfg.out_dir. Throws
/// std::invalid_argument for config-level failures (callers map those to exit 1);
/// returns status 2 when a declared invariant check fails.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    auto diags = validate(cfg);
    if (!diags.empty()) {
        std::string msg = "invalid config:";
        for (const auto& d : diags) msg += "\n  " + d;
        throw std::invalid_argument(msg);
    }
    std::filesystem::path dir(cfg.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec && std::filesystem::is_directory(dir),
            "out_dir: cannot create directory " + dir.string());

    RunResult result;
    switch (cfg.kind) {
        case ExperimentKind::euclidean:
        case ExperimentKind::newton:
        case ExperimentKind::sgd:
            result = detail::run_euclidean_kind(cfg, dir);
            break;
        case ExperimentKind::fokker_planck:
            result = detail::run_fokker_planck(cfg, dir);
            break;
        case ExperimentKind::product:
            result = detail::run_product(cfg, dir);
            break;
        case ExperimentKind::verify:
            throw std::invalid_argument("verify has no config-driven runner; use the subcommand");
    }
    detail::write_manifest(dir, cfg, result.checks);
    return result;
}

}  // namespace gradflow
