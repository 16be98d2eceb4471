#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradflow/core.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/objective.hpp"

namespace gradflow {

enum class ExperimentKind { euclidean, newton, sgd, fokker_planck, product, verify };

inline std::optional<ExperimentKind> parse_kind(const std::string& s) {
    if (s == "euclidean") return ExperimentKind::euclidean;
    if (s == "newton") return ExperimentKind::newton;
    if (s == "sgd") return ExperimentKind::sgd;
    if (s == "fokker-planck" || s == "fokker_planck") return ExperimentKind::fokker_planck;
    if (s == "product") return ExperimentKind::product;
    if (s == "verify") return ExperimentKind::verify;
    return std::nullopt;
}

inline const char* kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::euclidean: return "euclidean";
        case ExperimentKind::newton: return "newton";
        case ExperimentKind::sgd: return "sgd";
        case ExperimentKind::fokker_planck: return "fokker-planck";
        case ExperimentKind::product: return "product";
        case ExperimentKind::verify: return "verify";
    }
    return "?";
}

/// Config-file experiment description. Objectives and potentials are referenced
/// by name plus numeric parameters; unknown names surface as diagnostics rather
/// than exceptions so the CLI can report them with exit status 1.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::euclidean;
    nlohmann::json raw;  // echoed into the manifest

    // objective / potential spec
    std::string objective_name;              // "quadratic" | "double_well"
    std::vector<double> objective_diag;      // quadratic diagonal
    std::vector<double> objective_center;
    double kT = 1.0;

    // initial condition
    std::vector<double> x0;                          // euclidean kinds
    std::vector<double> gaussian_mean, gaussian_var;  // fokker-planck
    std::vector<double> mean_tilde, var_tilde;        // product pair
    std::vector<double> mean_rho, var_rho;

    // grid
    std::vector<double> grid_lo, grid_hi;
    std::vector<int> grid_nodes;

    double T = 1.0;
    double dt = 1e-3;
    std::uint64_t seed = 0;
    int perturbation_count = 0;
    double perturbation_magnitude = 0.1;
    double fisher_stop = 0.0;

    // sgd projection block
    int batch_size = 1;
    double resample_interval = 0.1;

    std::string out_dir = "out";
};

namespace detail {

inline std::vector<double> as_doubles(const nlohmann::json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(x.get<double>());
    return v;
}

}  // namespace detail

/// Parses the JSON document; structural errors (wrong types) throw, semantic
/// problems are left for validate().
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    ExperimentConfig c;
    c.raw = j;
    if (j.contains("kind")) {
        auto k = parse_kind(j["kind"].get<std::string>());
        if (k) c.kind = *k;
        // unknown kinds keep the default; validate() reports the token via raw
    }
    auto obj = j.contains("objective") ? j["objective"]
             : j.contains("potential") ? j["potential"]
                                       : nlohmann::json::object();
    if (obj.contains("name")) c.objective_name = obj["name"].get<std::string>();
    if (obj.contains("diag")) c.objective_diag = detail::as_doubles(obj["diag"]);
    if (obj.contains("center")) c.objective_center = detail::as_doubles(obj["center"]);
    if (obj.contains("kT")) c.kT = obj["kT"].get<double>();

    if (j.contains("initial")) {
        const auto& ic = j["initial"];
        if (ic.contains("point")) c.x0 = detail::as_doubles(ic["point"]);
        if (ic.contains("gaussian")) {
            c.gaussian_mean = detail::as_doubles(ic["gaussian"]["mean"]);
            c.gaussian_var = detail::as_doubles(ic["gaussian"]["variance"]);
        }
        if (ic.contains("gaussian_pair")) {
            const auto& gp = ic["gaussian_pair"];
            c.mean_tilde = detail::as_doubles(gp["mean_tilde"]);
            c.var_tilde = detail::as_doubles(gp["variance_tilde"]);
            c.mean_rho = detail::as_doubles(gp["mean"]);
            c.var_rho = detail::as_doubles(gp["variance"]);
        }
    }
    if (j.contains("grid")) {
        c.grid_lo = detail::as_doubles(j["grid"]["lo"]);
        c.grid_hi = detail::as_doubles(j["grid"]["hi"]);
        for (const auto& n : j["grid"]["nodes"]) c.grid_nodes.push_back(n.get<int>());
    }
    if (j.contains("T")) c.T = j["T"].get<double>();
    if (j.contains("dt")) c.dt = j["dt"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("perturbations")) {
        c.perturbation_count = j["perturbations"]["count"].get<int>();
        if (j["perturbations"].contains("magnitude"))
            c.perturbation_magnitude = j["perturbations"]["magnitude"].get<double>();
    }
    if (j.contains("fisher_stop")) c.fisher_stop = j["fisher_stop"].get<double>();
    if (j.contains("projection")) {
        c.batch_size = j["projection"]["batch"].get<int>();
        c.resample_interval = j["projection"]["interval"].get<double>();
    }
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    return c;
}

/// Empty result means run() will not fail for configuration reasons.
inline std::vector<std::string> validate(const ExperimentConfig& c) {
    std::vector<std::string> diags;
    auto bad = [&](const std::string& m) { diags.push_back(m); };

    if (c.raw.contains("kind") && !parse_kind(c.raw["kind"].get<std::string>()))
        bad("kind: unknown experiment kind '" + c.raw["kind"].get<std::string>() + "'");
    if (!(std::isfinite(c.T) && c.T > 0.0)) bad("T: must be positive and finite");
    if (!(std::isfinite(c.dt) && c.dt > 0.0)) bad("dt: must be positive and finite");
    if (std::isfinite(c.T) && std::isfinite(c.dt) && c.dt > c.T) bad("dt: must not exceed T");

    const bool euclidean_kind = c.kind == ExperimentKind::euclidean ||
                                c.kind == ExperimentKind::newton || c.kind == ExperimentKind::sgd;
    const bool grid_kind =
        c.kind == ExperimentKind::fokker_planck || c.kind == ExperimentKind::product;

    if (euclidean_kind || c.kind == ExperimentKind::fokker_planck) {
        if (c.objective_name.empty()) {
            bad("objective.name: missing");
        } else if (c.objective_name != "quadratic" && c.objective_name != "double_well") {
            bad("objective.name: unknown name '" + c.objective_name + "'");
        } else if (c.objective_name == "quadratic" && c.objective_diag.empty()) {
            bad("objective.diag: quadratic objective needs a diagonal");
        } else if (c.objective_name == "quadratic") {
            for (double d : c.objective_diag)
                if (!(std::isfinite(d) && d > 0.0)) bad("objective.diag: entries must be positive");
        }
        if (c.kind == ExperimentKind::fokker_planck && !(std::isfinite(c.kT) && c.kT > 0.0))
            bad("potential.kT: must be positive");
    }
    if (euclidean_kind) {
        if (c.x0.empty()) bad("initial.point: missing");
        std::size_t dim = c.objective_name == "double_well" ? 1 : c.objective_diag.size();
        if (!c.x0.empty() && dim && c.x0.size() != dim)
            bad("initial.point: dimension mismatch with objective");
        for (double v : c.x0)
            if (!std::isfinite(v)) bad("initial.point: entries must be finite");
    }
    if (c.kind == ExperimentKind::sgd) {
        if (c.batch_size < 1 || (!c.x0.empty() && c.batch_size > static_cast<int>(c.x0.size())))
            bad("projection.batch: must lie in [1, dimension]");
        if (!(std::isfinite(c.resample_interval) && c.resample_interval > 0.0))
            bad("projection.interval: must be positive");
        else if (std::isfinite(c.dt) && c.resample_interval < c.dt)
            bad("projection.interval: must be >= dt");
    }
    if (grid_kind) {
        if (c.grid_nodes.empty()) bad("grid.nodes: missing");
        if (c.grid_nodes.size() != c.grid_lo.size() || c.grid_nodes.size() != c.grid_hi.size())
            bad("grid: lo/hi/nodes must have matching lengths");
        if (c.grid_nodes.size() > 2) bad("grid: dimension must be 1 or 2");
        for (int n : c.grid_nodes)
            if (n < 16) bad("grid.nodes: node count >= 16 per axis required");
        for (std::size_t a = 0; a < std::min(c.grid_lo.size(), c.grid_hi.size()); ++a)
            if (!(c.grid_lo[a] < c.grid_hi[a])) bad("grid: lower bound must precede upper bound");
    }
    if (c.kind == ExperimentKind::fokker_planck && c.gaussian_mean.empty())
        bad("initial.gaussian: missing");
    if (c.kind == ExperimentKind::product &&
        (c.mean_tilde.empty() || c.mean_rho.empty()))
        bad("initial.gaussian_pair: missing");
    for (double v : c.gaussian_var)
        if (!(std::isfinite(v) && v > 0.0)) bad("initial.gaussian.variance: must be positive");
    if (c.perturbation_count < 0) bad("perturbations.count: must be nonnegative");
    if (!(std::isfinite(c.perturbation_magnitude) && c.perturbation_magnitude >= 0.0))
        bad("perturbations.magnitude: must be nonnegative and finite");
    return diags;
}

inline ObjectiveField build_objective(const ExperimentConfig& c) {
    if (c.objective_name == "double_well") return make_double_well();
    const auto n = static_cast<Eigen::Index>(c.objective_diag.size());
    Mat A = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) A(i, i) = c.objective_diag[static_cast<std::size_t>(i)];
    Vec center = Vec::Zero(n);
    for (std::size_t i = 0; i < c.objective_center.size() && i < static_cast<std::size_t>(n); ++i)
        center[static_cast<Eigen::Index>(i)] = c.objective_center[i];
    return make_quadratic(A, center);
}

inline Potential build_potential(const ExperimentConfig& c) {
    return make_potential(build_objective(c), c.kT);
}

inline Grid build_grid(const ExperimentConfig& c) {
    if (c.grid_nodes.size() == 1)
        return Grid::make1d(c.grid_lo[0], c.grid_hi[0], c.grid_nodes[0]);
    return Grid::make2d(c.grid_lo[0], c.grid_hi[0], c.grid_nodes[0], c.grid_lo[1], c.grid_hi[1],
                        c.grid_nodes[1]);
}

}  // namespace gradflow
