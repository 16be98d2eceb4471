#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradflow/core.hpp"
#include "gradflow/euclidean.hpp"
#include "gradflow/fokker_planck.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/product.hpp"

namespace gradflow {

using nlohmann::json;

/// Minimal CSV sink with pinned float formatting (17 significant digits), so
/// identical runs produce byte-identical files.
class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
        require(out_.good(), "csv: cannot open " + path.string());
    }

    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (i) out_ << ',';
            out_ << cols[i];
        }
        out_ << '\n';
    }

    void row(const std::vector<double>& vals) {
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(vals[i]);
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    require(out.good(), "json: cannot open " + path.string());
    out << j.dump(2) << '\n';
}

/// Trajectory CSV: t, x_1..x_n, u_1..u_n, f, grad_norm_sq, running_action.
/// The final row's control columns are zero (one fewer control than states);
/// running_action accumulates the same per-interval trapezoid used by
/// action_euclidean.
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 const ObjectiveField& f, ActionWeighting weighting) {
    CsvWriter csv(path);
    const int n = f.dimension;
    std::vector<std::string> cols{"t"};
    for (int j = 0; j < n; ++j) cols.push_back("x_" + std::to_string(j + 1));
    for (int j = 0; j < n; ++j) cols.push_back("u_" + std::to_string(j + 1));
    cols.insert(cols.end(), {"f", "grad_norm_sq", "running_action"});
    csv.header(cols);

    double running = 0.0;
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        if (i > 0) {
            double dt = traj.times[i] - traj.times[i - 1];
            double t = traj.times[i - 1];
            double ga = detail::grad_dual_norm2(f, weighting, traj.states[i - 1], t);
            double gb = detail::grad_dual_norm2(f, weighting, traj.states[i], t);
            double ca = detail::control_metric_norm2(f, weighting, traj.states[i - 1],
                                                     traj.controls[i - 1], t);
            double cb = detail::control_metric_norm2(f, weighting, traj.states[i],
                                                     traj.controls[i - 1], t);
            running += dt * 0.5 * (0.5 * (ga + gb) + 0.5 * (ca + cb));
        }
        std::vector<double> row{traj.times[i]};
        for (int j = 0; j < n; ++j) row.push_back(traj.states[i][j]);
        for (int j = 0; j < n; ++j)
            row.push_back(i < traj.controls.size() ? traj.controls[i][j] : 0.0);
        row.push_back(f.value(traj.states[i]));
        row.push_back(f.gradient(traj.states[i]).squaredNorm());
        row.push_back(running);
        csv.row(row);
    }
}

inline void write_flow_report_csv(const std::filesystem::path& path, const FlowReport& r) {
    CsvWriter csv(path);
    csv.header({"t", "divergence", "fisher", "mass", "running_action"});
    for (std::size_t k = 0; k < r.times.size(); ++k)
        csv.row({r.times[k], r.divergence_series[k], r.fisher_series[k], r.mass_series[k],
                 r.action_running[k]});
}

inline void write_product_report_csv(const std::filesystem::path& path, const ProductReport& r) {
    CsvWriter csv(path);
    csv.header({"t", "divergence", "reff_rate", "sum_drift", "mass_tilde", "mass",
                "running_action"});
    for (std::size_t k = 0; k < r.times.size(); ++k)
        csv.row({r.times[k], r.divergence_series[k], r.reff_rate_series[k],
                 r.sum_drift_series[k], r.mass_tilde_series[k], r.mass_series[k],
                 r.action_running[k]});
}

/// Density CSV (node coordinates then value) plus a JSON sidecar header with
/// bounds, node counts and quadrature mass.
inline void write_density_csv(const std::filesystem::path& path, const GridDensity& d) {
    CsvWriter csv(path);
    std::vector<std::string> cols;
    for (int a = 0; a < d.grid.dimension(); ++a)
        cols.push_back(a == 0 ? "x" : "y");
    cols.push_back("value");
    csv.header(cols);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        std::vector<double> row;
        for (int a = 0; a < d.grid.dimension(); ++a) row.push_back(d.grid.coordinate(i, a));
        row.push_back(d.values[i]);
        csv.row(row);
    }
}

inline json density_header_json(const GridDensity& d) {
    json j;
    for (int a = 0; a < d.grid.dimension(); ++a) {
        j["bounds"].push_back({d.grid.axis(a).lo, d.grid.axis(a).hi});
        j["nodes"].push_back(d.grid.axis(a).nodes);
    }
    j["mass"] = d.mass();
    return j;
}

template <typename GapLike>
json gap_report_json(const GapLike& r) {
    json j;
    j["optimal_total"] = r.optimal_total;
    j["samples"] = r.samples;
    j["gap"] = r.gap;
    j["flagged"] = r.flagged;
    return j;
}

inline std::string snapshot_name(const char* stem, std::size_t index) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s_%03zu", stem, index);
    return buf;
}

}  // namespace gradflow
