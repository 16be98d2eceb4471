// Config-driven experiment runner for the flow toolkit.
//
// Subcommands: euclidean | newton | sgd | fokker-planck | product | verify.
// Every subcommand except verify takes --config and a handful of scalar
// overrides; verify runs the full identity suite and prints a pass/fail table.
//
// Exit codes: 0 success, 1 usage/config error, 2 when a declared invariant or
// identity check fails.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gradflow/gradflow.hpp"

namespace {

int run_verify() {
    auto results = gradflow::run_acceptance_suite();
    bool all = true;
    std::printf("%-4s %-38s %-6s %12s %12s %9s\n", "id", "check", "state", "residual",
                "tolerance", "seconds");
    for (const auto& r : results) {
        all = all && r.passed;
        std::printf("%-4d %-38s %-6s %12.3e %12.3e %9.2f\n", r.id, r.name.c_str(),
                    r.passed ? "PASS" : "FAIL", r.residual, r.tolerance, r.seconds);
        if (!r.detail.empty()) std::printf("     %s\n", r.detail.c_str());
    }
    std::printf("%s\n", all ? "all checks passed" : "some checks FAILED");
    return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-flow experiments and identity verification"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    double dt_override = -1.0, t_override = -1.0;
    long long seed_override = -1;
    bool have_seed = false;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", config_path, "experiment config JSON");
        if (config_required) opt->required();
        sub->add_option("--out-dir", out_dir, "output directory override");
        sub->add_option("--dt", dt_override, "time step override");
        sub->add_option("--t-final", t_override, "horizon override");
        sub->add_option("--seed", seed_override, "seed override")
            ->each([&](const std::string&) { have_seed = true; });
    };

    const char* kinds[] = {"euclidean", "newton", "sgd", "fokker-planck", "product"};
    for (const char* k : kinds) add_common(app.add_subcommand(k), true);
    app.add_subcommand("verify", "run the full identity suite");

    CLI11_PARSE(app, argc, argv);
    auto* sub = app.get_subcommands().front();

    if (sub->get_name() == "verify") return run_verify();

    try {
        std::ifstream in(config_path);
        if (!in.good()) {
            std::cerr << "error: cannot open config " << config_path << "\n";
            return 1;
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
            return 1;
        }
        // the subcommand wins over any kind named in the file
        j["kind"] = sub->get_name();
        if (dt_override > 0.0) j["dt"] = dt_override;
        if (t_override > 0.0) j["T"] = t_override;
        if (have_seed && seed_override >= 0)
            j["seed"] = static_cast<std::uint64_t>(seed_override);
        if (!out_dir.empty()) j["out_dir"] = out_dir;

        gradflow::ExperimentConfig cfg = gradflow::parse_config(j);
        auto diags = gradflow::validate(cfg);
        if (!diags.empty()) {
            for (const auto& d : diags) std::cerr << "config error: " << d << "\n";
            return 1;
        }
        gradflow::RunResult result = gradflow::run_experiment(cfg);
        for (const auto& c : result.checks) {
            std::printf("%-26s %s  residual %.3e (tol %.3e)\n", c.name.c_str(),
                        c.passed() ? "ok  " : "FAIL", c.residual, c.tolerance);
        }
        return result.status;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
