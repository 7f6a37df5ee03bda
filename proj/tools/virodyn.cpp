// Command line front end for the simulator and its verification scenarios.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "virodyn/virodyn.hpp"

namespace {

int apply_sets(virodyn::KeyValueConfig& cfg,
               const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        try {
            cfg.set_line(s, "--set");
        } catch (const virodyn::ConfigError& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return virodyn::exit_config_error;
        }
    }
    return virodyn::exit_ok;
}

int run_with(virodyn::KeyValueConfig& cfg) {
    const virodyn::ScenarioResult res = virodyn::run_scenario(cfg);
    for (const std::string& n : res.notes) std::printf("%s\n", n.c_str());
    for (const auto& [k, v] : res.metrics) std::printf("%s = %.17g\n", k.c_str(), v);
    return res.exit_code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"virodyn: cross-diffusion virotherapy simulator and checker"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    auto* cmd_run = app.add_subcommand("run", "run a scenario from a config");
    cmd_run->add_option("--config", config_path, "key=value config file");
    cmd_run->add_option("--set", sets, "override, e.g. --set model.beta=1.1");

    std::string sweep_config;
    std::vector<std::string> sweep_sets;
    auto* cmd_sweep =
        app.add_subcommand("sweep", "run the parameter sweep scenario");
    cmd_sweep->add_option("--config", sweep_config, "key=value config file");
    cmd_sweep->add_option("--set", sweep_sets, "override, e.g. --set sweep.beta_steps=3");

    double th_beta = 0.0, th_u0_min = 0.0, th_u0_max = 0.0;
    auto* cmd_th = app.add_subcommand(
        "check-threshold", "test beta*max(1,u0_max) < 1 + (1 + 1/u0_min)^-1");
    cmd_th->add_option("--beta", th_beta)->required();
    cmd_th->add_option("--u0-min", th_u0_min)->required();
    cmd_th->add_option("--u0-max", th_u0_max)->required();

    double ce_beta = 0.0, ce_mu = 1.0, ce_u0_min = 0.0, ce_u0_max = 0.0;
    double ce_eps = 0.0, ce_delta = 0.0, ce_K = 0.0;
    auto* cmd_cert = app.add_subcommand(
        "certificate", "search or replay a smallness certificate");
    cmd_cert->add_option("--beta", ce_beta)->required();
    cmd_cert->add_option("--mu", ce_mu);
    cmd_cert->add_option("--u0-min", ce_u0_min)->required();
    cmd_cert->add_option("--u0-max", ce_u0_max)->required();
    cmd_cert->add_option("--eps", ce_eps, "replay with this eps");
    cmd_cert->add_option("--delta", ce_delta, "replay with this delta");
    cmd_cert->add_option("--K", ce_K, "replay with this K");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : virodyn::exit_config_error;
    }

    if (cmd_run->parsed()) {
        virodyn::KeyValueConfig cfg;
        try {
            if (!config_path.empty()) cfg.load_file(config_path);
        } catch (const virodyn::ConfigError& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return virodyn::exit_config_error;
        }
        const int rc = apply_sets(cfg, sets);
        if (rc != virodyn::exit_ok) return rc;
        return run_with(cfg);
    }

    if (cmd_sweep->parsed()) {
        virodyn::KeyValueConfig cfg;
        try {
            if (!sweep_config.empty()) cfg.load_file(sweep_config);
        } catch (const virodyn::ConfigError& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return virodyn::exit_config_error;
        }
        const int rc = apply_sets(cfg, sweep_sets);
        if (rc != virodyn::exit_ok) return rc;
        cfg.kv["scenario"] = "sweep";
        return run_with(cfg);
    }

    if (cmd_th->parsed()) {
        try {
            const bool ok =
                virodyn::check_threshold(th_beta, th_u0_min, th_u0_max);
            const double lhs = th_beta * std::max(1.0, th_u0_max);
            const double cap = virodyn::threshold_cap(th_u0_min);
            std::printf("beta * max(1, u0_max) = %.17g\n", lhs);
            std::printf("1 + (1 + 1/u0_min)^-1 = %.17g\n", cap);
            std::printf("threshold %s\n", ok ? "holds" : "fails");
            return ok ? virodyn::exit_ok : virodyn::exit_checks_failed;
        } catch (const std::invalid_argument& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return virodyn::exit_config_error;
        }
    }

    if (cmd_cert->parsed()) {
        try {
            virodyn::SmallnessCertificate c;
            if (ce_eps > 0.0 || ce_delta > 0.0 || ce_K > 0.0)
                c = virodyn::make_certificate(ce_beta, ce_mu, ce_u0_min,
                                              ce_u0_max, ce_eps, ce_delta, ce_K);
            else
                c = virodyn::find_certificate(ce_beta, ce_mu, ce_u0_min,
                                              ce_u0_max);
            virodyn::write_certificate_report(std::cout, c);
            return c.valid ? virodyn::exit_ok : virodyn::exit_checks_failed;
        } catch (const std::invalid_argument& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return virodyn::exit_config_error;
        }
    }

    return virodyn::exit_config_error;
}
