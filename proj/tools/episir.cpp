#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "episir/cli.hpp"

namespace {

using episir::cli::json;

struct Flag {
    std::string name;
    std::string key;
    std::string help;
};

struct Sub {
    CLI::App* app = nullptr;
    std::vector<Flag> flags;
    std::map<std::string, std::string> values;
};

const std::map<std::string, std::vector<Flag>>& flag_table() {
    static const std::map<std::string, std::vector<Flag>> t = {
        {"simulate",
         {{"--population", "population", "german or single"},
          {"--n", "n", "single-group population size"},
          {"--scale", "scale", "German spec population scale"},
          {"--r0", "r0", "basic reproduction number"},
          {"--gamma", "gamma", "daily recovery probability"},
          {"--replications", "replications", "ensemble size B"},
          {"--max-days", "max_days", "day cap per replication"},
          {"--infection-path", "infection_path", "marginal, binomial_counts or explicit_network"},
          {"--network", "network", "bernoulli or power_law"}}},
        {"r0",
         {{"--population", "population", "german or single"},
          {"--r0", "r0", "target used when tau is not given"},
          {"--gamma", "gamma", "daily recovery probability"},
          {"--form", "form", "linear or exponential beta form"}}},
        {"calibrate-tau",
         {{"--population", "population", "german or single"},
          {"--r0", "r0", "target R0"},
          {"--gamma", "gamma", "daily recovery probability"},
          {"--form", "form", "linear or exponential beta form"}}},
        {"estimate",
         {{"--mode", "mode", "beta, gamma or joint"},
          {"--input", "input", "case CSV (date,cumulative_cases[,removed_cases])"},
          {"--population", "population", "population headcount"},
          {"--window-days", "window_beta_days", "beta window W"},
          {"--mf-window-days", "window_m_days", "MF block length"},
          {"--c-threshold", "c_threshold", "identification threshold on reported cases"},
          {"--mf-guess", "mf_guess", "MF before identification"},
          {"--sim-n", "sim_n", "simulated population"},
          {"--sim-B", "sim_B", "simulated replications"},
          {"--gamma", "gamma", "daily recovery probability"},
          {"--stop-date", "stop_date", "last date used for estimation"}}},
        {"calibrate",
         {{"--input", "input", "case CSV (date,cumulative_cases)"},
          {"--population", "population", "population headcount"},
          {"--window-days", "window_beta_days", "beta window W"},
          {"--mf-window-days", "window_m_days", "MF block length"},
          {"--c-threshold", "c_threshold", "identification threshold on reported cases"},
          {"--mf-guess", "mf_guess", "MF before identification"},
          {"--sim-n", "sim_n", "simulated population"},
          {"--sim-B", "sim_B", "simulated replications"},
          {"--gamma", "gamma", "daily recovery probability"},
          {"--stop-date", "stop_date", "last date used for estimation"}}},
        {"counterfactual",
         {{"--replications", "sim.replications", "ensemble size B"},
          {"--max-days", "sim.max_days", "day cap per replication"}}},
        {"netgen-check",
         {{"--kind", "kind", "er, power_law or sbm"},
          {"--n", "n", "node count"},
          {"--mean-k", "mean_k", "target mean degree"},
          {"--k-min", "k_min", "power-law lower bound"},
          {"--k-max", "k_max", "power-law upper bound"},
          {"--alpha", "alpha", "power-law exponent (solved from mean-k if absent)"}}},
    };
    return t;
}

const std::map<std::string, std::string>& descriptions() {
    static const std::map<std::string, std::string> d = {
        {"simulate", "Run an epidemic ensemble and write fan charts"},
        {"r0", "Exact and approximate R0 for a group spec"},
        {"calibrate-tau", "Group exposure intensities for a target R0"},
        {"estimate", "Rolling beta, gamma or joint beta/MF estimates from a case series"},
        {"calibrate", "Full calibration pipeline on a case series"},
        {"counterfactual", "Run a distancing/vaccination/beta-path scenario"},
        {"netgen-check", "Sample one contact network and report degree diagnostics"},
    };
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic network SIR simulation, estimation and counterfactuals"};
    app.require_subcommand(1);
    app.set_version_flag("--version", episir::cli::kVersion);

    std::string config_path;
    std::string out_dir = "episir-out";
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::vector<std::string> sets;
    bool print_config = false;

    std::map<std::string, Sub> subs;
    for (const auto& [name, flags] : flag_table()) {
        Sub& s = subs[name];
        s.app = app.add_subcommand(name, descriptions().at(name));
        s.flags = flags;
        s.app->add_option(name == "counterfactual" ? "--config,--scenario" : "--config", config_path, "JSON config file");
        s.app->add_option("--out", out_dir, "output directory")->capture_default_str();
        if (episir::cli::uses_seed(name)) s.app->add_option("--seed", seed, "master seed (random and recorded when absent)");
        s.app->add_option("--threads", threads, "worker threads (0: EPISIR_THREADS or hardware)");
        s.app->add_option("--set", sets, "override a config key: key=value (dotted keys allowed)");
        s.app->add_flag("--print-config", print_config, "print the resolved configuration and exit");
        for (const auto& f : flags) s.app->add_option(f.name, s.values[f.key], f.help);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    }

    const std::string command = app.get_subcommands().front()->get_name();
    Sub& sub = subs.at(command);

    episir::cli::RunContext ctx;
    ctx.command = command;
    ctx.threads = threads;
    episir::cli::OutputDir out(out_dir);
    try {
        std::optional<json> file;
        if (!config_path.empty()) {
            try {
                file = json::parse(episir::cli::read_file(config_path));
            } catch (const json::parse_error& e) {
                throw episir::InvariantViolation("config is valid JSON", e.what());
            }
            ctx.inputs.push_back(config_path);
        }
        std::vector<std::pair<std::string, json>> flags;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw episir::InvariantViolation("--set takes key=value", s);
            flags.emplace_back(s.substr(0, eq), episir::cli::parse_flag_value(s.substr(eq + 1)));
        }
        for (const auto& f : sub.flags)
            if (sub.app->count(f.name) > 0) flags.emplace_back(f.key, episir::cli::parse_flag_value(sub.values.at(f.key)));
        if (seed) flags.emplace_back(command == "counterfactual" ? "sim.seed" : "seed", json(*seed));
        ctx.config = episir::cli::resolve_config(episir::cli::command_defaults(command), file, flags);
        if (print_config) {
            std::cout << ctx.config.dump(2) << '\n';
            return 0;
        }
        if (episir::cli::uses_seed(command))
            ctx.seed = episir::cli::materialize_seed(episir::cli::seed_slot(ctx.config, command));
    } catch (const std::exception& e) {
        const std::string msg = "[config] " + std::string(e.what());
        std::cerr << "episir " << command << ": " << msg << '\n';
        try {
            out.write_json("manifest.json", episir::cli::manifest_json(ctx, out, "error", msg));
        } catch (const std::exception&) {
        }
        return 1;
    }

    std::string error;
    int code = 1;
    try {
        code = episir::cli::execute(ctx, out, error);
    } catch (const std::exception& e) {
        error = e.what();
    }
    if (code != 0) std::cerr << "episir " << command << ": " << error << '\n';
    return code;
}
