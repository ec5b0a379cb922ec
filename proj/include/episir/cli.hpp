#pragma once

// Configuration resolution, run manifests and subcommand bodies for the
// episir command-line tool.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "episir/calib.hpp"
#include "episir/common.hpp"
#include "episir/estimate.hpp"
#include "episir/group_spec.hpp"
#include "episir/moments.hpp"
#include "episir/netgen.hpp"
#include "episir/policy.hpp"
#include "episir/simcore.hpp"

namespace episir::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "1.0.0";

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InvalidParameter("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string file_digest(const fs::path& p) { return "fnv1a64:" + hex64(fnv1a64(read_file(p))); }

// ---------------------------------------------------------------------------
// Configuration

/// Overlays src on dst.  Keys absent from dst are collected as unknown;
/// objects merge recursively unless the default is null (free-form).
inline void merge_known(json& dst, const json& src, const std::string& prefix, std::vector<std::string>& unknown) {
    for (const auto& [key, value] : src.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!dst.contains(key)) {
            unknown.push_back(path);
            continue;
        }
        auto& slot = dst[key];
        if (slot.is_object() && value.is_object()) merge_known(slot, value, path, unknown);
        else slot = value;
    }
}

inline json parse_flag_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

/// defaults <- file <- flags.  Flags use dotted keys.
inline json resolve_config(json defaults, const std::optional<json>& file,
                           const std::vector<std::pair<std::string, json>>& flags) {
    std::vector<std::string> unknown;
    if (file) {
        if (!file->is_object()) throw InvariantViolation("config is a JSON object", "top level is " + std::string(file->type_name()));
        merge_known(defaults, *file, "", unknown);
    }
    for (const auto& [key, value] : flags) {
        json patch = value;
        std::string k = key;
        for (auto dot = k.rfind('.'); dot != std::string::npos; dot = k.rfind('.')) {
            patch = json{{k.substr(dot + 1), patch}};
            k.erase(dot);
        }
        merge_known(defaults, json{{k, patch}}, "", unknown);
    }
    if (!unknown.empty()) {
        std::string list;
        for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
        throw InvariantViolation("known keys", "unknown keys: " + list);
    }
    return defaults;
}

inline json population_defaults() {
    return {{"population", "german"}, {"scale", 10000.0}, {"n", 10000},         {"mean_contacts", 10.0},
            {"group_spec", nullptr},  {"lambda", nullptr}, {"gamma", kDefaultGamma}};
}

inline json estimation_defaults() {
    return {{"input", nullptr},          {"population", nullptr},   {"window_beta_days", 14},
            {"window_m_days", 14},       {"c_threshold", 0.01},     {"mf_guess", 5.0},
            {"sim_n", 50000},            {"sim_B", 500},            {"gamma", kDefaultGamma},
            {"mean_contacts", 10.0},     {"outbreak_threshold", 1e-5}, {"r0_cap", true},
            {"r0_cap_value", 3.0},       {"seed", nullptr},         {"stop_date", nullptr}};
}

/// Defaults for each subcommand.
inline json command_defaults(const std::string& command) {
    if (command == "simulate") {
        json j = population_defaults();
        j.update({{"r0", 3.0},
                  {"replications", 1000},
                  {"max_days", 1000},
                  {"initial_fraction", 0.001},
                  {"seed", nullptr},
                  {"infection_path", "marginal"},
                  {"network", "bernoulli"},
                  {"degree_law", {{"mean_k", 10.0}, {"k_min", 5}, {"k_max", 50}, {"alpha", nullptr}}},
                  {"recovery", {{"truncated", false}, {"max_days", nullptr}}}});
        return j;
    }
    if (command == "r0") {
        json j = population_defaults();
        j.update({{"tau", nullptr}, {"r0", 3.0}, {"form", "exponential"}});
        return j;
    }
    if (command == "calibrate-tau") {
        json j = population_defaults();
        j.update({{"r0", 3.0}, {"form", "linear"}});
        return j;
    }
    if (command == "estimate") {
        json j = estimation_defaults();
        j["mode"] = "joint";
        return j;
    }
    if (command == "calibrate") return estimation_defaults();
    if (command == "counterfactual") {
        Scenario sc;
        sc.r0 = 3.0;
        json j = to_json(sc);
        j["transmission"] = nullptr;
        j["sim"]["seed"] = nullptr;
        j["sim"]["group_spec"] = nullptr;
        return j;
    }
    if (command == "netgen-check") {
        return {{"kind", "er"},           {"n", 10000},     {"mean_k", 10.0},  {"k_min", 5},
                {"k_max", 50},            {"alpha", nullptr}, {"population", "german"}, {"scale", 10000.0},
                {"group_spec", nullptr},  {"seed", nullptr}};
    }
    throw InvalidParameter("unknown command " + command);
}

inline bool uses_seed(const std::string& command) { return command != "r0" && command != "calibrate-tau"; }

/// Where a command keeps its seed.
inline json& seed_slot(json& config, const std::string& command) {
    return command == "counterfactual" ? config["sim"]["seed"] : config["seed"];
}

/// Fills a null seed with a fresh random one.
inline std::uint64_t materialize_seed(json& seed_slot) {
    if (seed_slot.is_null()) {
        std::random_device rd;
        const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 31) ^ rd();
        seed_slot = s;
    }
    if (!seed_slot.is_number_unsigned() && !(seed_slot.is_number_integer() && seed_slot.get<std::int64_t>() >= 0))
        throw InvariantViolation("seed is a non-negative integer", seed_slot.dump());
    return seed_slot.get<std::uint64_t>();
}

template <class T>
T get_as(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& ex) {
        throw InvariantViolation(std::string("valid ") + key, ex.what());
    }
}

inline double checked_gamma(const json& j) {
    const double g = get_as<double>(j, "gamma");
    if (!(g > 0.0 && g <= 1.0)) throw InvariantViolation("0 < gamma <= 1", "gamma = " + json(g).dump());
    return g;
}

inline GroupSpec spec_from_config(const json& j) {
    if (!j.at("group_spec").is_null()) return group_spec_from_json(j.at("group_spec"));
    const auto pop = get_as<std::string>(j, "population");
    if (pop == "german") return german_spec(get_as<double>(j, "scale"));
    if (pop == "single") {
        const auto n = get_as<std::int64_t>(j, "n");
        if (n < 2) throw InvariantViolation("n >= 2", std::to_string(n));
        return single_group_spec(n, get_as<double>(j, "mean_contacts"));
    }
    throw InvariantViolation("population is german or single", "\"" + pop + "\"");
}

inline std::vector<double> lambda_from_config(const json& j, const GroupSpec& spec) {
    if (!j.at("lambda").is_null()) {
        auto l = get_as<std::vector<double>>(j, "lambda");
        if (l.size() != spec.groups())
            throw InvariantViolation("lambda per group", "expected " + std::to_string(spec.groups()) + " values");
        return l;
    }
    if (spec.groups() == 5 && j.at("group_spec").is_null()) return german_infection_ratios();
    return std::vector<double>(spec.groups(), 1.0);
}

inline BetaForm form_from(const std::string& s) {
    if (s == "linear") return BetaForm::linear;
    if (s == "exponential") return BetaForm::exponential;
    throw InvariantViolation("form is linear or exponential", "\"" + s + "\"");
}

inline JointConfig joint_from_config(const json& j, std::uint64_t seed, int threads) {
    JointConfig c;
    c.window_beta_days = get_as<int>(j, "window_beta_days");
    c.window_m_days = get_as<int>(j, "window_m_days");
    c.c_threshold = get_as<double>(j, "c_threshold");
    c.mf_guess = get_as<double>(j, "mf_guess");
    c.sim_n = get_as<std::int64_t>(j, "sim_n");
    c.sim_B = get_as<std::int32_t>(j, "sim_B");
    c.gamma = checked_gamma(j);
    c.mean_contacts = get_as<double>(j, "mean_contacts");
    c.outbreak_threshold = get_as<double>(j, "outbreak_threshold");
    c.r0_cap = get_as<bool>(j, "r0_cap");
    c.r0_cap_value = get_as<double>(j, "r0_cap_value");
    c.seed = seed;
    c.threads = threads;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Output directory and manifest

/// Writes files only as direct children of the output directory.
class OutputDir {
public:
    explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {}

    const fs::path& path() const { return dir_; }

    std::ofstream open(const std::string& name) {
        const fs::path rel(name);
        if (name.empty() || rel.has_parent_path() || rel.is_absolute() || name == "." || name == "..")
            throw InvariantViolation("outputs stay in the output directory", "refusing to write \"" + name + "\"");
        fs::create_directories(dir_);
        std::ofstream os(dir_ / rel, std::ios::binary | std::ios::trunc);
        if (!os) throw StageError("output", "cannot write " + (dir_ / rel).string());
        os.precision(12);
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
        return os;
    }

    void write_json(const std::string& name, const json& j) {
        auto os = open(name);
        os << j.dump(2) << '\n';
    }

    const std::vector<std::string>& names() const { return names_; }

private:
    fs::path dir_;
    std::vector<std::string> names_;
};

struct RunContext {
    std::string command;
    json config;
    std::uint64_t seed = 0;
    int threads = 0;
    std::vector<fs::path> inputs;
};

inline json manifest_json(const RunContext& ctx, const OutputDir& out, const std::string& status, const std::string& error) {
    json inputs = json::array();
    for (const auto& p : ctx.inputs)
        inputs.push_back({{"path", p.generic_string()}, {"digest", fs::is_regular_file(p) ? json(file_digest(p)) : json(nullptr)}});
    json outputs = json::array();
    for (const auto& n : out.names()) outputs.push_back({{"path", n}, {"digest", file_digest(out.path() / n)}});
    json m = {{"tool", "episir"},     {"version", kVersion}, {"command", ctx.command}, {"seed", ctx.seed},
              {"config", ctx.config}, {"inputs", inputs},    {"outputs", outputs},     {"status", status}};
    if (!error.empty()) m["error"] = error;
    return m;
}

// ---------------------------------------------------------------------------
// Commands

inline void write_ensemble(OutputDir& out, const EnsembleResult& r) {
    for (auto kind : {SeriesKind::cumulative, SeriesKind::active, SeriesKind::new_cases}) {
        {
            auto os = out.open(std::string("fanchart_") + series_name(kind) + ".csv");
            write_band_csv(os, r.band(kind));
        }
        if (r.groups() > 1)
            for (std::size_t g = 0; g < r.groups(); ++g) {
                auto os = out.open(std::string("fanchart_") + series_name(kind) + "_group" + std::to_string(g + 1) + ".csv");
                write_band_csv(os, r.band(kind, static_cast<int>(g)));
            }
    }
    {
        auto os = out.open("replications.csv");
        os << "replication,c_star,T_star,censored\n";
        for (std::size_t b = 0; b < r.B(); ++b) {
            const auto& s = r.replications()[b];
            os << b << ',' << r.value(b, SeriesKind::cumulative, s.days()) << ',' << s.T_star << ',' << (s.censored ? 1 : 0)
               << '\n';
        }
    }
    out.write_json("summary.json", r.summary_json());
}

inline void run_simulate(RunContext& ctx, OutputDir& out) {
    const json& j = ctx.config;
    Scenario sc;
    const auto spec = spec_from_config(j);
    sc.spec = spec;
    sc.lambda = lambda_from_config(j, spec);
    sc.gamma = checked_gamma(j);
    sc.r0 = get_as<double>(j, "r0");
    sc.replications = get_as<std::int32_t>(j, "replications");
    sc.max_days = get_as<std::int32_t>(j, "max_days");
    sc.initial_fraction = get_as<double>(j, "initial_fraction");
    sc.seed = ctx.seed;
    SimConfig cfg = scenario_config(sc);

    const auto path = get_as<std::string>(j, "infection_path");
    if (path == "marginal") cfg.path = InfectionPath::marginal;
    else if (path == "binomial_counts") cfg.path = InfectionPath::binomial_counts;
    else if (path == "explicit_network") cfg.path = InfectionPath::explicit_network;
    else throw InvariantViolation("infection_path is marginal, binomial_counts or explicit_network", "\"" + path + "\"");
    const auto net = get_as<std::string>(j, "network");
    if (net == "power_law") {
        cfg.network = NetworkKind::power_law;
        const auto& d = j.at("degree_law");
        cfg.degree_law.kind = netgen::DegreeKind::power_law;
        cfg.degree_law.mean_k = get_as<double>(d, "mean_k");
        cfg.degree_law.k_min = get_as<std::int32_t>(d, "k_min");
        cfg.degree_law.k_max = get_as<std::int32_t>(d, "k_max");
        cfg.degree_law.alpha = d.at("alpha").is_null()
                                   ? netgen::solve_power_law_exponent(cfg.degree_law.mean_k, cfg.degree_law.k_min,
                                                                      cfg.degree_law.k_max)
                                   : get_as<double>(d, "alpha");
    } else if (net != "bernoulli") {
        throw InvariantViolation("network is bernoulli or power_law", "\"" + net + "\"");
    }
    const auto& rec = j.at("recovery");
    cfg.recovery.truncated = get_as<bool>(rec, "truncated");
    if (cfg.recovery.truncated) {
        if (rec.at("max_days").is_number()) cfg.recovery.max_days.assign(spec.groups(), get_as<std::int32_t>(rec, "max_days"));
        else cfg.recovery.max_days = get_as<std::vector<std::int32_t>>(rec, "max_days");
    }
    cfg.validate();
    const auto result = detail::stage("simulate", [&] { return run_ensemble(cfg, ctx.threads); });
    write_ensemble(out, result);
}

inline void run_r0(RunContext& ctx, OutputDir& out) {
    const json& j = ctx.config;
    const auto spec = spec_from_config(j);
    const double gamma = checked_gamma(j);
    const auto form = form_from(get_as<std::string>(j, "form"));
    std::vector<double> tau;
    if (j.at("tau").is_null()) tau = calibrate_group_tau(spec, lambda_from_config(j, spec), get_as<double>(j, "r0"), gamma);
    else tau = get_as<std::vector<double>>(j, "tau");
    if (tau.size() != spec.groups()) throw InvariantViolation("tau per group", "expected " + std::to_string(spec.groups()) + " values");
    const double exact = compute_r0(spec, tau, gamma, R0Method::exact);
    const double approx = compute_r0(spec, tau, gamma, R0Method::approx, form);
    out.write_json("r0.json", {{"tau", tau},
                               {"r0_exact", exact},
                               {"r0_approx", approx},
                               {"relative_gap", std::abs(exact - approx) / exact},
                               {"group_beta", group_betas(spec, tau, form)}});
}

inline void run_calibrate_tau(RunContext& ctx, OutputDir& out) {
    const json& j = ctx.config;
    const auto spec = spec_from_config(j);
    const double gamma = checked_gamma(j);
    const auto form = form_from(get_as<std::string>(j, "form"));
    const auto lambda = lambda_from_config(j, spec);
    const auto tau = calibrate_group_tau(spec, lambda, get_as<double>(j, "r0"), gamma, form);
    out.write_json("tau.json", {{"tau", tau},
                                {"lambda", lambda},
                                {"relative_tau", relative_group_tau(spec, lambda)},
                                {"r0_approx", compute_r0(spec, tau, gamma, R0Method::approx, form)},
                                {"r0_exact", compute_r0(spec, tau, gamma, R0Method::exact)},
                                {"group_size", spec.sizes}});
}

inline CaseSeries load_input(RunContext& ctx) {
    const json& j = ctx.config;
    if (j.at("input").is_null()) throw InvariantViolation("input file given", "set input or pass --input");
    if (j.at("population").is_null()) throw InvariantViolation("population > 0", "population is required");
    const fs::path in = get_as<std::string>(j, "input");
    ctx.inputs.push_back(in);
    return detail::stage("load", [&] { return load_case_series(in, get_as<double>(j, "population")); });
}

inline void run_estimate(RunContext& ctx, OutputDir& out) {
    const json& j = ctx.config;
    const auto mode = get_as<std::string>(j, "mode");
    if (mode != "beta" && mode != "gamma" && mode != "joint")
        throw InvariantViolation("mode is beta, gamma or joint", "\"" + mode + "\"");
    const auto jc = joint_from_config(j, ctx.seed, ctx.threads);
    const auto cases = load_input(ctx);
    const auto c = cases.smoothed();

    if (mode == "joint") {
        auto jcs = jc;
        if (!j.at("stop_date").is_null()) {
            const auto s = get_as<std::string>(j, "stop_date");
            const auto d = parse_iso_date(s);
            if (!d || !cases.index_of(*d)) throw InvariantViolation("stop_date inside the series", "\"" + s + "\"");
            jcs.stop_index = *cases.index_of(*d);
        }
        const auto r = detail::stage("estimate", [&] { return joint_estimate(c, jcs); });
        {
            auto os = out.open("estimates.csv");
            write_estimates_csv(os, r.estimates);
        }
        json blocks = json::array();
        for (const auto& [t, m] : r.estimates.mf_blocks) blocks.push_back({{"day", t + 1}, {"m_hat", m}});
        out.write_json("summary.json", {{"mode", mode},
                                        {"outbreak_start_day", r.estimates.outbreak_start + 1},
                                        {"identification_day", r.estimates.t0 ? json(*r.estimates.t0 + 1) : json(nullptr)},
                                        {"mf_blocks", blocks}});
        return;
    }

    if (mode == "beta") {
        const auto i = active_from(c, recursive_removed(c, jc.gamma));
        EstimateSeries e;
        e.c_tilde = c;
        e.i_tilde = i;
        e.beta_hat = detail::stage("estimate", [&] { return fit_beta_rolling(c, i, jc.window_beta_days); });
        e.m_hat.assign(c.size(), kNaN);
        e.r_et_hat.assign(c.size(), kNaN);
        e.flags.assign(c.size(), 0);
        for (std::size_t t = 0; t < c.size(); ++t) {
            if (std::isfinite(e.beta_hat[t])) e.r_et_hat[t] = (1.0 - c[t]) * e.beta_hat[t] / jc.gamma;
            else e.flags[t] |= flag::beta_undefined;
        }
        auto os = out.open("estimates.csv");
        write_estimates_csv(os, e);
        return;
    }

    if (!cases.has_recorded_removed())
        throw StageError("estimate", "gamma mode needs a removed_cases column in the input file");
    const auto raw_c = cases.per_capita();
    const auto r = cases.removed_per_capita();
    const auto i = active_from(raw_c, r);
    const auto g = detail::stage("estimate", [&] { return fit_gamma_rolling(r, i, jc.window_beta_days); });
    {
        auto os = out.open("gamma_estimates.csv");
        os << "day,date,gamma_hat\n";
        for (std::size_t t = 0; t < g.size(); ++t) {
            os << t + 1 << ',' << format_iso_date(cases.dates[t]) << ',';
            if (std::isfinite(g[t])) os << g[t];
            os << '\n';
        }
    }
    const double all = detail::stage("estimate", [&] { return fit_gamma_ols(r, i); });
    out.write_json("summary.json", {{"mode", mode}, {"gamma_ols", std::isfinite(all) ? json(all) : json(nullptr)}});
}

inline void run_calibrate(RunContext& ctx, OutputDir& out) {
    const json& j = ctx.config;
    PipelineConfig pc;
    pc.joint = joint_from_config(j, ctx.seed, ctx.threads);
    if (!j.at("stop_date").is_null()) pc.stop_date = get_as<std::string>(j, "stop_date");
    const auto cases = load_input(ctx);
    pc.population = cases.population;
    const auto r = run_pipeline(cases, pc);
    {
        auto os = out.open("estimates.csv");
        write_estimates_csv(os, r.joint.estimates);
    }
    {
        auto os = out.open("calibrated_fanchart.csv");
        write_fanchart_csv(os, r);
    }
    {
        auto os = out.open("adjusted_cases.csv");
        write_adjusted_csv(os, r);
    }
    out.write_json("summary.json", r.summary());
}

inline void run_counterfactual_cmd(RunContext& ctx, OutputDir& out) {
    const Scenario sc = scenario_from_json(ctx.config);
    const auto result = detail::stage("simulate", [&] { return run_counterfactual(sc, ctx.threads); });
    write_ensemble(out, result);
}

inline void run_netgen_check(RunContext& ctx, OutputDir& out) {
    const json& j = ctx.config;
    const auto kind = get_as<std::string>(j, "kind");
    Rng rng = make_stream(ctx.seed, 0, StreamSalt::epidemic);
    json summary = {{"kind", kind}};
    netgen::ContactNetwork net;
    if (kind == "er") {
        const auto n = get_as<std::int64_t>(j, "n");
        const double k = get_as<double>(j, "mean_k");
        if (n < 2) throw InvariantViolation("n >= 2", std::to_string(n));
        if (!(k >= 0.0 && k <= static_cast<double>(n - 1))) throw InvariantViolation("0 <= k <= n - 1", json(k).dump());
        net = netgen::sample_er_network(n, k, rng);
        summary["target_mean_degree"] = k;
    } else if (kind == "power_law") {
        netgen::DegreeLaw law;
        law.mean_k = get_as<double>(j, "mean_k");
        law.k_min = get_as<std::int32_t>(j, "k_min");
        law.k_max = get_as<std::int32_t>(j, "k_max");
        law.alpha = j.at("alpha").is_null() ? netgen::solve_power_law_exponent(law.mean_k, law.k_min, law.k_max)
                                            : get_as<double>(j, "alpha");
        const auto n = get_as<std::int64_t>(j, "n");
        const auto deg = netgen::draw_power_law_degrees(n, law, rng);
        const auto cm = netgen::configuration_model(deg, rng);
        net = cm.network;
        summary["alpha"] = law.alpha;
        summary["target_mean_degree"] = netgen::power_law_mean(law.alpha, law.k_min, law.k_max);
        summary["stub_pairs"] = cm.stub_pairs;
        summary["self_loops_removed"] = cm.self_loops;
        summary["multi_edges_removed"] = cm.multi_edges;
    } else if (kind == "sbm") {
        const auto spec = spec_from_config(j);
        net = netgen::sample_sbm_network(spec, rng);
        const auto deg = net.degrees();
        auto os = out.open("group_degrees.csv");
        os << "group,size,mean_degree,expected_degree\n";
        std::int64_t off = 0;
        for (std::size_t g = 0; g < spec.groups(); ++g) {
            double s = 0.0;
            for (std::int64_t i = 0; i < spec.sizes[g]; ++i) s += deg[static_cast<std::size_t>(off + i)];
            double expected = 0.0;
            for (std::size_t h = 0; h < spec.groups(); ++h) expected += spec.contact(g, h);
            os << g + 1 << ',' << spec.sizes[g] << ',' << s / static_cast<double>(spec.sizes[g]) << ',' << expected << '\n';
            off += spec.sizes[g];
        }
    } else {
        throw InvariantViolation("kind is er, power_law or sbm", "\"" + kind + "\"");
    }
    const auto deg = net.degrees();
    std::map<std::int32_t, std::int64_t> hist;
    for (auto d : deg) ++hist[d];
    {
        auto os = out.open("degree_histogram.csv");
        os << "degree,count\n";
        for (const auto& [d, c] : hist) os << d << ',' << c << '\n';
    }
    summary["n"] = net.n;
    summary["edges"] = net.edges.size();
    summary["mean_degree"] = net.mean_degree();
    summary["simple"] = net.is_simple();
    out.write_json("netgen_summary.json", summary);
}

/// Dispatches a resolved command; the manifest is written whatever happens.
/// Returns 0 on success and 1 on failure, with the message in `error`.
inline int execute(RunContext& ctx, OutputDir& out, std::string& error) {
    int code = 0;
    try {
        if (ctx.command == "simulate") run_simulate(ctx, out);
        else if (ctx.command == "r0") run_r0(ctx, out);
        else if (ctx.command == "calibrate-tau") run_calibrate_tau(ctx, out);
        else if (ctx.command == "estimate") run_estimate(ctx, out);
        else if (ctx.command == "calibrate") run_calibrate(ctx, out);
        else if (ctx.command == "counterfactual") run_counterfactual_cmd(ctx, out);
        else if (ctx.command == "netgen-check") run_netgen_check(ctx, out);
        else throw InvalidParameter("unknown command " + ctx.command);
    } catch (const StageError& ex) {
        error = ex.what();
        code = 1;
    } catch (const InvariantViolation& ex) {
        error = "[config] invariant violated: " + std::string(ex.what());
        code = 1;
    } catch (const std::exception& ex) {
        error = "[" + ctx.command + "] " + std::string(ex.what());
        code = 1;
    }
    out.write_json("manifest.json", manifest_json(ctx, out, code == 0 ? "ok" : "error", error));
    return code;
}

}  // namespace episir::cli
