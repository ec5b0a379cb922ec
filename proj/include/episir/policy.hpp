#pragma once

// Counterfactual scenarios: distancing schedules, vaccination rollouts and
// shifted transmission paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "episir/common.hpp"
#include "episir/estimate.hpp"
#include "episir/group_spec.hpp"
#include "episir/moments.hpp"
#include "episir/simcore.hpp"

namespace episir {

/// Piecewise-linear beta_t / gamma profile over days.
struct DistancingSchedule {
    std::vector<std::pair<double, double>> breakpoints;  // (day, level)

    void validate() const {
        if (breakpoints.empty()) throw InvariantViolation("schedule breakpoints", "at least one breakpoint required");
        for (std::size_t k = 0; k < breakpoints.size(); ++k) {
            if (!(breakpoints[k].second >= 0.0))
                throw InvariantViolation("levels >= 0", "breakpoint " + std::to_string(k));
            if (k > 0 && !(breakpoints[k].first > breakpoints[k - 1].first))
                throw InvariantViolation("breakpoints sorted", "breakpoint " + std::to_string(k));
        }
    }

    /// Two weeks at 3, linear fall to 0.9 over three weeks, eight weeks at
    /// 0.9, linear rise to 1.5 over three weeks, then 1.5.
    static DistancingSchedule standard() { return {{{1, 3.0}, {14, 3.0}, {35, 0.9}, {91, 0.9}, {112, 1.5}}}; }
};

/// Level at a day: linear between breakpoints, constant outside them.
inline double schedule_beta_at(const DistancingSchedule& s, double day) {
    const auto& b = s.breakpoints;
    if (b.empty()) throw InvariantViolation("schedule breakpoints", "empty schedule");
    if (day <= b.front().first) return b.front().second;
    if (day >= b.back().first) return b.back().second;
    const auto hi = std::upper_bound(b.begin(), b.end(), day, [](double d, const auto& p) { return d < p.first; });
    const auto lo = hi - 1;
    const double f = (day - lo->first) / (hi->first - lo->first);
    return lo->second + f * (hi->second - lo->second);
}

/// mu^1 / mu^0 = 1 / (1 - efficacy).
inline double efficacy_to_immunity(double efficacy) {
    if (!(efficacy >= 0.0 && efficacy < 1.0))
        throw InvalidParameter("vaccine efficacy must lie in [0, 1), got " + std::to_string(efficacy));
    return 1.0 / (1.0 - efficacy);
}

/// First day of a 1-based week counted from day 1.
inline std::int32_t week_start_day(std::int32_t week) {
    if (week < 1) throw InvariantViolation("week >= 1", std::to_string(week));
    return 7 * (week - 1) + 1;
}

enum class VaccinationScheme { random, age_descending };

struct VaccinationPlan {
    double coverage = 0.75;
    std::int32_t rollout_days = 84;
    std::int32_t start_day = 64;
    VaccinationScheme scheme = VaccinationScheme::random;
    double efficacy = 0.95;
    /// Group order for the age scheme; empty means last group first.
    std::vector<std::size_t> priority;

    void validate() const {
        if (!(coverage >= 0.0 && coverage <= 1.0)) throw InvariantViolation("0 <= coverage <= 1", std::to_string(coverage));
        if (rollout_days < 1) throw InvariantViolation("rollout_days >= 1", std::to_string(rollout_days));
        if (start_day < 1) throw InvariantViolation("start_day >= 1", std::to_string(start_day));
        efficacy_to_immunity(efficacy);
    }

    std::int64_t total(std::int64_t n) const {
        return static_cast<std::int64_t>(std::floor(coverage * static_cast<double>(n) + 1e-9));
    }

    /// Doses on a day: total / days each, remainder one extra on the earliest days.
    std::int64_t quota(std::int32_t day, std::int64_t n) const {
        const std::int32_t r = day - start_day;
        if (r < 0 || r >= rollout_days) return 0;
        const std::int64_t T = total(n);
        const std::int64_t base = T / rollout_days;
        const std::int64_t rem = T % rollout_days;
        return base + (r < rem ? 1 : 0);
    }
};

/// Vaccinates the day's quota.  Random: uniform over never-vaccinated
/// individuals.  Age-descending: uniform within the first group in priority
/// order that still has unvaccinated members.  Returns the number vaccinated.
inline std::int64_t vaccinate_step(EpidemicState& state, const VaccinationPlan& plan, std::int32_t day, Rng& rng) {
    std::int64_t quota = plan.quota(day, state.population());
    if (quota <= 0) return 0;
    state.enable_vaccination();
    const double ratio = efficacy_to_immunity(plan.efficacy);
    const std::size_t L = state.groups();
    auto give = [&](std::int32_t i) {
        const std::size_t cls = state.immunity_class_for(state.immunity_mean(state.immunity_class(i)) * ratio);
        state.vaccinate(i, cls);
    };
    std::int64_t done = 0;
    if (plan.scheme == VaccinationScheme::random) {
        while (done < quota) {
            std::int64_t remaining = 0;
            for (std::size_t g = 0; g < L; ++g) remaining += state.unvaccinated_count(g);
            if (remaining == 0) break;
            std::uniform_int_distribution<std::int64_t> pick(0, remaining - 1);
            std::int64_t r = pick(rng);
            std::size_t g = 0;
            while (r >= state.unvaccinated_count(g)) r -= state.unvaccinated_count(g++);
            give(state.unvaccinated(g)[static_cast<std::size_t>(r)]);
            ++done;
        }
        return done;
    }
    std::vector<std::size_t> order = plan.priority;
    if (order.empty())
        for (std::size_t g = L; g-- > 0;) order.push_back(g);
    for (std::size_t g : order) {
        while (done < quota && state.unvaccinated_count(g) > 0) {
            std::uniform_int_distribution<std::int64_t> pick(0, state.unvaccinated_count(g) - 1);
            give(state.unvaccinated(g)[static_cast<std::size_t>(pick(rng))]);
            ++done;
        }
        if (done == quota) break;
    }
    return done;
}

/// Moves a path later by shift days (earlier if negative), padding with the
/// first and last values.
inline std::vector<double> shift_beta_path(std::span<const double> x, int shift) {
    if (x.empty()) return {};
    if (std::abs(shift) >= static_cast<int>(x.size())) throw InvalidParameter("shift must be shorter than the path");
    const auto T = static_cast<int>(x.size());
    std::vector<double> out(x.size());
    for (int t = 0; t < T; ++t) out[static_cast<std::size_t>(t)] = x[static_cast<std::size_t>(std::clamp(t - shift, 0, T - 1))];
    return out;
}

// ---------------------------------------------------------------------------
// Scenarios

enum class TransmissionKind { constant, schedule, path };

struct Scenario {
    // Population: the German five-group spec at `scale` individuals, or a single
    // ER group of size n with mean degree k.
    bool multigroup = true;
    double scale = 10000.0;
    std::int64_t n = 10000;
    double mean_contacts = 10.0;
    std::optional<GroupSpec> spec;  // overrides the two above when present
    std::vector<double> lambda = german_infection_ratios();
    double gamma = kDefaultGamma;
    /// R0 that the base exposure intensities are calibrated to.
    double r0_reference = 3.0;

    std::optional<double> r0;
    std::optional<DistancingSchedule> schedule;
    std::optional<std::vector<double>> beta_path;  // per simulation day, 1/day

    std::optional<VaccinationPlan> vaccination;

    std::int32_t replications = 1000;
    std::int32_t max_days = 1000;
    std::uint64_t seed = 0;
    double initial_fraction = 0.001;

    TransmissionKind kind() const {
        const int sources = (r0 ? 1 : 0) + (schedule ? 1 : 0) + (beta_path ? 1 : 0);
        if (sources != 1)
            throw InvariantViolation("exactly one transmission source",
                                     std::to_string(sources) + " of constant R0, schedule and beta path given");
        return r0 ? TransmissionKind::constant : schedule ? TransmissionKind::schedule : TransmissionKind::path;
    }

    GroupSpec resolved_spec() const {
        if (spec) return *spec;
        return multigroup ? german_spec(scale) : single_group_spec(n, mean_contacts);
    }
};

/// Simulation config for a scenario.  Exposure intensities are calibrated to
/// r0_reference with the linear beta form and then scaled daily by
/// level / r0_reference.  A beta path on a single group maps each day's beta
/// to tau = -log(1 - beta/k).
inline SimConfig scenario_config(const Scenario& sc) {
    const auto kind = sc.kind();
    SimConfig cfg;
    cfg.spec = sc.resolved_spec();
    cfg.spec.validate();
    const std::size_t L = cfg.spec.groups();
    cfg.gamma.assign(L, sc.gamma);
    cfg.replications = sc.replications;
    cfg.max_days = sc.max_days;
    cfg.seed = sc.seed;
    cfg.initial_fraction = sc.initial_fraction;

    std::vector<double> lambda = sc.lambda;
    if (lambda.size() != L) lambda.assign(L, 1.0);
    const double ref = kind == TransmissionKind::constant ? *sc.r0 : sc.r0_reference;
    if (!(ref > 0.0)) throw InvariantViolation("reference R0 > 0", std::to_string(ref));
    cfg.tau = calibrate_group_tau(cfg.spec, lambda, ref, sc.gamma);

    if (kind == TransmissionKind::schedule) {
        sc.schedule->validate();
        const auto sched = *sc.schedule;
        cfg.tau_scale = [sched, ref](std::int32_t day) { return schedule_beta_at(sched, day) / ref; };
    } else if (kind == TransmissionKind::path) {
        const auto path = *sc.beta_path;
        if (path.empty()) throw InvariantViolation("non-empty beta path", "path has no values");
        for (double b : path)
            if (!(b >= 0.0)) throw InvariantViolation("beta path >= 0", std::to_string(b));
        if (L == 1) {
            const double k = cfg.spec.contact(0, 0);
            cfg.tau = {1.0};
            cfg.tau_scale = [path, k](std::int32_t day) {
                const auto idx = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(day, 1) - 1), 0, path.size() - 1);
                return tau_from_beta(path[idx], k);
            };
        } else {
            const double beta_ref = ref * sc.gamma;
            cfg.tau_scale = [path, beta_ref](std::int32_t day) {
                const auto idx = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(day, 1) - 1), 0, path.size() - 1);
                return path[idx] / beta_ref;
            };
        }
    }

    if (sc.vaccination) {
        sc.vaccination->validate();
        const auto plan = *sc.vaccination;
        cfg.daily_hook = [plan](EpidemicState& st, std::int32_t day, Rng& rng) { vaccinate_step(st, plan, day, rng); };
    }
    cfg.validate();
    return cfg;
}

inline EnsembleResult run_counterfactual(const Scenario& sc, int threads = 0) {
    return run_ensemble(scenario_config(sc), threads);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    std::string unknown;
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw InvariantViolation("known keys", "unknown " + where + " keys: " + unknown);
}
}  // namespace detail

inline VaccinationPlan vaccination_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"coverage", "rollout_days", "start_day", "start_week", "scheme", "efficacy", "priority"}, "vaccination");
    VaccinationPlan p;
    p.coverage = j.value("coverage", p.coverage);
    p.rollout_days = j.value("rollout_days", p.rollout_days);
    if (j.contains("start_day") && j.contains("start_week"))
        throw InvariantViolation("one vaccination start", "give start_day or start_week, not both");
    p.start_day = j.value("start_day", p.start_day);
    if (j.contains("start_week")) p.start_day = week_start_day(j.at("start_week").get<std::int32_t>());
    p.efficacy = j.value("efficacy", p.efficacy);
    const auto scheme = j.value("scheme", std::string("random"));
    if (scheme == "random") p.scheme = VaccinationScheme::random;
    else if (scheme == "age_descending" || scheme == "age-descending") p.scheme = VaccinationScheme::age_descending;
    else throw InvariantViolation("vaccination scheme", "unknown scheme \"" + scheme + "\"");
    if (j.contains("priority")) p.priority = j.at("priority").get<std::vector<std::size_t>>();
    p.validate();
    return p;
}

inline nlohmann::json to_json(const VaccinationPlan& p) {
    return {{"coverage", p.coverage},
            {"rollout_days", p.rollout_days},
            {"start_day", p.start_day},
            {"scheme", p.scheme == VaccinationScheme::random ? "random" : "age_descending"},
            {"efficacy", p.efficacy},
            {"priority", p.priority}};
}

/// {"transmission": {"kind": "constant", "r0": 3} | {"kind": "schedule",
///  "breakpoints": [[day, level], ...], "r0_reference": 3} | {"kind": "path",
///  "beta": [...]}, "vaccination": {...}, "sim": {...}}
inline Scenario scenario_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"transmission", "vaccination", "sim"}, "scenario");
    Scenario sc;
    if (!j.contains("transmission") || j.at("transmission").is_null()) throw InvariantViolation("exactly one transmission source", "missing \"transmission\"");
    const auto& t = j.at("transmission");
    detail::reject_unknown(t, {"kind", "r0", "breakpoints", "beta", "shift_days", "r0_reference", "standard"}, "transmission");
    const auto kind = t.value("kind", std::string());
    const bool has_r0 = t.contains("r0");
    const bool has_bp = t.contains("breakpoints") || t.value("standard", false);
    const bool has_path = t.contains("beta");
    if ((has_r0 ? 1 : 0) + (has_bp ? 1 : 0) + (has_path ? 1 : 0) > 1)
        throw InvariantViolation("exactly one transmission source", "transmission block mixes r0, breakpoints and beta");
    if (kind == "constant") {
        sc.r0 = t.value("r0", 3.0);
    } else if (kind == "schedule") {
        DistancingSchedule s = DistancingSchedule::standard();
        if (t.contains("breakpoints")) s.breakpoints = t.at("breakpoints").get<std::vector<std::pair<double, double>>>();
        sc.schedule = s;
    } else if (kind == "path") {
        if (!has_path) throw InvariantViolation("exactly one transmission source", "path kind needs \"beta\"");
        sc.beta_path = t.at("beta").get<std::vector<double>>();
        if (const int shift = t.value("shift_days", 0); shift != 0) sc.beta_path = shift_beta_path(*sc.beta_path, shift);
    } else {
        throw InvariantViolation("transmission kind", "expected constant, schedule or path, got \"" + kind + "\"");
    }
    if (kind != "path" && t.contains("shift_days"))
        throw InvariantViolation("exactly one transmission source", "shift_days applies to the path kind only");
    if ((kind != "constant" && has_r0) || (kind != "schedule" && t.contains("breakpoints")) || (kind != "path" && has_path))
        throw InvariantViolation("exactly one transmission source", "fields conflict with kind \"" + kind + "\"");
    sc.r0_reference = t.value("r0_reference", sc.r0_reference);
    if (j.contains("vaccination") && !j.at("vaccination").is_null()) sc.vaccination = vaccination_from_json(j.at("vaccination"));
    if (j.contains("sim")) {
        const auto& s = j.at("sim");
        detail::reject_unknown(s, {"population", "scale", "n", "mean_contacts", "group_spec", "lambda", "gamma", "replications",
                                   "max_days", "seed", "initial_fraction"},
                               "sim");
        const auto pop = s.value("population", std::string("german"));
        if (pop == "german") sc.multigroup = true;
        else if (pop == "single") sc.multigroup = false;
        else throw InvariantViolation("population", "expected german or single, got \"" + pop + "\"");
        sc.scale = s.value("scale", sc.scale);
        sc.n = s.value("n", sc.n);
        sc.mean_contacts = s.value("mean_contacts", sc.mean_contacts);
        if (s.contains("group_spec") && !s.at("group_spec").is_null()) sc.spec = group_spec_from_json(s.at("group_spec"));
        if (s.contains("lambda")) sc.lambda = s.at("lambda").get<std::vector<double>>();
        sc.gamma = s.value("gamma", sc.gamma);
        sc.replications = s.value("replications", sc.replications);
        sc.max_days = s.value("max_days", sc.max_days);
        sc.seed = s.value("seed", sc.seed);
        sc.initial_fraction = s.value("initial_fraction", sc.initial_fraction);
    }
    if (!(sc.gamma > 0.0 && sc.gamma <= 1.0)) throw InvariantViolation("0 < gamma <= 1", std::to_string(sc.gamma));
    sc.kind();
    return sc;
}

inline nlohmann::json to_json(const Scenario& sc) {
    nlohmann::json t;
    switch (sc.kind()) {
        case TransmissionKind::constant: t = {{"kind", "constant"}, {"r0", *sc.r0}}; break;
        case TransmissionKind::schedule:
            t = {{"kind", "schedule"}, {"breakpoints", sc.schedule->breakpoints}, {"r0_reference", sc.r0_reference}};
            break;
        case TransmissionKind::path: t = {{"kind", "path"}, {"beta", *sc.beta_path}, {"r0_reference", sc.r0_reference}}; break;
    }
    nlohmann::json sim = {{"population", sc.multigroup ? "german" : "single"},
                          {"scale", sc.scale},
                          {"n", sc.n},
                          {"mean_contacts", sc.mean_contacts},
                          {"lambda", sc.lambda},
                          {"gamma", sc.gamma},
                          {"replications", sc.replications},
                          {"max_days", sc.max_days},
                          {"seed", sc.seed},
                          {"initial_fraction", sc.initial_fraction}};
    if (sc.spec) sim["group_spec"] = to_json(*sc.spec);
    nlohmann::json out = {{"transmission", t}, {"sim", sim}};
    out["vaccination"] = sc.vaccination ? to_json(*sc.vaccination) : nlohmann::json(nullptr);
    return out;
}

}  // namespace episir
