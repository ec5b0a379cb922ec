#pragma once

// Individual-based network SIR: state, daily stepping, replications and
// Monte Carlo ensembles.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "episir/common.hpp"
#include "episir/group_spec.hpp"
#include "episir/netgen.hpp"

namespace episir {

enum class Status : std::uint8_t { susceptible = 0, active = 1, removed = 2 };

/// Per-individual epidemic state with group tallies.
///
/// Susceptibles are kept in swap-remove pools keyed by (immunity class, group)
/// and active individuals in per-group lists, so drawing K members uniformly
/// from either costs O(K).
class EpidemicState {
public:
    static constexpr std::int32_t kNoDay = -1;

    explicit EpidemicState(const GroupSpec& spec, std::vector<double> immunity_means = {1.0})
        : sizes_(spec.sizes), mu_(std::move(immunity_means)) {
        if (mu_.empty()) mu_.push_back(1.0);
        for (double m : mu_)
            if (!(m > 0.0)) throw InvalidParameter("immunity means must be positive");
        const std::int64_t n = spec.population();
        if (n > std::numeric_limits<std::int32_t>::max()) throw InvalidParameter("population too large");
        const std::size_t L = sizes_.size();
        group_.resize(static_cast<std::size_t>(n));
        status_.assign(static_cast<std::size_t>(n), Status::susceptible);
        class_.assign(static_cast<std::size_t>(n), 0);
        infection_day_.assign(static_cast<std::size_t>(n), kNoDay);
        slot_.resize(static_cast<std::size_t>(n));
        pools_.assign(mu_.size() * L, {});
        active_.assign(L, {});
        C_.assign(L, 0);
        R_.assign(L, 0);
        std::int32_t i = 0;
        for (std::size_t g = 0; g < L; ++g) {
            auto& pool = pools_[g];
            pool.reserve(static_cast<std::size_t>(sizes_[g]));
            for (std::int64_t k = 0; k < sizes_[g]; ++k, ++i) {
                group_[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(g);
                slot_[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(pool.size());
                pool.push_back(i);
            }
        }
        if (L > 255) throw InvalidParameter("at most 255 groups are supported");
    }

    std::size_t groups() const noexcept { return sizes_.size(); }
    std::size_t immunity_classes() const noexcept { return mu_.size(); }
    std::int64_t population() const noexcept { return static_cast<std::int64_t>(status_.size()); }
    std::int64_t group_size(std::size_t g) const { return sizes_[g]; }

    std::size_t group_of(std::int32_t i) const { return group_[static_cast<std::size_t>(i)]; }
    Status status(std::int32_t i) const { return status_[static_cast<std::size_t>(i)]; }
    std::int32_t infection_day(std::int32_t i) const { return infection_day_[static_cast<std::size_t>(i)]; }
    std::size_t immunity_class(std::int32_t i) const { return class_[static_cast<std::size_t>(i)]; }
    double immunity_mean(std::size_t cls) const { return mu_[cls]; }
    double mu(std::int32_t i) const { return mu_[immunity_class(i)]; }

    std::span<std::int32_t> susceptible_pool(std::size_t cls, std::size_t g) { return pools_[cls * groups() + g]; }
    std::span<const std::int32_t> susceptible_pool(std::size_t cls, std::size_t g) const {
        return pools_[cls * groups() + g];
    }
    std::span<std::int32_t> active(std::size_t g) { return active_[g]; }
    std::span<const std::int32_t> active(std::size_t g) const { return active_[g]; }

    std::int64_t C(std::size_t g) const { return C_[g]; }
    std::int64_t R(std::size_t g) const { return R_[g]; }
    std::int64_t I(std::size_t g) const { return C_[g] - R_[g]; }
    std::int64_t S(std::size_t g) const { return sizes_[g] - C_[g]; }
    std::int64_t total_active() const {
        std::int64_t s = 0;
        for (std::size_t g = 0; g < groups(); ++g) s += I(g);
        return s;
    }
    std::vector<std::int64_t> active_counts() const {
        std::vector<std::int64_t> v(groups());
        for (std::size_t g = 0; g < groups(); ++g) v[g] = I(g);
        return v;
    }

    /// Current day index (seeds are placed on day 1).
    std::int32_t day = 1;

    void infect(std::int32_t i, std::int32_t on_day) {
        const auto u = static_cast<std::size_t>(i);
        if (status_[u] != Status::susceptible) throw InvariantViolation("infect susceptible only", "individual " + std::to_string(i));
        const std::size_t g = group_[u];
        pool_erase(pools_[class_[u] * groups() + g], i);
        status_[u] = Status::active;
        infection_day_[u] = on_day;
        slot_[u] = static_cast<std::int32_t>(active_[g].size());
        active_[g].push_back(i);
        ++C_[g];
    }

    void remove(std::int32_t i) {
        const auto u = static_cast<std::size_t>(i);
        if (status_[u] != Status::active) throw InvariantViolation("remove active only", "individual " + std::to_string(i));
        const std::size_t g = group_[u];
        pool_erase(active_[g], i);
        status_[u] = Status::removed;
        ++R_[g];
    }

    /// Index of the immunity class with mean mu, added if new.
    std::size_t immunity_class_for(double mu) {
        for (std::size_t c = 0; c < mu_.size(); ++c)
            if (mu_[c] == mu) return c;
        if (mu_.size() >= 255) throw InvalidParameter("too many immunity classes");
        const std::size_t L = groups();
        std::vector<std::vector<std::int32_t>> grown(pools_.size() + L);
        for (std::size_t k = 0; k < pools_.size(); ++k) grown[k] = std::move(pools_[k]);
        pools_ = std::move(grown);
        mu_.push_back(mu);
        return mu_.size() - 1;
    }

    void set_immunity_class(std::int32_t i, std::size_t cls) {
        const auto u = static_cast<std::size_t>(i);
        if (cls >= mu_.size()) throw InvalidParameter("unknown immunity class");
        if (class_[u] == cls) return;
        if (status_[u] == Status::susceptible) {
            const std::size_t g = group_[u];
            pool_erase(pools_[class_[u] * groups() + g], i);
            auto& dst = pools_[cls * groups() + g];
            slot_[u] = static_cast<std::int32_t>(dst.size());
            dst.push_back(i);
        }
        class_[u] = static_cast<std::uint8_t>(cls);
    }

    /// k members drawn uniformly without replacement from a susceptible pool.
    std::vector<std::int32_t> sample_susceptible(std::size_t cls, std::size_t g, std::int64_t k, Rng& rng) {
        return sample_tail(pools_[cls * groups() + g], k, rng);
    }

    /// k members drawn uniformly without replacement from a group's active list.
    std::vector<std::int32_t> sample_active(std::size_t g, std::int64_t k, Rng& rng) {
        return sample_tail(active_[g], k, rng);
    }

    // --- vaccination bookkeeping (built on first use) ---

    bool vaccination_enabled() const noexcept { return !unvacc_slot_.empty(); }

    void enable_vaccination() {
        if (vaccination_enabled()) return;
        unvacc_.assign(groups(), {});
        unvacc_slot_.resize(status_.size());
        for (std::int32_t i = 0; i < static_cast<std::int32_t>(status_.size()); ++i) {
            auto& list = unvacc_[group_[static_cast<std::size_t>(i)]];
            unvacc_slot_[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(list.size());
            list.push_back(i);
        }
    }

    std::span<std::int32_t> unvaccinated(std::size_t g) { return unvacc_[g]; }
    std::int64_t unvaccinated_count(std::size_t g) const {
        return vaccination_enabled() ? static_cast<std::int64_t>(unvacc_[g].size()) : sizes_[g];
    }
    bool vaccinated(std::int32_t i) const {
        return vaccination_enabled() && unvacc_slot_[static_cast<std::size_t>(i)] < 0;
    }

    /// Marks i vaccinated, moving it to immunity class cls.
    void vaccinate(std::int32_t i, std::size_t cls) {
        enable_vaccination();
        const auto u = static_cast<std::size_t>(i);
        if (unvacc_slot_[u] < 0) throw InvariantViolation("vaccinated at most once", "individual " + std::to_string(i));
        auto& list = unvacc_[group_[u]];
        const auto pos = static_cast<std::size_t>(unvacc_slot_[u]);
        const std::int32_t last = list.back();
        list[pos] = last;
        unvacc_slot_[static_cast<std::size_t>(last)] = static_cast<std::int32_t>(pos);
        list.pop_back();
        unvacc_slot_[u] = -1;
        set_immunity_class(i, cls);
    }

    /// Full consistency check; O(n).
    void check_invariants() const {
        for (std::size_t g = 0; g < groups(); ++g) {
            if (I(g) < 0 || S(g) < 0) throw InvariantViolation("non-negative compartments", "group " + std::to_string(g));
            std::int64_t pooled = 0;
            for (std::size_t c = 0; c < mu_.size(); ++c) pooled += static_cast<std::int64_t>(pools_[c * groups() + g].size());
            if (pooled != S(g)) throw InvariantViolation("susceptible pool size", "group " + std::to_string(g));
            if (static_cast<std::int64_t>(active_[g].size()) != I(g))
                throw InvariantViolation("active list size", "group " + std::to_string(g));
        }
        std::vector<std::int64_t> c(groups(), 0), r(groups(), 0);
        for (std::size_t u = 0; u < status_.size(); ++u) {
            if (status_[u] != Status::susceptible) ++c[group_[u]];
            if (status_[u] == Status::removed) ++r[group_[u]];
        }
        for (std::size_t g = 0; g < groups(); ++g)
            if (c[g] != C_[g] || r[g] != R_[g]) throw InvariantViolation("tallies match individuals", "group " + std::to_string(g));
    }

private:
    // Moves k uniformly chosen elements to the tail, keeping slots in sync.
    std::vector<std::int32_t> sample_tail(std::vector<std::int32_t>& v, std::int64_t k, Rng& rng) {
        if (k < 0 || static_cast<std::size_t>(k) > v.size()) throw InvalidParameter("sample size exceeds pool");
        std::vector<std::int32_t> out;
        out.reserve(static_cast<std::size_t>(k));
        std::size_t end = v.size();
        for (std::int64_t j = 0; j < k; ++j, --end) {
            std::uniform_int_distribution<std::size_t> pick(0, end - 1);
            const std::size_t a = pick(rng);
            const std::size_t b = end - 1;
            std::swap(v[a], v[b]);
            slot_[static_cast<std::size_t>(v[a])] = static_cast<std::int32_t>(a);
            slot_[static_cast<std::size_t>(v[b])] = static_cast<std::int32_t>(b);
            out.push_back(v[b]);
        }
        return out;
    }

    void pool_erase(std::vector<std::int32_t>& pool, std::int32_t i) {
        const auto pos = static_cast<std::size_t>(slot_[static_cast<std::size_t>(i)]);
        const std::int32_t last = pool.back();
        pool[pos] = last;
        slot_[static_cast<std::size_t>(last)] = static_cast<std::int32_t>(pos);
        pool.pop_back();
    }

    std::vector<std::int64_t> sizes_;
    std::vector<double> mu_;
    std::vector<std::uint8_t> group_;
    std::vector<Status> status_;
    std::vector<std::uint8_t> class_;
    std::vector<std::int32_t> infection_day_;
    std::vector<std::int32_t> slot_;  // position in the susceptible pool or active list
    std::vector<std::vector<std::int32_t>> pools_;
    std::vector<std::vector<std::int32_t>> active_;
    std::vector<std::int64_t> C_;
    std::vector<std::int64_t> R_;
    std::vector<std::vector<std::int32_t>> unvacc_;
    std::vector<std::int32_t> unvacc_slot_;
};

namespace detail {

inline std::int64_t binomial(std::int64_t trials, double p, Rng& rng) {
    if (trials <= 0 || p <= 0.0) return 0;
    if (p >= 1.0) return trials;
    return std::binomial_distribution<std::int64_t>(trials, p)(rng);
}

}  // namespace detail

/// Places round(fraction * n) initial infections drawn uniformly without
/// replacement from the whole population, infected on the current day.
inline std::vector<std::int32_t> seed_initial_infections(EpidemicState& state, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidParameter("initial infected fraction must lie in (0, 1)");
    const auto k = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(state.population())));
    if (k < 1) throw InvalidParameter("initial infected fraction rounds to zero individuals");
    std::vector<std::int32_t> idx(static_cast<std::size_t>(state.population()));
    for (std::size_t u = 0; u < idx.size(); ++u) idx[u] = static_cast<std::int32_t>(u);
    std::vector<std::int32_t> seeds;
    for (std::int64_t j = 0; j < k; ++j) {
        std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1 - static_cast<std::size_t>(j));
        std::swap(idx[pick(rng)], idx[idx.size() - 1 - static_cast<std::size_t>(j)]);
        seeds.push_back(idx[idx.size() - 1 - static_cast<std::size_t>(j)]);
    }
    for (auto i : seeds) state.infect(i, state.day);
    return seeds;
}

/// Exponential-threshold infection decisions for the listed susceptibles,
/// given each one's number of active contacts today.  Draws a fresh
/// xi ~ Exp(mean mu_i) per individual; infection iff xi < tau_l * m.
inline std::vector<std::int32_t> step_infection(const EpidemicState& state, std::span<const std::int32_t> susceptibles,
                                                std::span<const std::int32_t> contact_counts,
                                                std::span<const double> tau, Rng& rng) {
    std::vector<std::int32_t> infected;
    std::exponential_distribution<double> unit(1.0);
    for (std::size_t s = 0; s < susceptibles.size(); ++s) {
        const std::int32_t m = contact_counts[s];
        if (m <= 0) continue;
        const std::int32_t i = susceptibles[s];
        const double xi = unit(rng) * state.mu(i);
        if (xi < tau[state.group_of(i)] * static_cast<double>(m)) infected.push_back(i);
    }
    return infected;
}

/// Probability that a susceptible of group g with immunity mean mu is
/// infected in one day, exact under independent Bernoulli edges:
/// 1 - prod_l' (1 - p_gl' (1 - e^{-tau_g/mu}))^{I_l'}.
inline double daily_infection_probability(const SquareMatrix& edge_probs, std::span<const std::int64_t> active,
                                          std::size_t g, double tau_g, double mu) {
    const double per_contact = -std::expm1(-tau_g / mu);
    double log_escape = 0.0;
    for (std::size_t h = 0; h < active.size(); ++h)
        if (active[h] > 0) log_escape += static_cast<double>(active[h]) * std::log1p(-edge_probs(g, h) * per_contact);
    return -std::expm1(log_escape);
}

/// Infection decisions from per-class infection probabilities: K ~ Bin(S, q)
/// per (group, immunity class), K chosen uniformly from the pool.  Same law
/// as drawing contacts and thresholds individually.
inline std::vector<std::int32_t> step_infection_marginal(EpidemicState& state, const SquareMatrix& edge_probs,
                                                         std::span<const double> tau, Rng& rng) {
    std::vector<std::int32_t> infected;
    const auto act = state.active_counts();
    bool any = false;
    for (auto a : act) any = any || a > 0;
    if (!any) return infected;
    for (std::size_t c = 0; c < state.immunity_classes(); ++c)
        for (std::size_t g = 0; g < state.groups(); ++g) {
            auto pool = state.susceptible_pool(c, g);
            if (pool.empty() || tau[g] <= 0.0) continue;
            const double q = daily_infection_probability(edge_probs, act, g, tau[g], state.immunity_mean(c));
            const std::int64_t k = detail::binomial(static_cast<std::int64_t>(pool.size()), q, rng);
            auto chosen = state.sample_susceptible(c, g, k, rng);
            infected.insert(infected.end(), chosen.begin(), chosen.end());
        }
    return infected;
}

inline void commit_infections(EpidemicState& state, std::span<const std::int32_t> infected, std::int32_t on_day) {
    for (auto i : infected) state.infect(i, on_day);
}

/// Recovery hazard after s days of infection (s = 1 on the first chance) for
/// a geometric law truncated at D days; equals 1 at s = D.
inline double truncated_hazard(std::int32_t s, std::int32_t D, double gamma) {
    if (D < 1) throw InvalidParameter("truncated recovery needs D >= 1");
    if (s < 1) throw InvalidParameter("infection duration s must be >= 1");
    if (s >= D) return 1.0;
    return gamma / (1.0 - std::pow(1.0 - gamma, static_cast<double>(D - s + 1)));
}

struct RecoveryMode {
    bool truncated = false;
    std::vector<std::int32_t> max_days;  // D_l per group when truncated
};

/// Removes active individuals: each independently with probability gamma_l
/// (geometric), or with the truncated hazard given infection duration.
/// Operates on the active set as it stands on entry.  Returns the count removed.
inline std::int64_t step_recovery(EpidemicState& state, std::span<const double> gamma, const RecoveryMode& mode,
                                  Rng& rng) {
    std::int64_t removed = 0;
    for (std::size_t g = 0; g < state.groups(); ++g) {
        auto act = state.active(g);
        if (act.empty()) continue;
        if (!mode.truncated) {
            const std::int64_t k = detail::binomial(static_cast<std::int64_t>(act.size()), gamma[g], rng);
            auto chosen = state.sample_active(g, k, rng);
            for (auto i : chosen) state.remove(i);
            removed += k;
        } else {
            const std::int32_t D = mode.max_days.at(g);
            std::vector<std::int32_t> out;
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            for (auto i : act) {
                const std::int32_t s = state.day - state.infection_day(i) + 1;
                if (u01(rng) < truncated_hazard(s, D, gamma[g])) out.push_back(i);
            }
            for (auto i : out) state.remove(i);
            removed += static_cast<std::int64_t>(out.size());
        }
    }
    return removed;
}

// ---------------------------------------------------------------------------
// Configuration and replications

enum class InfectionPath { marginal, binomial_counts, explicit_network };
enum class NetworkKind { bernoulli, power_law };

/// Called once per day before transmission: (state, day, intervention stream).
using DailyHook = std::function<void(EpidemicState&, std::int32_t, Rng&)>;

struct SimConfig {
    GroupSpec spec;
    std::vector<double> tau;
    std::vector<double> gamma;
    RecoveryMode recovery;
    double initial_fraction = 0.001;
    /// Multiplier on every tau_l for the transition out of day t.
    std::function<double(std::int32_t)> tau_scale;
    std::int32_t replications = 1000;
    std::int32_t max_days = 1000;
    std::uint64_t seed = 0;
    InfectionPath path = InfectionPath::marginal;
    NetworkKind network = NetworkKind::bernoulli;
    netgen::DegreeLaw degree_law;  // used when network == power_law
    DailyHook daily_hook;

    void validate() const {
        spec.validate();
        const std::size_t L = spec.groups();
        if (tau.size() != L) throw InvariantViolation("tau per group", "expected " + std::to_string(L) + " values");
        if (gamma.size() != L) throw InvariantViolation("gamma per group", "expected " + std::to_string(L) + " values");
        for (double t : tau)
            if (!(t >= 0.0) || !std::isfinite(t)) throw InvariantViolation("tau >= 0", "tau = " + std::to_string(t));
        for (double g : gamma)
            if (!(g > 0.0 && g <= 1.0)) throw InvariantViolation("0 < gamma <= 1", "gamma = " + std::to_string(g));
        if (!(initial_fraction > 0.0 && initial_fraction < 1.0))
            throw InvariantViolation("0 < initial fraction < 1", "initial fraction = " + std::to_string(initial_fraction));
        if (replications < 1) throw InvariantViolation("B >= 1", "B = " + std::to_string(replications));
        if (max_days < 2) throw InvariantViolation("max days >= 2", "max days = " + std::to_string(max_days));
        if (recovery.truncated) {
            if (recovery.max_days.size() != L) throw InvariantViolation("D per group", "expected " + std::to_string(L) + " values");
            for (auto d : recovery.max_days)
                if (d < 1) throw InvariantViolation("D >= 1", "D = " + std::to_string(d));
        }
        if (network == NetworkKind::power_law) {
            if (L != 1) throw InvariantViolation("power law is single-group", "spec has " + std::to_string(L) + " groups");
            if (path != InfectionPath::explicit_network)
                throw InvariantViolation("power law needs explicit networks", "set path to explicit_network");
            degree_law.validate(spec.population());
        }
    }
};

/// Convenience: single-group ER config with tau = beta / k.
inline SimConfig single_group_config(std::int64_t n, double k, double beta, double gamma = kDefaultGamma) {
    SimConfig cfg;
    cfg.spec = single_group_spec(n, k);
    cfg.tau = {beta / k};
    cfg.gamma = {gamma};
    return cfg;
}

/// Daily cumulative (C) and removed (R) counts of one replication, day-major.
struct ReplicationSeries {
    std::size_t groups = 1;
    std::vector<std::int32_t> C;  // [(day-1) * groups + g]
    std::vector<std::int32_t> R;
    std::int32_t T_star = 0;      // first day with no active case, or max_days
    bool censored = false;        // epidemic still active at max_days

    std::int32_t days() const { return static_cast<std::int32_t>(C.size() / std::max<std::size_t>(groups, 1)); }
    std::int32_t C_at(std::int32_t day, std::size_t g) const { return at(C, day, g); }
    std::int32_t R_at(std::int32_t day, std::size_t g) const { return at(R, day, g); }

private:
    // Constant extension past the last recorded day.
    std::int32_t at(const std::vector<std::int32_t>& v, std::int32_t day, std::size_t g) const {
        const std::int32_t d = std::min(day, days());
        return v[static_cast<std::size_t>(d - 1) * groups + g];
    }
};

/// One resumable epidemic path.  Holds a pointer to its config, which must
/// outlive it.
class Replication {
public:
    Replication(const SimConfig& cfg, std::uint64_t index)
        : cfg_(&cfg),
          state_(cfg.spec),
          rng_(make_stream(cfg.seed, index, StreamSalt::epidemic)),
          hook_rng_(make_stream(cfg.seed, index, StreamSalt::intervention)),
          edge_probs_(edge_probabilities(cfg.spec)),
          tau_buf_(cfg.tau.size()) {
        series_.groups = cfg.spec.groups();
        seed_initial_infections(state_, cfg.initial_fraction, rng_);
        record();
        check_end();
    }

    const EpidemicState& state() const { return state_; }
    EpidemicState& state() { return state_; }
    const ReplicationSeries& series() const { return series_; }
    std::int32_t day() const { return state_.day; }
    bool finished() const { return finished_; }

    /// One transition day -> day+1 with every tau multiplied by scale.
    void step(double scale) {
        if (finished_) return;
        const std::int32_t t = state_.day;
        if (cfg_->daily_hook) cfg_->daily_hook(state_, t, hook_rng_);
        for (std::size_t g = 0; g < tau_buf_.size(); ++g) tau_buf_[g] = cfg_->tau[g] * scale;
        auto infected = decide_infections();
        step_recovery(state_, cfg_->gamma, cfg_->recovery, rng_);
        commit_infections(state_, infected, t + 1);
        state_.day = t + 1;
        record();
        check_end();
    }

    /// Steps with the configured tau_scale (or 1) until the epidemic ends or
    /// the given day is reached.
    void run_until(std::int32_t last_day) {
        while (!finished_ && state_.day < last_day) step(cfg_->tau_scale ? cfg_->tau_scale(state_.day) : 1.0);
    }

    void run() { run_until(cfg_->max_days); }

private:
    std::vector<std::int32_t> decide_infections() {
        switch (cfg_->path) {
            case InfectionPath::marginal:
                return step_infection_marginal(state_, edge_probs_, tau_buf_, rng_);
            case InfectionPath::binomial_counts: {
                const auto act = state_.active_counts();
                std::vector<std::int32_t> sus, grp;
                for (std::int32_t i = 0; i < static_cast<std::int32_t>(state_.population()); ++i)
                    if (state_.status(i) == Status::susceptible) {
                        sus.push_back(i);
                        grp.push_back(static_cast<std::int32_t>(state_.group_of(i)));
                    }
                const auto m = netgen::binomial_contact_counts(act, edge_probs_, grp, rng_);
                return step_infection(state_, sus, m, tau_buf_, rng_);
            }
            case InfectionPath::explicit_network: {
                const auto net = cfg_->network == NetworkKind::power_law
                                     ? netgen::sample_power_law_network(state_.population(), cfg_->degree_law, rng_)
                                     : netgen::sample_sbm_network(cfg_->spec, rng_);
                std::vector<std::uint8_t> flag(static_cast<std::size_t>(state_.population()), 0);
                std::vector<std::int32_t> sus;
                for (std::int32_t i = 0; i < static_cast<std::int32_t>(flag.size()); ++i) {
                    if (state_.status(i) == Status::active) flag[static_cast<std::size_t>(i)] = 1;
                    else if (state_.status(i) == Status::susceptible) sus.push_back(i);
                }
                const auto all = netgen::count_active_contacts(net, flag);
                std::vector<std::int32_t> m(sus.size());
                for (std::size_t s = 0; s < sus.size(); ++s) m[s] = all[static_cast<std::size_t>(sus[s])];
                return step_infection(state_, sus, m, tau_buf_, rng_);
            }
        }
        return {};
    }

    void record() {
        for (std::size_t g = 0; g < state_.groups(); ++g) {
            series_.C.push_back(static_cast<std::int32_t>(state_.C(g)));
            series_.R.push_back(static_cast<std::int32_t>(state_.R(g)));
        }
    }

    void check_end() {
        if (state_.total_active() == 0) {
            finished_ = true;
            series_.T_star = state_.day;
            series_.censored = false;
        } else if (state_.day >= cfg_->max_days) {
            finished_ = true;
            series_.T_star = cfg_->max_days;
            series_.censored = true;
        }
    }

    const SimConfig* cfg_;
    EpidemicState state_;
    Rng rng_;
    Rng hook_rng_;
    SquareMatrix edge_probs_;
    std::vector<double> tau_buf_;
    ReplicationSeries series_;
    bool finished_ = false;
};

inline ReplicationSeries run_replication(const SimConfig& cfg, std::uint64_t index) {
    Replication rep(cfg, index);
    rep.run();
    return rep.series();
}

/// Worker count: explicit value if positive, else EPISIR_THREADS, else hardware.
inline unsigned resolve_threads(int requested = 0) {
    if (requested > 0) return static_cast<unsigned>(requested);
    if (const char* env = std::getenv("EPISIR_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(b) for b in [0, count) on a pool of workers.  fn must only write
/// to slot b of its outputs.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (threads == 1) {
        for (std::size_t b = 0; b < count; ++b) fn(b);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            while (!failed.load()) {
                const std::size_t b = next.fetch_add(1);
                if (b >= count) break;
                try {
                    fn(b);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Ensembles

struct Band {
    std::vector<double> mean, p10, p25, p50, p75, p90;
};

enum class SeriesKind { cumulative, active, removed, new_cases };

class EnsembleResult {
public:
    EnsembleResult() = default;
    EnsembleResult(std::vector<std::int64_t> sizes, std::vector<ReplicationSeries> reps, std::uint64_t seed)
        : sizes_(std::move(sizes)), reps_(std::move(reps)), seed_(seed) {
        for (const auto& r : reps_) horizon_ = std::max(horizon_, r.days());
    }

    std::size_t B() const { return reps_.size(); }
    std::size_t groups() const { return sizes_.size(); }
    std::uint64_t seed() const { return seed_; }
    std::int32_t horizon() const { return horizon_; }
    const std::vector<ReplicationSeries>& replications() const { return reps_; }
    std::int64_t population() const {
        std::int64_t n = 0;
        for (auto s : sizes_) n += s;
        return n;
    }

    /// Per-capita value of a series for replication b on a day (1-based);
    /// group < 0 means the aggregate.
    double value(std::size_t b, SeriesKind kind, std::int32_t day, int group = -1) const {
        const auto& r = reps_[b];
        auto raw = [&](std::int32_t d, std::size_t g) -> double {
            switch (kind) {
                case SeriesKind::cumulative: return r.C_at(d, g);
                case SeriesKind::removed: return r.R_at(d, g);
                case SeriesKind::active: return r.C_at(d, g) - r.R_at(d, g);
                case SeriesKind::new_cases: return d <= 1 ? r.C_at(1, g) : r.C_at(d, g) - r.C_at(d - 1, g);
            }
            return 0.0;
        };
        if (group >= 0) return raw(day, static_cast<std::size_t>(group)) / static_cast<double>(sizes_[static_cast<std::size_t>(group)]);
        double s = 0.0;
        for (std::size_t g = 0; g < groups(); ++g) s += raw(day, g);
        return s / static_cast<double>(population());
    }

    /// Mean and percentile bands over replications for days 1..horizon.
    Band band(SeriesKind kind, int group = -1, std::int32_t horizon = 0) const {
        if (horizon <= 0) horizon = horizon_;
        Band out;
        std::vector<double> x(B());
        for (std::int32_t d = 1; d <= horizon; ++d) {
            double sum = 0.0;
            for (std::size_t b = 0; b < B(); ++b) {
                x[b] = value(b, kind, d, group);
                sum += x[b];
            }
            std::sort(x.begin(), x.end());
            out.mean.push_back(sum / static_cast<double>(B()));
            out.p10.push_back(quantile_sorted(x, 0.10));
            out.p25.push_back(quantile_sorted(x, 0.25));
            out.p50.push_back(quantile_sorted(x, 0.50));
            out.p75.push_back(quantile_sorted(x, 0.75));
            out.p90.push_back(quantile_sorted(x, 0.90));
        }
        return out;
    }

    /// Mean over replications of the final (maximum) cumulative share.
    double c_star(int group = -1) const {
        double s = 0.0;
        for (std::size_t b = 0; b < B(); ++b) s += value(b, SeriesKind::cumulative, reps_[b].days(), group);
        return s / static_cast<double>(B());
    }

    std::vector<double> c_star_by_group() const {
        std::vector<double> v(groups());
        for (std::size_t g = 0; g < groups(); ++g) v[g] = c_star(static_cast<int>(g));
        return v;
    }

    double T_star() const {
        double s = 0.0;
        for (const auto& r : reps_) s += r.T_star;
        return s / static_cast<double>(B());
    }

    std::size_t censored() const {
        return static_cast<std::size_t>(std::count_if(reps_.begin(), reps_.end(), [](const auto& r) { return r.censored; }));
    }

    nlohmann::json summary_json() const {
        return {{"c_star", c_star()},
                {"c_star_by_group", c_star_by_group()},
                {"T_star", T_star()},
                {"B", B()},
                {"seed", seed_},
                {"censored", censored()}};
    }

private:
    std::vector<std::int64_t> sizes_;
    std::vector<ReplicationSeries> reps_;
    std::uint64_t seed_ = 0;
    std::int32_t horizon_ = 0;
};

inline EnsembleResult run_ensemble(const SimConfig& cfg, int threads = 0) {
    cfg.validate();
    std::vector<ReplicationSeries> reps(static_cast<std::size_t>(cfg.replications));
    parallel_for(reps.size(), resolve_threads(threads), [&](std::size_t b) { reps[b] = run_replication(cfg, b); });
    return EnsembleResult(cfg.spec.sizes, std::move(reps), cfg.seed);
}

/// Fan-chart CSV: day, mean, p10, p25, p50, p75, p90.
inline void write_band_csv(std::ostream& os, const Band& band) {
    os << "day,mean,p10,p25,p50,p75,p90\n";
    os.precision(10);
    for (std::size_t d = 0; d < band.mean.size(); ++d)
        os << d + 1 << ',' << band.mean[d] << ',' << band.p10[d] << ',' << band.p25[d] << ',' << band.p50[d] << ','
           << band.p75[d] << ',' << band.p90[d] << '\n';
}

inline const char* series_name(SeriesKind k) {
    switch (k) {
        case SeriesKind::cumulative: return "cumulative";
        case SeriesKind::active: return "active";
        case SeriesKind::removed: return "removed";
        case SeriesKind::new_cases: return "new_cases";
    }
    return "";
}

}  // namespace episir
