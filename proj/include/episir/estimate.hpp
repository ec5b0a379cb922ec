#pragma once

// Rolling transmission-rate estimation, recovery-rate OLS, and joint
// estimation of transmission and under-reporting (multiplication factor).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "episir/common.hpp"
#include "episir/series.hpp"
#include "episir/simcore.hpp"

namespace episir {

/// Minimizer of f on [lo, hi]: a uniform grid locates the best cell, then
/// golden-section search refines inside the neighbouring cells.
inline double minimize_scalar(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10,
                              int grid = 200) {
    double best_x = lo;
    double best_f = f(lo);
    const double h = (hi - lo) / grid;
    for (int k = 1; k <= grid; ++k) {
        const double x = lo + h * k;
        const double fx = f(x);
        if (fx < best_f) {
            best_f = fx;
            best_x = x;
        }
    }
    double a = std::max(lo, best_x - h);
    double b = std::min(hi, best_x + h);
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - r * (b - a);
    double x2 = a + r * (b - a);
    double f1 = f(x1);
    double f2 = f(x2);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    const double x = 0.5 * (a + b);
    return f(x) <= best_f ? x : best_x;
}

/// Sum over tau = t-W+1..t of [(1 - c_tau)/(1 - c_{tau-1}) - e^{-beta i_{tau-1}}]^2.
/// Indices are positions in the series.
inline double beta_objective(std::span<const double> c, std::span<const double> i, std::size_t t, int W, double beta) {
    double s = 0.0;
    for (std::size_t tau = t + 1 - static_cast<std::size_t>(W); tau <= t; ++tau) {
        const double e = (1.0 - c[tau]) / (1.0 - c[tau - 1]) - std::exp(-beta * i[tau - 1]);
        s += e * e;
    }
    return s;
}

inline constexpr double kBetaUpper = 2.0;
inline constexpr double kBetaTolerance = 1e-10;

/// beta_hat for the window ending at position t; NaN when undefined
/// (window incomplete, no active cases in it, or c reaching 1).
inline double fit_beta_window(std::span<const double> c, std::span<const double> i, std::size_t t, int W) {
    if (W < 2) throw InvalidParameter("beta window must be at least 2 days");
    if (t < static_cast<std::size_t>(W) || t >= c.size()) return kNaN;
    bool any = false;
    for (std::size_t tau = t + 1 - static_cast<std::size_t>(W); tau <= t; ++tau) {
        if (!(c[tau - 1] < 1.0) || !std::isfinite(c[tau]) || !std::isfinite(i[tau - 1])) return kNaN;
        any = any || i[tau - 1] > 0.0;
    }
    if (!any) return kNaN;
    return minimize_scalar([&](double b) { return beta_objective(c, i, t, W, b); }, 0.0, kBetaUpper, kBetaTolerance);
}

/// Rolling beta_hat_t(W) for every position; NaN where undefined.
inline std::vector<double> fit_beta_rolling(std::span<const double> c, std::span<const double> i, int W) {
    if (c.size() != i.size()) throw InvalidParameter("fit_beta_rolling: c and i differ in length");
    std::vector<double> out(c.size(), kNaN);
    for (std::size_t t = 0; t < c.size(); ++t) out[t] = fit_beta_window(c, i, t, W);
    return out;
}

/// Rolling beta_hat on observed series corrected by a multiplication factor
/// series m: uses c = m c_obs and i = m i_obs pointwise.
inline std::vector<double> fit_beta_rolling_mf(std::span<const double> c_obs, std::span<const double> i_obs,
                                               std::span<const double> m, int W) {
    std::vector<double> c(c_obs.size()), i(i_obs.size());
    for (std::size_t t = 0; t < c.size(); ++t) {
        c[t] = m[t] * c_obs[t];
        i[t] = m[t] * i_obs[t];
    }
    return fit_beta_rolling(c, i, W);
}

/// No-intercept OLS of delta r_{t+1} on i_t: sum dr*i / sum i^2.  NaN if
/// sum i^2 = 0 or fewer than two usable points.
inline double fit_gamma_ols(std::span<const double> r, std::span<const double> i) {
    if (r.size() != i.size()) throw InvalidParameter("fit_gamma_ols: r and i differ in length");
    if (r.size() < 3) return kNaN;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t t = 0; t + 1 < r.size(); ++t) {
        num += (r[t + 1] - r[t]) * i[t];
        den += i[t] * i[t];
    }
    return den > 0.0 ? num / den : kNaN;
}

/// gamma_hat on the window of W increments ending at position t.
inline double fit_gamma_window(std::span<const double> r, std::span<const double> i, std::size_t t, int W) {
    if (W < 2) throw InvalidParameter("gamma window must be at least 2 days");
    if (t < static_cast<std::size_t>(W) || t >= r.size()) return kNaN;
    const std::size_t lo = t - static_cast<std::size_t>(W);
    return fit_gamma_ols(r.subspan(lo, static_cast<std::size_t>(W) + 1), i.subspan(lo, static_cast<std::size_t>(W) + 1));
}

inline std::vector<double> fit_gamma_rolling(std::span<const double> r, std::span<const double> i, int W) {
    std::vector<double> out(r.size(), kNaN);
    for (std::size_t t = 0; t < r.size(); ++t) out[t] = fit_gamma_window(r, i, t, W);
    return out;
}

struct MfEstimate {
    double value = kNaN;  // clamped at 1; NaN when undefined
    double raw = kNaN;
    bool clamped = false;
    bool undefined = false;
};

/// Simulated-moment estimate of the multiplication factor over the W_m days
/// ending at position t:
///   m = mean_tau(1 - A_tau) / mean_tau(c_obs_tau - A_tau c_obs_{tau-1}),
///   A_tau = B^{-1} sum_b exp(-beta_{tau-1} i^{(b)}_{tau-1}).
/// sim_i[b][tau] is the simulated active share of replication b at position tau.
inline MfEstimate estimate_mf_window(std::span<const double> c_obs, std::span<const double> beta,
                                     const std::vector<std::vector<double>>& sim_i, std::size_t t, int W_m) {
    MfEstimate out;
    if (W_m < 1 || t < static_cast<std::size_t>(W_m) || t >= c_obs.size() || sim_i.empty()) {
        out.undefined = true;
        return out;
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t tau = t + 1 - static_cast<std::size_t>(W_m); tau <= t; ++tau) {
        const double b = beta[tau - 1];
        if (!std::isfinite(b)) {
            out.undefined = true;
            return out;
        }
        double A = 0.0;
        for (const auto& path : sim_i) A += std::exp(-b * path[tau - 1]);
        A /= static_cast<double>(sim_i.size());
        num += 1.0 - A;
        den += c_obs[tau] - A * c_obs[tau - 1];
    }
    if (!(den > 0.0)) {
        out.undefined = true;
        return out;
    }
    out.raw = num / den;
    out.clamped = out.raw < 1.0;
    out.value = std::max(1.0, out.raw);
    return out;
}

// ---------------------------------------------------------------------------
// Joint estimation

namespace flag {
inline constexpr std::uint32_t beta_undefined = 1u << 0;
inline constexpr std::uint32_t pre_identification = 1u << 1;  // MF guess in use
inline constexpr std::uint32_t mf_clamped = 1u << 2;
inline constexpr std::uint32_t mf_undefined = 1u << 3;        // previous m carried
inline constexpr std::uint32_t before_outbreak = 1u << 4;
inline constexpr std::uint32_t beta_pinned = 1u << 5;         // first-week value in the simulation path
inline constexpr std::uint32_t beta_carried = 1u << 6;        // simulation path carried a previous value
inline constexpr std::uint32_t r0_cap_unmet = 1u << 7;        // no estimate below the cap was found

inline std::string describe(std::uint32_t f) {
    static const std::pair<std::uint32_t, const char*> names[] = {
        {beta_undefined, "beta_undefined"}, {pre_identification, "pre_identification"},
        {mf_clamped, "mf_clamped"},         {mf_undefined, "mf_undefined"},
        {before_outbreak, "before_outbreak"}, {beta_pinned, "beta_pinned"},
        {beta_carried, "beta_carried"},     {r0_cap_unmet, "r0_cap_unmet"}};
    std::string s;
    for (const auto& [bit, name] : names)
        if (f & bit) s += (s.empty() ? "" : ";") + std::string(name);
    return s;
}
}  // namespace flag

struct JointConfig {
    int window_beta_days = 14;
    int window_m_days = 14;
    double c_threshold = 0.01;
    double mf_guess = 5.0;
    std::int64_t sim_n = 50000;
    std::int32_t sim_B = 500;
    double gamma = kDefaultGamma;
    double mean_contacts = 10.0;
    double outbreak_threshold = 1e-5;
    bool r0_cap = true;
    double r0_cap_value = 3.0;
    std::uint64_t seed = 0;
    int threads = 0;
    /// Last position (0-based) used for estimation, if the series should stop early.
    std::optional<std::size_t> stop_index;

    void validate() const {
        if (window_beta_days < 2) throw InvariantViolation("window_beta_days >= 2", std::to_string(window_beta_days));
        if (window_m_days < 1) throw InvariantViolation("window_m_days >= 1", std::to_string(window_m_days));
        if (!(c_threshold > 0.0 && c_threshold < 1.0)) throw InvariantViolation("0 < c_threshold < 1", std::to_string(c_threshold));
        if (!(mf_guess >= 1.0)) throw InvariantViolation("mf_guess >= 1", std::to_string(mf_guess));
        if (sim_n < 1000) throw InvariantViolation("sim_n >= 1000", std::to_string(sim_n));
        if (sim_B < 1) throw InvariantViolation("sim_B >= 1", std::to_string(sim_B));
        if (!(gamma > 0.0 && gamma <= 1.0)) throw InvariantViolation("0 < gamma <= 1", std::to_string(gamma));
        if (!(mean_contacts > 0.0)) throw InvariantViolation("mean_contacts > 0", std::to_string(mean_contacts));
    }
};

inline nlohmann::json to_json(const JointConfig& c) {
    nlohmann::json j = {{"window_beta_days", c.window_beta_days},
                        {"window_m_days", c.window_m_days},
                        {"c_threshold", c.c_threshold},
                        {"mf_guess", c.mf_guess},
                        {"sim_n", c.sim_n},
                        {"sim_B", c.sim_B},
                        {"gamma", c.gamma},
                        {"mean_contacts", c.mean_contacts},
                        {"outbreak_threshold", c.outbreak_threshold},
                        {"r0_cap", c.r0_cap},
                        {"r0_cap_value", c.r0_cap_value},
                        {"seed", c.seed}};
    return j;
}

/// Per-day output of the joint estimator, aligned with the input series.
struct EstimateSeries {
    std::vector<double> c_tilde;
    std::vector<double> i_tilde;
    std::vector<double> beta_hat;  // NaN where undefined
    std::vector<double> m_hat;     // MF in force (piecewise constant); NaN before identification
    std::vector<double> m_used;    // MF used in the beta regression (guess before identification)
    std::vector<double> r_et_hat;
    std::vector<double> beta_sim;  // transmission rate driving the simulations out of each day
    std::vector<std::uint32_t> flags;
    int window_beta = 14;
    int window_m = 14;
    std::size_t outbreak_start = 0;
    std::optional<std::size_t> t0;                 // end of the pre-identification period
    std::vector<std::pair<std::size_t, double>> mf_blocks;  // (position, m_hat) at block ends
    double gamma = kDefaultGamma;

    std::size_t size() const { return c_tilde.size(); }
};

/// Writes `day, c_tilde, beta_hat, m_hat, r_et_hat, flags` (day is 1-based).
inline void write_estimates_csv(std::ostream& os, const EstimateSeries& e) {
    auto num = [&](double v) {
        if (std::isfinite(v)) os << v;
    };
    os.precision(12);
    os << "day,c_tilde,beta_hat,m_hat,r_et_hat,flags\n";
    for (std::size_t t = 0; t < e.size(); ++t) {
        os << t + 1 << ',';
        num(e.c_tilde[t]);
        os << ',';
        num(e.beta_hat[t]);
        os << ',';
        num(e.m_hat[t]);
        os << ',';
        num(e.r_et_hat[t]);
        os << ',' << flag::describe(e.flags[t]) << '\n';
    }
}

/// Exposure intensity giving per-contact infection probability beta / k.
inline double tau_from_beta(double beta, double k) {
    const double p = beta / k;
    if (!(p >= 0.0 && p < 1.0)) throw InvalidParameter("beta / k must lie in [0, 1)");
    return -std::log1p(-p);
}

struct JointResult {
    EstimateSeries estimates;
    EnsembleResult calibrated;  // simulation days 1.. map to positions outbreak_start..
};

/// Joint rolling estimation of beta_t and m_t from an observed cumulative
/// per-capita series (already smoothed).
///
/// Before c_obs first exceeds the threshold, beta is estimated with the MF
/// guess and single-group simulations are driven by those estimates; the
/// first MF is the ratio of mean simulated to observed cases at t0.  After
/// that, each W_m-day block re-estimates beta with the current MF, extends
/// the stored simulations through the block, and updates the MF.
inline JointResult joint_estimate(std::span<const double> c_obs, const JointConfig& cfg) {
    cfg.validate();
    const std::size_t T_all = c_obs.size();
    const std::size_t T = cfg.stop_index ? std::min(T_all, *cfg.stop_index + 1) : T_all;
    if (T < static_cast<std::size_t>(cfg.window_beta_days) + 1)
        throw StageError("estimate", "series has " + std::to_string(T) + " days, fewer than the beta window plus one");

    JointResult result;
    auto& e = result.estimates;
    e.c_tilde.assign(c_obs.begin(), c_obs.begin() + static_cast<std::ptrdiff_t>(T));
    e.i_tilde = active_from(e.c_tilde, recursive_removed(e.c_tilde, cfg.gamma));
    e.beta_hat.assign(T, kNaN);
    e.m_hat.assign(T, kNaN);
    e.m_used.assign(T, kNaN);
    e.r_et_hat.assign(T, kNaN);
    e.beta_sim.assign(T, kNaN);
    e.flags.assign(T, 0);
    e.window_beta = cfg.window_beta_days;
    e.window_m = cfg.window_m_days;
    e.gamma = cfg.gamma;

    const auto start = detect_outbreak_start(e.c_tilde, cfg.outbreak_threshold);
    if (!start) throw StageError("start-detection", "daily new cases never exceed the outbreak threshold");
    const std::size_t s = *start;
    e.outbreak_start = s;
    for (std::size_t t = 0; t < s; ++t) e.flags[t] |= flag::before_outbreak;

    const int Wb = cfg.window_beta_days;
    const auto& c = e.c_tilde;
    const auto& i = e.i_tilde;

    // beta_hat at position t with a constant MF applied across its window.
    auto beta_with_m = [&](std::size_t t, double m) {
        if (t < static_cast<std::size_t>(Wb)) return kNaN;
        const std::size_t lo = t - static_cast<std::size_t>(Wb);
        std::vector<double> cc(static_cast<std::size_t>(Wb) + 1), ii(static_cast<std::size_t>(Wb) + 1);
        for (std::size_t u = 0; u < cc.size(); ++u) {
            cc[u] = m * c[lo + u];
            ii[u] = m * i[lo + u];
        }
        return fit_beta_window(cc, ii, static_cast<std::size_t>(Wb), Wb);
    };

    // Pre-identification period.
    std::optional<std::size_t> first_exceed;
    for (std::size_t t = s; t < T; ++t)
        if (c[t] > cfg.c_threshold) {
            first_exceed = t;
            break;
        }
    const std::size_t t0 = first_exceed ? std::max(s, *first_exceed > 0 ? *first_exceed - 1 : 0) : T - 1;
    for (std::size_t t = s; t <= t0; ++t) {
        e.beta_hat[t] = beta_with_m(t, cfg.mf_guess);
        e.m_used[t] = cfg.mf_guess;
        e.flags[t] |= flag::pre_identification;
    }

    // First-week pin.
    double pin = kNaN;
    for (std::size_t t = s; t <= t0; ++t) {
        const double b = e.beta_hat[t];
        if (!std::isfinite(b)) continue;
        if (!cfg.r0_cap || b / cfg.gamma < cfg.r0_cap_value) {
            pin = b;
            break;
        }
    }
    if (!std::isfinite(pin)) {
        for (std::size_t t = s; t <= t0; ++t)
            if (std::isfinite(e.beta_hat[t])) {
                pin = e.beta_hat[t];
                break;
            }
        if (cfg.r0_cap) e.flags[s] |= flag::r0_cap_unmet;
    }
    if (!std::isfinite(pin))
        throw StageError("estimate", "no defined transmission estimate before the identification threshold");

    double carried = pin;
    auto set_sim_beta = [&](std::size_t t) {
        if (t - s < 7) {
            e.beta_sim[t] = pin;
            e.flags[t] |= flag::beta_pinned;
        } else if (std::isfinite(e.beta_hat[t])) {
            e.beta_sim[t] = carried = e.beta_hat[t];
        } else {
            e.beta_sim[t] = carried;
            e.flags[t] |= flag::beta_carried;
        }
    };

    // Simulations: single-group ER, day 1 aligned with the outbreak start.
    // The configured tau is 1 and each step passes the day's exposure
    // intensity as the scale.
    SimConfig sim = single_group_config(cfg.sim_n, cfg.mean_contacts, cfg.mean_contacts, cfg.gamma);
    sim.replications = cfg.sim_B;
    sim.seed = cfg.seed;
    sim.max_days = std::numeric_limits<std::int32_t>::max();
    sim.validate();
    std::vector<std::unique_ptr<Replication>> reps(static_cast<std::size_t>(cfg.sim_B));
    const unsigned threads = resolve_threads(cfg.threads);
    parallel_for(reps.size(), threads, [&](std::size_t b) { reps[b] = std::make_unique<Replication>(sim, b); });
    std::vector<std::vector<double>> sim_i(reps.size(), std::vector<double>(T, 0.0));
    const double n = static_cast<double>(cfg.sim_n);
    auto record_i = [&](std::size_t b, std::size_t t) {
        sim_i[b][t] = static_cast<double>(reps[b]->state().total_active()) / n;
    };
    parallel_for(reps.size(), threads, [&](std::size_t b) { record_i(b, s); });

    // Advance every replication through positions (from, to]: the
    // transition out of position t uses beta_sim[t].
    auto advance = [&](std::size_t from, std::size_t to) {
        parallel_for(reps.size(), threads, [&](std::size_t b) {
            for (std::size_t t = from; t < to; ++t) {
                reps[b]->step(tau_from_beta(e.beta_sim[t], cfg.mean_contacts));
                record_i(b, t + 1);
            }
        });
    };
    for (std::size_t t = s; t <= t0; ++t) set_sim_beta(t);
    if (t0 > s) advance(s, t0);

    double m_current = kNaN;
    if (first_exceed) {
        double mean_c = 0.0;
        for (const auto& r : reps) mean_c += static_cast<double>(r->state().C(0)) / n;
        mean_c /= static_cast<double>(reps.size());
        const double raw = mean_c / c[t0];
        m_current = std::max(1.0, raw);
        if (raw < 1.0) e.flags[t0] |= flag::mf_clamped;
        e.mf_blocks.emplace_back(t0, m_current);
        e.t0 = t0;
    }

    // Alternating blocks.
    if (first_exceed) {
        const std::size_t Wm = static_cast<std::size_t>(cfg.window_m_days);
        std::size_t block_start = t0;
        while (block_start + 1 < T) {
            const std::size_t block_end = std::min(block_start + Wm, T - 1);
            for (std::size_t t = block_start + 1; t <= block_end; ++t) {
                e.beta_hat[t] = beta_with_m(t, m_current);
                e.m_used[t] = m_current;
                e.m_hat[t] = m_current;
                set_sim_beta(t);
            }
            advance(block_start, block_end);
            if (block_end - block_start == Wm) {
                const auto est = estimate_mf_window(c, e.beta_sim, sim_i, block_end, cfg.window_m_days);
                if (est.undefined) {
                    e.flags[block_end] |= flag::mf_undefined;
                } else {
                    m_current = est.value;
                    if (est.clamped) e.flags[block_end] |= flag::mf_clamped;
                    e.mf_blocks.emplace_back(block_end, m_current);
                }
            }
            block_start = block_end;
        }
    } else if (T - 1 > t0) {
        advance(t0, T - 1);
    }

    for (std::size_t t = s; t < T; ++t) {
        if (!std::isfinite(e.beta_hat[t])) e.flags[t] |= flag::beta_undefined;
        if (std::isfinite(e.beta_hat[t]) && std::isfinite(e.m_used[t]))
            e.r_et_hat[t] = (1.0 - e.m_used[t] * c[t]) * e.beta_hat[t] / cfg.gamma;
    }

    std::vector<ReplicationSeries> series;
    series.reserve(reps.size());
    for (const auto& r : reps) series.push_back(r->series());
    result.calibrated = EnsembleResult({cfg.sim_n}, std::move(series), cfg.seed);
    return result;
}

}  // namespace episir
