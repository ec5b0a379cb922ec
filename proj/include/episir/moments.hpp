#pragma once

// Analytic moment conditions, reproduction numbers and multigroup tau
// calibration.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "episir/common.hpp"
#include "episir/group_spec.hpp"

namespace episir {

/// How a pairwise transmission rate beta_ll' is formed from tau_l and k_ll'.
enum class BetaForm {
    linear,       // tau_l * k_ll'
    exponential,  // (1 - e^{-tau_l}) * k_ll'
};

inline double pair_beta(double tau, double k, BetaForm form) {
    return form == BetaForm::linear ? tau * k : -std::expm1(-tau) * k;
}

/// beta_ll' matrix.
inline SquareMatrix pair_betas(const GroupSpec& spec, std::span<const double> tau, BetaForm form) {
    const std::size_t L = spec.groups();
    if (tau.size() != L) throw InvalidParameter("tau must have one entry per group");
    SquareMatrix b(L);
    for (std::size_t a = 0; a < L; ++a)
        for (std::size_t c = 0; c < L; ++c) b(a, c) = pair_beta(tau[a], spec.contact(a, c), form);
    return b;
}

/// beta_l = sum_l' beta_ll'.
inline std::vector<double> group_betas(const GroupSpec& spec, std::span<const double> tau, BetaForm form) {
    const auto b = pair_betas(spec, tau, form);
    std::vector<double> out(spec.groups(), 0.0);
    for (std::size_t a = 0; a < spec.groups(); ++a)
        for (std::size_t c = 0; c < spec.groups(); ++c) out[a] += b(a, c);
    return out;
}

/// Aggregate beta = sum_l w_l beta_l.
inline double aggregate_beta(const GroupSpec& spec, std::span<const double> tau, BetaForm form) {
    const auto bl = group_betas(spec, tau, form);
    double s = 0.0;
    for (std::size_t l = 0; l < bl.size(); ++l) s += spec.weight(l) * bl[l];
    return s;
}

/// E(C_l,t+1 - C_lt | state) = (n_l - C_l)[1 - prod_l' (1 - p_ll' + p_ll' e^{-tau_l})^{I_l'}],
/// with the pair probabilities given explicitly.
inline std::vector<double> expected_new_infections(std::span<const std::int64_t> sizes, const SquareMatrix& edge_probs,
                                                   std::span<const std::int64_t> C, std::span<const std::int64_t> I,
                                                   std::span<const double> tau) {
    const std::size_t L = sizes.size();
    std::vector<double> out(L, 0.0);
    for (std::size_t a = 0; a < L; ++a) {
        double escape = 1.0;
        for (std::size_t c = 0; c < L; ++c)
            escape *= std::pow(1.0 - edge_probs(a, c) + edge_probs(a, c) * std::exp(-tau[a]), static_cast<double>(I[c]));
        out[a] = static_cast<double>(sizes[a] - C[a]) * (1.0 - escape);
    }
    return out;
}

inline std::vector<double> expected_new_infections(std::span<const std::int64_t> C, std::span<const std::int64_t> I,
                                                   const GroupSpec& spec, std::span<const double> tau) {
    if (C.size() != spec.groups() || I.size() != spec.groups() || tau.size() != spec.groups())
        throw InvalidParameter("expected_new_infections: one entry per group required");
    for (std::size_t l = 0; l < spec.groups(); ++l)
        if (C[l] < 0 || C[l] > spec.sizes[l] || I[l] < 0 || I[l] > C[l])
            throw InvalidParameter("expected_new_infections: counts outside group size in group " + std::to_string(l));
    return expected_new_infections(spec.sizes, edge_probabilities(spec), C, I, tau);
}

/// Single-group moment E[(1 - c_{t+1}) / (1 - c_t)] = e^{-beta i_t}.
inline double moment_ratio_single(double i, double beta) { return std::exp(-beta * i); }

/// Multigroup aggregate analogue: sum_l w_l s_l exp(-sum_l' beta_ll' i_l') / sum_l w_l s_l.
inline double moment_ratio_multigroup(std::span<const double> w, std::span<const double> s, const SquareMatrix& beta,
                                      std::span<const double> i) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a) {
        double x = 0.0;
        for (std::size_t c = 0; c < w.size(); ++c) x += beta(a, c) * i[c];
        num += w[a] * s[a] * std::exp(-x);
        den += w[a] * s[a];
    }
    return den > 0.0 ? num / den : 1.0;
}

enum class R0Method { exact, approx };

/// Basic reproduction number.  exact: gamma^{-1}[n - sum_l n_l prod_l'
/// (1 - p_ll' + p_ll' e^{-tau_l})^{w_l'}]; approx: gamma^{-1} sum_l w_l beta_l.
inline double compute_r0(const GroupSpec& spec, std::span<const double> tau, double gamma, R0Method method,
                         BetaForm form = BetaForm::exponential) {
    if (!(gamma > 0.0)) throw InvariantViolation("gamma > 0", "gamma = " + std::to_string(gamma));
    if (tau.size() != spec.groups()) throw InvalidParameter("compute_r0: tau must have one entry per group");
    if (method == R0Method::approx) return aggregate_beta(spec, tau, form) / gamma;
    const auto p = edge_probabilities(spec);
    const auto w = spec.weights();
    double s = 0.0;
    for (std::size_t a = 0; a < spec.groups(); ++a) {
        double prod = 1.0;
        for (std::size_t c = 0; c < spec.groups(); ++c)
            prod *= std::pow(1.0 - p(a, c) + p(a, c) * std::exp(-tau[a]), w[c]);
        s += static_cast<double>(spec.sizes[a]) * prod;
    }
    return (static_cast<double>(spec.population()) - s) / gamma;
}

/// R_et = gamma^{-1} sum_l w_l beta_lt (1 - c_lt).
inline double effective_r(std::span<const double> c, std::span<const double> beta_l, std::span<const double> w,
                          double gamma) {
    if (!(gamma > 0.0)) throw InvariantViolation("gamma > 0", "gamma = " + std::to_string(gamma));
    double s = 0.0;
    for (std::size_t l = 0; l < c.size(); ++l) {
        if (c[l] < 0.0 || c[l] > 1.0) throw InvalidParameter("effective_r: c must lie in [0, 1]");
        s += w[l] * beta_l[l] * (1.0 - c[l]);
    }
    return s / gamma;
}

struct HerdThreshold {
    bool defined = false;     // false when R0 <= 1
    double value = 0.0;       // sum w_l beta_l c_l / sum w_l beta_l
    double threshold = kNaN;  // (R0 - 1) / R0
    bool satisfied = false;
};

inline HerdThreshold herd_threshold(std::span<const double> w, std::span<const double> beta_l,
                                    std::span<const double> c, double R0) {
    HerdThreshold h;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) {
        num += w[l] * beta_l[l] * c[l];
        den += w[l] * beta_l[l];
    }
    h.value = den > 0.0 ? num / den : 0.0;
    if (!(R0 > 1.0)) return h;
    h.defined = true;
    h.threshold = (R0 - 1.0) / R0;
    h.satisfied = h.value > h.threshold;
    return h;
}

/// Relative tau_l / tau_1 = lambda_l (sum_l' w_l' k_1l') / (sum_l' w_l' k_ll').
inline std::vector<double> relative_group_tau(const GroupSpec& spec, std::span<const double> lambda) {
    const std::size_t L = spec.groups();
    if (lambda.size() != L) throw InvalidParameter("calibrate_group_tau: lambda must have one entry per group");
    const auto w = spec.weights();
    std::vector<double> wk(L, 0.0);
    for (std::size_t a = 0; a < L; ++a) {
        for (std::size_t c = 0; c < L; ++c) wk[a] += w[c] * spec.contact(a, c);
        if (!(wk[a] > 0.0))
            throw InvariantViolation("non-zero contact rows", "group " + std::to_string(a) + " has no contacts");
    }
    std::vector<double> rel(L);
    for (std::size_t a = 0; a < L; ++a) rel[a] = lambda[a] * wk[0] / wk[a];
    return rel;
}

/// Group tau vector with the relative pattern implied by lambda and tau_1 set
/// so that compute_r0(approx, form) equals R0_target.
inline std::vector<double> calibrate_group_tau(const GroupSpec& spec, std::span<const double> lambda, double R0_target,
                                               double gamma, BetaForm form = BetaForm::linear) {
    spec.validate();
    if (!(R0_target > 0.0)) throw InvalidParameter("calibrate_group_tau: R0 target must be positive");
    if (!(gamma > 0.0)) throw InvariantViolation("gamma > 0", "gamma = " + std::to_string(gamma));
    if (std::abs(lambda[0] - 1.0) > 1e-12) throw InvalidParameter("calibrate_group_tau: lambda_1 must equal 1");
    auto rel = relative_group_tau(spec, lambda);
    auto r0_at = [&](double tau1) {
        std::vector<double> t(rel);
        for (double& v : t) v *= tau1;
        return compute_r0(spec, t, gamma, R0Method::approx, form);
    };
    double tau1 = R0_target / r0_at(1.0);
    if (form == BetaForm::exponential) {
        double lo = 0.0;
        double hi = 1.0;
        while (r0_at(hi) < R0_target) {
            hi *= 2.0;
            if (hi > 1e6) throw InvalidParameter("calibrate_group_tau: R0 target unattainable under exponential form");
        }
        for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (r0_at(mid) < R0_target ? lo : hi) = mid;
        }
        tau1 = 0.5 * (lo + hi);
    }
    for (double& v : rel) v *= tau1;
    return rel;
}

/// Stochastic-moment and linearized SIR forms of E(delta s_l) for one day.
inline std::vector<std::pair<double, double>> sir_linearization_check(std::span<const double> s,
                                                                      std::span<const double> i,
                                                                      const SquareMatrix& beta) {
    std::vector<std::pair<double, double>> out;
    for (std::size_t a = 0; a < s.size(); ++a) {
        double x = 0.0;
        for (std::size_t c = 0; c < i.size(); ++c) x += beta(a, c) * i[c];
        out.emplace_back(s[a] * std::expm1(-x), -s[a] * x);
    }
    return out;
}

}  // namespace episir
