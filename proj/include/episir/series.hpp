#pragma once

// Elementary transforms of daily per-capita case series.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "episir/common.hpp"

namespace episir {

/// Trailing 7-day mean: day t averages days t-6..t, fewer at the head.
inline std::vector<double> smooth_7d(std::span<const double> x) {
    std::vector<double> out(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        const std::size_t lo = t >= 6 ? t - 6 : 0;
        double s = 0.0;
        for (std::size_t u = lo; u <= t; ++u) s += x[u];
        out[t] = s / static_cast<double>(t - lo + 1);
    }
    return out;
}

/// Daily increments with the first value taken as the first increment.
inline std::vector<double> daily_increments(std::span<const double> cumulative) {
    std::vector<double> d(cumulative.size());
    for (std::size_t t = 0; t < cumulative.size(); ++t) d[t] = t == 0 ? cumulative[0] : cumulative[t] - cumulative[t - 1];
    return d;
}

inline std::vector<double> running_sum(std::span<const double> x) {
    std::vector<double> s(x.size());
    double acc = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) s[t] = acc += x[t];
    return s;
}

/// Smooths the daily increments of a cumulative series and re-accumulates.
inline std::vector<double> smooth_cumulative_7d(std::span<const double> cumulative) {
    const auto inc = daily_increments(cumulative);
    const auto sm = smooth_7d(inc);
    return running_sum(sm);
}

/// R_1 = 0, R_t = (1 - gamma) R_{t-1} + gamma C_{t-1}.
inline std::vector<double> recursive_removed(std::span<const double> C, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvariantViolation("0 < gamma <= 1", "gamma = " + std::to_string(gamma));
    std::vector<double> R(C.size(), 0.0);
    for (std::size_t t = 1; t < C.size(); ++t) R[t] = (1.0 - gamma) * R[t - 1] + gamma * C[t - 1];
    return R;
}

/// C - R, pointwise.
inline std::vector<double> active_from(std::span<const double> C, std::span<const double> R) {
    std::vector<double> I(C.size());
    for (std::size_t t = 0; t < C.size(); ++t) I[t] = C[t] - R[t];
    return I;
}

/// First index whose daily increment exceeds the threshold.
inline std::optional<std::size_t> detect_outbreak_start(std::span<const double> cumulative, double threshold = 1e-5) {
    const auto inc = daily_increments(cumulative);
    for (std::size_t t = 0; t < inc.size(); ++t)
        if (inc[t] > threshold) return t;
    return std::nullopt;
}

}  // namespace episir
