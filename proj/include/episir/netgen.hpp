#pragma once

// Daily random contact structures: Erdos-Renyi, stochastic block model and
// truncated power-law configuration model, plus the contact-count sampler
// that is distributionally equivalent to counting active neighbours in a
// freshly drawn Bernoulli-edge network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "episir/common.hpp"
#include "episir/group_spec.hpp"

namespace episir::netgen {

using Node = std::int32_t;
using Edge = std::pair<Node, Node>;

/// Undirected contact graph for one day.  Edges are stored with first < second.
struct ContactNetwork {
    std::int64_t n = 0;
    std::vector<Edge> edges;

    std::vector<std::int32_t> degrees() const {
        std::vector<std::int32_t> d(static_cast<std::size_t>(n), 0);
        for (const auto& [a, b] : edges) {
            ++d[static_cast<std::size_t>(a)];
            ++d[static_cast<std::size_t>(b)];
        }
        return d;
    }

    double mean_degree() const { return n > 0 ? 2.0 * static_cast<double>(edges.size()) / static_cast<double>(n) : 0.0; }

    /// No self-loops, no duplicates, indices in range.
    bool is_simple() const {
        std::vector<Edge> sorted = edges;
        for (const auto& [a, b] : sorted)
            if (a == b || a < 0 || b < 0 || a >= n || b >= n || a > b) return false;
        std::sort(sorted.begin(), sorted.end());
        return std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
    }
};

namespace detail {

inline Edge ordered(Node a, Node b) { return a < b ? Edge{a, b} : Edge{b, a}; }

// Visits every unordered pair {i, j} of [0, count) independently with
// probability p, in O(expected edges) via geometric skipping.
template <class Emit>
void bernoulli_pairs(std::int64_t count, double p, Rng& rng, Emit&& emit) {
    if (count < 2 || p <= 0.0) return;
    if (p >= 1.0) {
        for (std::int64_t v = 1; v < count; ++v)
            for (std::int64_t w = 0; w < v; ++w) emit(w, v);
        return;
    }
    std::geometric_distribution<std::int64_t> skip(p);
    std::int64_t v = 1;
    std::int64_t w = -1;
    while (v < count) {
        w += 1 + skip(rng);
        while (w >= v && v < count) {
            w -= v;
            ++v;
        }
        if (v < count) emit(w, v);
    }
}

// Every pair (i, j) in [0, rows) x [0, cols) independently with probability p.
template <class Emit>
void bernoulli_grid(std::int64_t rows, std::int64_t cols, double p, Rng& rng, Emit&& emit) {
    if (rows <= 0 || cols <= 0 || p <= 0.0) return;
    const std::int64_t total = rows * cols;
    if (p >= 1.0) {
        for (std::int64_t idx = 0; idx < total; ++idx) emit(idx / cols, idx % cols);
        return;
    }
    std::geometric_distribution<std::int64_t> skip(p);
    std::int64_t idx = -1;
    while (true) {
        idx += 1 + skip(rng);
        if (idx >= total) break;
        emit(idx / cols, idx % cols);
    }
}

}  // namespace detail

/// Erdos-Renyi graph: each distinct pair present with probability k/(n-1).
inline ContactNetwork sample_er_network(std::int64_t n, double mean_degree, Rng& rng) {
    if (n < 1) throw InvalidParameter("sample_er_network: n must be positive");
    if (!(mean_degree >= 0.0) || mean_degree > static_cast<double>(n - 1))
        throw InvalidParameter("sample_er_network: mean degree " + std::to_string(mean_degree) + " outside [0, n-1]");
    ContactNetwork net;
    net.n = n;
    if (n < 2) return net;
    const double p = mean_degree / static_cast<double>(n - 1);
    net.edges.reserve(static_cast<std::size_t>(mean_degree * static_cast<double>(n) / 2.0 * 1.1) + 16);
    detail::bernoulli_pairs(n, p, rng, [&](std::int64_t a, std::int64_t b) {
        net.edges.emplace_back(static_cast<Node>(a), static_cast<Node>(b));
    });
    return net;
}

/// Stochastic block model over the groups of `spec`; pair ((i,l),(j,l')) is
/// present with probability p_ll'.
inline ContactNetwork sample_sbm_network(const GroupSpec& spec, Rng& rng) {
    const SquareMatrix p = edge_probabilities(spec);
    ContactNetwork net;
    net.n = spec.population();
    const std::size_t L = spec.groups();
    std::vector<std::int64_t> offset(L);
    for (std::size_t l = 0; l < L; ++l) offset[l] = spec.offset(l);
    for (std::size_t a = 0; a < L; ++a) {
        const std::int64_t oa = offset[a];
        detail::bernoulli_pairs(spec.sizes[a], p(a, a), rng, [&](std::int64_t i, std::int64_t j) {
            net.edges.emplace_back(static_cast<Node>(oa + i), static_cast<Node>(oa + j));
        });
        for (std::size_t b = a + 1; b < L; ++b) {
            const std::int64_t ob = offset[b];
            detail::bernoulli_grid(spec.sizes[a], spec.sizes[b], p(a, b), rng, [&](std::int64_t i, std::int64_t j) {
                net.edges.emplace_back(static_cast<Node>(oa + i), static_cast<Node>(ob + j));
            });
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Truncated power law

enum class DegreeKind { poisson_er, power_law };

struct DegreeLaw {
    DegreeKind kind = DegreeKind::power_law;
    double mean_k = 10.0;
    double alpha = 2.43;
    std::int32_t k_min = 5;
    std::int32_t k_max = 50;

    void validate(std::int64_t n) const {
        if (k_min < 1) throw InvariantViolation("k_min >= 1", "k_min = " + std::to_string(k_min));
        if (k_max < k_min) throw InvariantViolation("k_min <= k_max", "k_max = " + std::to_string(k_max));
        if (k_max >= n) throw InvariantViolation("k_max < n", "k_max = " + std::to_string(k_max) + ", n = " + std::to_string(n));
        if (kind == DegreeKind::power_law && !(alpha > 1.0))
            throw InvariantViolation("alpha > 1", "alpha = " + std::to_string(alpha));
    }
};

/// p_x = C x^-alpha on x = k_min..k_max (index 0 is k_min).
inline std::vector<double> power_law_pmf(double alpha, std::int32_t k_min, std::int32_t k_max) {
    std::vector<double> p;
    p.reserve(static_cast<std::size_t>(k_max - k_min + 1));
    double total = 0.0;
    for (std::int32_t x = k_min; x <= k_max; ++x) {
        p.push_back(std::pow(static_cast<double>(x), -alpha));
        total += p.back();
    }
    for (double& v : p) v /= total;
    return p;
}

/// Mean of the truncated power law.
inline double power_law_mean(double alpha, std::int32_t k_min, std::int32_t k_max) {
    double num = 0.0;
    double den = 0.0;
    for (std::int32_t x = k_min; x <= k_max; ++x) {
        const double px = std::pow(static_cast<double>(x), -alpha);
        num += static_cast<double>(x) * px;
        den += px;
    }
    return num / den;
}

/// Exponent whose truncated power-law mean equals k_target, by bisection on
/// alpha in (1.0001, 10].  The mean is strictly decreasing in alpha.
inline double solve_power_law_exponent(double k_target, std::int32_t k_min, std::int32_t k_max) {
    if (!(k_target > k_min && k_target < k_max))
        throw InvalidParameter("solve_power_law_exponent: need k_min < k_target < k_max");
    double lo = 1.0001;
    double hi = 10.0;
    const double f_lo = power_law_mean(lo, k_min, k_max) - k_target;
    const double f_hi = power_law_mean(hi, k_min, k_max) - k_target;
    if (f_lo < 0.0 || f_hi > 0.0)
        throw InvalidParameter("solve_power_law_exponent: no exponent in (1.0001, 10] gives mean degree " +
                               std::to_string(k_target) + " on [" + std::to_string(k_min) + ", " +
                               std::to_string(k_max) + "]; attainable means are [" +
                               std::to_string(f_hi + k_target) + ", " + std::to_string(f_lo + k_target) + "]");
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = power_law_mean(mid, k_min, k_max) - k_target;
        if (std::abs(f) < 1e-12 || hi - lo < 1e-15) return mid;
        (f > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// i.i.d. degrees from the truncated power law, fully redrawn until the sum is even.
inline std::vector<std::int32_t> draw_power_law_degrees(std::int64_t n, const DegreeLaw& law, Rng& rng) {
    law.validate(n);
    const auto pmf = power_law_pmf(law.alpha, law.k_min, law.k_max);
    std::discrete_distribution<std::int32_t> draw(pmf.begin(), pmf.end());
    std::vector<std::int32_t> deg(static_cast<std::size_t>(n));
    while (true) {
        std::int64_t sum = 0;
        for (auto& d : deg) {
            d = law.k_min + draw(rng);
            sum += d;
        }
        if (sum % 2 == 0) return deg;
    }
}

struct ConfigurationResult {
    ContactNetwork network;
    std::int64_t stub_pairs = 0;   // edges before cleanup
    std::int64_t self_loops = 0;   // discarded
    std::int64_t multi_edges = 0;  // collapsed duplicates
};

/// Uniform stub matching for an even-sum degree sequence; self-loops are
/// discarded and multi-edges collapsed after matching.
inline ConfigurationResult configuration_model(std::span<const std::int32_t> degrees, Rng& rng) {
    std::vector<Node> stubs;
    std::int64_t total = 0;
    for (auto d : degrees) total += d;
    if (total % 2 != 0) throw InvalidParameter("configuration_model: degree sum must be even");
    stubs.reserve(static_cast<std::size_t>(total));
    for (std::size_t i = 0; i < degrees.size(); ++i)
        for (std::int32_t s = 0; s < degrees[i]; ++s) stubs.push_back(static_cast<Node>(i));
    std::shuffle(stubs.begin(), stubs.end(), rng);

    ConfigurationResult out;
    out.network.n = static_cast<std::int64_t>(degrees.size());
    out.stub_pairs = total / 2;
    auto& edges = out.network.edges;
    edges.reserve(static_cast<std::size_t>(total / 2));
    for (std::size_t s = 0; s + 1 < stubs.size(); s += 2) {
        if (stubs[s] == stubs[s + 1]) {
            ++out.self_loops;
            continue;
        }
        edges.push_back(detail::ordered(stubs[s], stubs[s + 1]));
    }
    std::sort(edges.begin(), edges.end());
    const auto last = std::unique(edges.begin(), edges.end());
    out.multi_edges = static_cast<std::int64_t>(edges.end() - last);
    edges.erase(last, edges.end());
    return out;
}

/// Single-group power-law contact network for one day.
inline ContactNetwork sample_power_law_network(std::int64_t n, const DegreeLaw& law, Rng& rng) {
    if (law.kind != DegreeKind::power_law) throw InvalidParameter("sample_power_law_network: law must be power-law");
    const auto deg = draw_power_law_degrees(n, law, rng);
    return configuration_model(deg, rng).network;
}

// ---------------------------------------------------------------------------
// Contact counting

/// Number of active neighbours of every node.
inline std::vector<std::int32_t> count_active_contacts(const ContactNetwork& net, std::span<const std::uint8_t> active) {
    std::vector<std::int32_t> m(static_cast<std::size_t>(net.n), 0);
    for (const auto& [a, b] : net.edges) {
        if (active[static_cast<std::size_t>(b)]) ++m[static_cast<std::size_t>(a)];
        if (active[static_cast<std::size_t>(a)]) ++m[static_cast<std::size_t>(b)];
    }
    return m;
}

/// Active-contact counts for a list of susceptibles, without building a
/// network: daily edges are independent Bernoulli(p_ll'), so a susceptible in
/// group l meets Binomial(I_l', p_ll') active members of each group l'.
inline std::vector<std::int32_t> binomial_contact_counts(std::span<const std::int64_t> active_per_group,
                                                         const SquareMatrix& edge_probs,
                                                         std::span<const std::int32_t> susceptible_groups, Rng& rng) {
    const std::size_t L = edge_probs.dim();
    if (active_per_group.size() != L) throw InvalidParameter("binomial_contact_counts: group count mismatch");
    std::vector<std::binomial_distribution<std::int32_t>> dist;
    dist.reserve(L * L);
    for (std::size_t a = 0; a < L; ++a)
        for (std::size_t b = 0; b < L; ++b)
            dist.emplace_back(static_cast<std::int32_t>(active_per_group[b]), edge_probs(a, b));
    std::vector<std::int32_t> counts(susceptible_groups.size(), 0);
    for (std::size_t s = 0; s < susceptible_groups.size(); ++s) {
        const auto a = static_cast<std::size_t>(susceptible_groups[s]);
        std::int32_t m = 0;
        for (std::size_t b = 0; b < L; ++b)
            if (active_per_group[b] > 0 && edge_probs(a, b) > 0.0) m += dist[a * L + b](rng);
        counts[s] = m;
    }
    return counts;
}

/// Convenience overload taking a GroupSpec.
inline std::vector<std::int32_t> binomial_contact_counts(std::span<const std::int64_t> active_per_group,
                                                         const GroupSpec& spec,
                                                         std::span<const std::int32_t> susceptible_groups, Rng& rng) {
    for (std::size_t l = 0; l < active_per_group.size() && l < spec.groups(); ++l)
        if (active_per_group[l] > spec.sizes[l])
            throw InvalidParameter("binomial_contact_counts: more active than members in group " + std::to_string(l));
    return binomial_contact_counts(active_per_group, edge_probabilities(spec), susceptible_groups, rng);
}

}  // namespace episir::netgen
