#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "episir/common.hpp"

namespace episir {

/// Partition of the population into contact groups.
///
/// Individuals are numbered group by group: group l owns the contiguous index
/// range [offset(l), offset(l) + sizes[l]).  contact(l, l2) is the mean number
/// of daily contacts a member of group l has with members of group l2.
struct GroupSpec {
    std::vector<std::int64_t> sizes;
    SquareMatrix contact;
    /// Relative tolerance on n_l * k_ll' == n_l' * k_l'l.
    double reciprocity_tolerance = 1e-9;

    std::size_t groups() const noexcept { return sizes.size(); }

    std::int64_t population() const noexcept { return std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}); }

    double weight(std::size_t l) const { return static_cast<double>(sizes[l]) / static_cast<double>(population()); }

    std::vector<double> weights() const {
        std::vector<double> w(groups());
        for (std::size_t l = 0; l < groups(); ++l) w[l] = weight(l);
        return w;
    }

    std::int64_t offset(std::size_t l) const {
        return std::accumulate(sizes.begin(), sizes.begin() + static_cast<std::ptrdiff_t>(l), std::int64_t{0});
    }

    /// Mean total daily contacts of a member of group l.
    double row_total(std::size_t l) const {
        const auto r = contact.row(l);
        return std::accumulate(r.begin(), r.end(), 0.0);
    }

    /// Throws InvariantViolation naming the first violated invariant.
    void validate() const;
};

inline void GroupSpec::validate() const {
    if (sizes.empty()) throw InvariantViolation("group count", "at least one group is required");
    if (contact.dim() != sizes.size())
        throw InvariantViolation("contact matrix shape", "contact matrix is " + std::to_string(contact.dim()) + "x" +
                                                             std::to_string(contact.dim()) + " but there are " +
                                                             std::to_string(sizes.size()) + " groups");
    for (std::size_t l = 0; l < sizes.size(); ++l)
        if (sizes[l] <= 0)
            throw InvariantViolation("positive group sizes", "group " + std::to_string(l) + " has size " +
                                                                 std::to_string(sizes[l]));
    const std::size_t L = sizes.size();
    for (std::size_t a = 0; a < L; ++a)
        for (std::size_t b = 0; b < L; ++b) {
            const double k = contact(a, b);
            if (!std::isfinite(k) || k < 0.0)
                throw InvariantViolation("non-negative contacts", "k[" + std::to_string(a) + "][" + std::to_string(b) +
                                                                      "] = " + std::to_string(k));
        }
    for (std::size_t a = 0; a < L; ++a) {
        if (contact(a, a) > 0.0 && sizes[a] < 2)
            throw InvariantViolation("within-group contacts need two members",
                                     "group " + std::to_string(a) + " has a single member but k_ll > 0");
        for (std::size_t b = a + 1; b < L; ++b) {
            const double lhs = static_cast<double>(sizes[a]) * contact(a, b);
            const double rhs = static_cast<double>(sizes[b]) * contact(b, a);
            const double scale = std::max(std::abs(lhs), std::abs(rhs));
            if (scale > 0.0 && std::abs(lhs - rhs) > reciprocity_tolerance * scale)
                throw InvariantViolation("reciprocity", "n_" + std::to_string(a) + "*k_" + std::to_string(a) +
                                                            std::to_string(b) + " = " + std::to_string(lhs) + " but n_" +
                                                            std::to_string(b) + "*k_" + std::to_string(b) +
                                                            std::to_string(a) + " = " + std::to_string(rhs));
        }
    }
}

/// Per-pair daily contact probabilities: p_ll = k_ll/(n_l - 1) within a
/// group, p_ll' = k_ll'/n_l' across groups.  The result is exactly symmetric
/// (the upper triangle is mirrored after the reciprocity check).
inline SquareMatrix edge_probabilities(const GroupSpec& spec) {
    spec.validate();
    const std::size_t L = spec.groups();
    SquareMatrix p(L);
    for (std::size_t a = 0; a < L; ++a) {
        for (std::size_t b = a; b < L; ++b) {
            const double v = (a == b) ? (spec.contact(a, a) > 0.0
                                             ? spec.contact(a, a) / static_cast<double>(spec.sizes[a] - 1)
                                             : 0.0)
                                      : spec.contact(a, b) / static_cast<double>(spec.sizes[b]);
            if (v < 0.0 || v > 1.0)
                throw InvariantViolation("edge probability in [0,1]", "p_" + std::to_string(a) + std::to_string(b) +
                                                                          " = " + std::to_string(v));
            p(a, b) = v;
            p(b, a) = v;
        }
    }
    return p;
}

/// Replace the lower triangle of k with the values implied by reciprocity
/// applied to the upper triangle: k_ba = n_a * k_ab / n_b for a < b.
inline SquareMatrix complete_reciprocity_from_upper(const SquareMatrix& k, const std::vector<std::int64_t>& sizes) {
    SquareMatrix out = k;
    for (std::size_t a = 0; a < k.dim(); ++a)
        for (std::size_t b = a + 1; b < k.dim(); ++b)
            out(b, a) = static_cast<double>(sizes[a]) * k(a, b) / static_cast<double>(sizes[b]);
    return out;
}

/// Homogeneous population (Erdos-Renyi contacts with mean degree k).
inline GroupSpec single_group_spec(std::int64_t n, double mean_contacts) {
    GroupSpec spec;
    spec.sizes = {n};
    spec.contact = SquareMatrix(1, mean_contacts);
    return spec;
}

/// Pre-pandemic German contact survey matrix by age group
/// [0,15), [15,30), [30,50), [50,65), 65+.
inline SquareMatrix german_contact_matrix() {
    return SquareMatrix::from_rows({{3.43, 1.10, 2.34, 0.67, 0.47},
                                    {0.87, 4.55, 2.72, 1.14, 0.41},
                                    {1.11, 1.64, 3.74, 1.42, 0.78},
                                    {0.45, 0.96, 1.99, 2.30, 0.92},
                                    {0.31, 0.34, 1.08, 0.91, 1.70}});
}

/// German population shares of the five age groups.
inline std::vector<double> german_population_shares() { return {0.13, 0.17, 0.28, 0.20, 0.21}; }

/// Relative reported-infection ratios by age group (youngest group = 1).
inline std::vector<double> german_infection_ratios() { return {1.0, 2.83, 3.81, 2.94, 2.39}; }

/// Five-group German spec with n_l = round(w_l * scale).  Shares sum to 0.99.
/// The lower triangle is recomputed from the upper one.
inline GroupSpec german_spec(double scale = 10000.0) {
    GroupSpec spec;
    for (double w : german_population_shares()) spec.sizes.push_back(static_cast<std::int64_t>(std::llround(w * scale)));
    spec.contact = complete_reciprocity_from_upper(german_contact_matrix(), spec.sizes);
    return spec;
}

/// Load a GroupSpec from JSON:
///   {"sizes": [...], "contact_matrix": [[...], ...],
///    "reciprocity_tolerance": 1e-9, "complete_reciprocity": "upper"}
/// Unknown keys are rejected.
inline GroupSpec group_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvariantViolation("group spec document", "expected a JSON object");
    static const std::vector<std::string> known = {"sizes", "contact_matrix", "reciprocity_tolerance",
                                                   "complete_reciprocity"};
    std::string unknown;
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty()) throw InvariantViolation("known keys", "unknown group spec keys: " + unknown);
    if (!j.contains("sizes") || !j.contains("contact_matrix"))
        throw InvariantViolation("required keys", "group spec needs both \"sizes\" and \"contact_matrix\"");

    GroupSpec spec;
    spec.sizes = j.at("sizes").get<std::vector<std::int64_t>>();
    spec.contact = SquareMatrix::from_rows(j.at("contact_matrix").get<std::vector<std::vector<double>>>());
    if (j.contains("reciprocity_tolerance")) spec.reciprocity_tolerance = j.at("reciprocity_tolerance").get<double>();
    if (j.contains("complete_reciprocity")) {
        const auto mode = j.at("complete_reciprocity").get<std::string>();
        if (mode != "upper")
            throw InvariantViolation("complete_reciprocity", "only \"upper\" is supported, got \"" + mode + "\"");
        if (spec.contact.dim() != spec.sizes.size())
            throw InvariantViolation("contact matrix shape", "matrix dimension does not match group count");
        spec.contact = complete_reciprocity_from_upper(spec.contact, spec.sizes);
    }
    spec.validate();
    return spec;
}

inline nlohmann::json to_json(const GroupSpec& spec) {
    return {{"sizes", spec.sizes},
            {"contact_matrix", spec.contact.to_rows()},
            {"reciprocity_tolerance", spec.reciprocity_tolerance}};
}

}  // namespace episir
