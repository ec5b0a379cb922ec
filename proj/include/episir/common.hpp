#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace episir {

/// Default daily recovery probability (two-week infectious period).
inline constexpr double kDefaultGamma = 1.0 / 14.0;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Base class for everything the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A scalar argument outside its admissible range.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// A structured input violating one of its stated invariants.  The name of
/// the invariant is kept separately so callers can report it verbatim.
class InvariantViolation : public Error {
public:
    InvariantViolation(std::string invariant, const std::string& detail)
        : Error(invariant + ": " + detail), invariant_(std::move(invariant)) {}

    const std::string& invariant() const noexcept { return invariant_; }

private:
    std::string invariant_;
};

/// Failure inside a multi-stage pipeline, labelled with the stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& detail)
        : Error("[" + stage + "] " + detail), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream for (master seed, index, purpose).  Streams depend only
/// on these three values, never on scheduling, so ensembles are reproducible
/// regardless of how replications are distributed over threads.
inline Rng make_stream(std::uint64_t master_seed, std::uint64_t index, std::uint64_t salt = 0) {
    std::uint64_t h = splitmix64(master_seed);
    h = splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ splitmix64(salt + 0x8cb92ba72f3d8dd7ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(salt)};
    return Rng(seq);
}

/// Stream purposes, kept distinct so that adding an intervention does not
/// perturb the epidemic draws of a paired baseline run.
enum class StreamSalt : std::uint64_t {
    epidemic = 0,
    intervention = 1,
    estimation = 2,
};

inline Rng make_stream(std::uint64_t master_seed, std::uint64_t index, StreamSalt salt) {
    return make_stream(master_seed, index, static_cast<std::uint64_t>(salt));
}

/// Dense row-major square matrix, sized by group count.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t dim, double fill = 0.0) : dim_(dim), data_(dim * dim, fill) {}

    static SquareMatrix from_rows(const std::vector<std::vector<double>>& rows) {
        SquareMatrix m(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size())
                throw InvariantViolation("square matrix", "row " + std::to_string(i) + " has " +
                                                              std::to_string(rows[i].size()) + " entries, expected " +
                                                              std::to_string(rows.size()));
            for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
        }
        return m;
    }

    std::size_t dim() const noexcept { return dim_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }

    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

    std::vector<std::vector<double>> to_rows() const {
        std::vector<std::vector<double>> rows(dim_, std::vector<double>(dim_));
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) rows[i][j] = (*this)(i, j);
        return rows;
    }

    friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Quantile of an ascending-sorted sample by linear interpolation between the
/// closest order statistics (h = (B-1)p).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) return kNaN;
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace episir
