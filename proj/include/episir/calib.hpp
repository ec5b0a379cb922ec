#pragma once

// Reported-case ingestion and the country calibration pipeline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "episir/common.hpp"
#include "episir/estimate.hpp"
#include "episir/series.hpp"
#include "episir/simcore.hpp"

namespace episir {

using Date = std::chrono::sys_days;

inline std::optional<Date> parse_iso_date(const std::string& s) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) return std::nullopt;
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

inline std::string format_iso_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

struct CaseSeries {
    std::vector<Date> dates;
    std::vector<double> cumulative;  // counts
    std::vector<double> removed_recorded;  // counts; empty unless the file has removed_cases
    double population = 0.0;
    std::size_t gap_days_filled = 0;
    std::size_t decreases_clamped = 0;
    std::vector<bool> filled;  // true on carried-forward days

    std::size_t size() const { return dates.size(); }
    std::vector<double> per_capita() const {
        std::vector<double> c(cumulative.size());
        for (std::size_t t = 0; t < c.size(); ++t) c[t] = cumulative[t] / population;
        return c;
    }
    std::vector<double> smoothed() const { return smooth_cumulative_7d(per_capita()); }
    bool has_recorded_removed() const { return !removed_recorded.empty(); }
    std::vector<double> removed_per_capita() const {
        std::vector<double> r(removed_recorded.size());
        for (std::size_t t = 0; t < r.size(); ++t) r[t] = removed_recorded[t] / population;
        return r;
    }
    std::vector<double> daily_new() const { return daily_increments(per_capita()); }
    std::vector<double> removed(double gamma) const { return recursive_removed(per_capita(), gamma); }
    std::vector<double> active(double gamma) const {
        const auto c = per_capita();
        return active_from(c, recursive_removed(c, gamma));
    }
    std::optional<std::size_t> index_of(Date d) const {
        if (dates.empty() || d < dates.front() || d > dates.back()) return std::nullopt;
        return static_cast<std::size_t>((d - dates.front()).count());
    }
};

/// Parses `date,cumulative_cases[,removed_cases]`.  Missing days carry the
/// last values forward; decreases are clamped to the previous value.
inline CaseSeries load_case_series(std::istream& in, double population) {
    if (!(population > 0.0)) throw InvariantViolation("population > 0", std::to_string(population));
    CaseSeries cs;
    cs.population = population;
    std::string line;
    std::size_t row = 0;
    bool header = false;
    bool with_removed = false;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (row == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.empty()) continue;
        if (!header) {
            with_removed = line == "date,cumulative_cases,removed_cases";
            if (line != "date,cumulative_cases" && !with_removed)
                throw InvariantViolation("case file header", "row " + std::to_string(row) + ": expected date,cumulative_cases");
            header = true;
            continue;
        }
        auto bad = [&](const std::string& why) {
            return InvariantViolation("parseable case rows", "row " + std::to_string(row) + ": " + why);
        };
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.emplace_back();
        const std::size_t want = with_removed ? 3 : 2;
        if (fields.size() != want) throw bad("expected " + std::to_string(want) + " fields");
        const auto date = parse_iso_date(fields[0]);
        if (!date) throw bad("invalid ISO-8601 date \"" + fields[0] + "\"");
        auto count = [&](const std::string& num) {
            double v = 0.0;
            std::size_t used = 0;
            try {
                v = std::stod(num, &used);
            } catch (const std::exception&) {
                throw bad("invalid count \"" + num + "\"");
            }
            if (used != num.size() || !std::isfinite(v) || v < 0.0) throw bad("invalid count \"" + num + "\"");
            return v;
        };
        double v = count(fields[1]);
        double r = with_removed ? count(fields[2]) : 0.0;
        if (!cs.dates.empty()) {
            if (*date <= cs.dates.back()) throw bad("dates must be strictly increasing");
            const double last = cs.cumulative.back();
            const double last_r = with_removed ? cs.removed_recorded.back() : 0.0;
            for (Date d = cs.dates.back() + std::chrono::days{1}; d < *date; d += std::chrono::days{1}) {
                cs.dates.push_back(d);
                cs.cumulative.push_back(last);
                if (with_removed) cs.removed_recorded.push_back(last_r);
                cs.filled.push_back(true);
                ++cs.gap_days_filled;
            }
            if (v < last) {
                v = last;
                ++cs.decreases_clamped;
            }
            if (r < last_r) {
                r = last_r;
                ++cs.decreases_clamped;
            }
        }
        cs.dates.push_back(*date);
        cs.cumulative.push_back(v);
        if (with_removed) cs.removed_recorded.push_back(r);
        cs.filled.push_back(false);
    }
    if (cs.dates.empty()) throw InvariantViolation("non-empty case file", header ? "no data rows" : "file is empty");
    return cs;
}

inline CaseSeries load_case_series(const std::filesystem::path& file, double population) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InvalidParameter("cannot open case file " + file.string());
    return load_case_series(in, population);
}

/// MF per day from block endpoints: linear between endpoints, constant
/// before the first and after the last.
inline std::vector<double> interpolate_mf(std::size_t length, std::span<const std::pair<std::size_t, double>> blocks) {
    std::vector<double> m(length, 1.0);
    if (blocks.empty()) return m;
    for (std::size_t t = 0; t < length; ++t) {
        if (t <= blocks.front().first) {
            m[t] = blocks.front().second;
            continue;
        }
        if (t >= blocks.back().first) {
            m[t] = blocks.back().second;
            continue;
        }
        std::size_t k = 1;
        while (blocks[k].first < t) ++k;
        const auto [t0, m0] = blocks[k - 1];
        const auto [t1, m1] = blocks[k];
        m[t] = m0 + (m1 - m0) * static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
    }
    return m;
}

/// Running sum of m_t * delta c_t.
inline std::vector<double> adjust_cumulative_mf(std::span<const double> dc, std::span<const double> m) {
    if (dc.size() != m.size()) throw InvalidParameter("adjust_cumulative_mf: series lengths differ");
    std::vector<double> out(dc.size());
    double acc = 0.0;
    for (std::size_t t = 0; t < dc.size(); ++t) out[t] = acc += m[t] * dc[t];
    return out;
}

inline std::vector<double> adjust_cumulative_mf(std::span<const double> dc,
                                                std::span<const std::pair<std::size_t, double>> blocks) {
    const auto m = interpolate_mf(dc.size(), blocks);
    return adjust_cumulative_mf(dc, m);
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
    double population = 0.0;
    JointConfig joint;
    /// Estimation stops on this date (e.g. when 10% are fully vaccinated).
    std::optional<std::string> stop_date;

    void validate() const {
        if (!(population > 0.0)) throw InvariantViolation("population > 0", std::to_string(population));
        if (stop_date && !parse_iso_date(*stop_date))
            throw InvariantViolation("stop_date is an ISO-8601 date", "\"" + *stop_date + "\"");
        joint.validate();
    }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j = to_json(c.joint);
    j["population"] = c.population;
    j["stop_date"] = c.stop_date ? nlohmann::json(*c.stop_date) : nlohmann::json(nullptr);
    return j;
}

struct ComparisonRow {
    std::size_t position = 0;
    double realized_new = 0.0;  // MF-adjusted daily new cases
    double mean = 0.0, p10 = 0.0, p90 = 0.0;
    bool covered = false;
};

struct PipelineResult {
    CaseSeries cases;
    std::vector<double> smoothed;
    JointResult joint;
    std::vector<double> mf_daily;
    std::vector<double> adjusted;  // MF-adjusted cumulative per capita
    std::vector<ComparisonRow> comparison;
    double coverage = kNaN;  // share of compared days inside the p10-p90 band

    nlohmann::json summary() const {
        const auto& e = joint.estimates;
        nlohmann::json blocks = nlohmann::json::array();
        for (const auto& [t, m] : e.mf_blocks) blocks.push_back({{"date", format_iso_date(cases.dates[t])}, {"m_hat", m}});
        return {{"days", cases.size()},
                {"gap_days_filled", cases.gap_days_filled},
                {"decreases_clamped", cases.decreases_clamped},
                {"outbreak_start", format_iso_date(cases.dates[e.outbreak_start])},
                {"identification", e.t0 ? nlohmann::json(format_iso_date(cases.dates[*e.t0])) : nlohmann::json(nullptr)},
                {"estimated_days", e.size()},
                {"mf_blocks", blocks},
                {"fanchart_coverage", std::isfinite(coverage) ? nlohmann::json(coverage) : nlohmann::json(nullptr)},
                {"compared_days", comparison.size()},
                {"calibrated", joint.calibrated.summary_json()}};
    }
};

namespace detail {
template <class F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& ex) {
        throw StageError(name, ex.what());
    }
}
}  // namespace detail

/// smooth -> removed recursion -> outbreak start -> joint estimation ->
/// calibrated single-group ensemble compared with the MF-adjusted series.
inline PipelineResult run_pipeline(CaseSeries cases, const PipelineConfig& cfg) {
    detail::stage("config", [&] {
        cfg.validate();
        return 0;
    });
    PipelineResult out;
    out.cases = std::move(cases);
    out.smoothed = out.cases.smoothed();
    JointConfig jc = cfg.joint;
    if (cfg.stop_date) {
        const auto idx = out.cases.index_of(*parse_iso_date(*cfg.stop_date));
        if (!idx) throw StageError("config", "stop_date " + *cfg.stop_date + " lies outside the case series");
        jc.stop_index = *idx;
    }
    out.joint = detail::stage("estimate", [&] { return joint_estimate(out.smoothed, jc); });

    const auto& e = out.joint.estimates;
    const std::size_t T = e.size();
    std::vector<double> dc = daily_increments(std::span<const double>(out.smoothed).first(T));
    out.mf_daily = interpolate_mf(T, e.mf_blocks);
    out.adjusted = adjust_cumulative_mf(dc, out.mf_daily);

    if (e.t0) {
        const auto band = out.joint.calibrated.band(SeriesKind::new_cases, -1,
                                                    static_cast<std::int32_t>(T - e.outbreak_start));
        std::size_t hits = 0;
        for (std::size_t t = *e.t0 + 1; t < T; ++t) {
            const std::size_t d = t - e.outbreak_start;  // 0-based simulation day index of position t
            ComparisonRow row;
            row.position = t;
            row.realized_new = out.adjusted[t] - out.adjusted[t - 1];
            row.mean = band.mean[d];
            row.p10 = band.p10[d];
            row.p90 = band.p90[d];
            row.covered = row.realized_new >= row.p10 && row.realized_new <= row.p90;
            hits += row.covered ? 1 : 0;
            out.comparison.push_back(row);
        }
        if (!out.comparison.empty()) out.coverage = static_cast<double>(hits) / static_cast<double>(out.comparison.size());
    }
    return out;
}

inline PipelineResult run_pipeline(const std::filesystem::path& case_file, const PipelineConfig& cfg) {
    auto cases = detail::stage("load", [&] { return load_case_series(case_file, cfg.population); });
    return run_pipeline(std::move(cases), cfg);
}

/// Calibrated new-case band: date, day, mean, p10, p25, p50, p75, p90.
inline void write_fanchart_csv(std::ostream& os, const PipelineResult& r) {
    const auto& e = r.joint.estimates;
    const std::size_t offset = e.outbreak_start;
    const auto band = r.joint.calibrated.band(SeriesKind::new_cases, -1, static_cast<std::int32_t>(e.size() - offset));
    os.precision(12);
    os << "date,day,mean,p10,p25,p50,p75,p90\n";
    for (std::size_t d = 0; d < band.mean.size(); ++d)
        os << format_iso_date(r.cases.dates[offset + d]) << ',' << d + 1 << ',' << band.mean[d] << ',' << band.p10[d] << ','
           << band.p25[d] << ',' << band.p50[d] << ',' << band.p75[d] << ',' << band.p90[d] << '\n';
}

inline void write_adjusted_csv(std::ostream& os, const PipelineResult& r) {
    os.precision(12);
    os << "date,c_tilde,delta_c_tilde,m_hat,adjusted_cumulative,adjusted_new,filled\n";
    for (std::size_t t = 0; t < r.adjusted.size(); ++t) {
        const double dc = t == 0 ? r.smoothed[0] : r.smoothed[t] - r.smoothed[t - 1];
        const double an = t == 0 ? r.adjusted[0] : r.adjusted[t] - r.adjusted[t - 1];
        os << format_iso_date(r.cases.dates[t]) << ',' << r.smoothed[t] << ',' << dc << ',' << r.mf_daily[t] << ','
           << r.adjusted[t] << ',' << an << ',' << (r.cases.filled[t] ? 1 : 0) << '\n';
    }
}

/// estimates.csv, calibrated_fanchart.csv, adjusted_cases.csv, summary.json.
inline std::vector<std::filesystem::path> write_pipeline_outputs(const PipelineResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto open = [&](const char* name) {
        written.push_back(dir / name);
        std::ofstream os(written.back(), std::ios::binary);
        if (!os) throw StageError("output", "cannot write " + written.back().string());
        return os;
    };
    {
        auto os = open("estimates.csv");
        write_estimates_csv(os, r.joint.estimates);
    }
    {
        auto os = open("calibrated_fanchart.csv");
        write_fanchart_csv(os, r);
    }
    {
        auto os = open("adjusted_cases.csv");
        write_adjusted_csv(os, r);
    }
    {
        auto os = open("summary.json");
        os << r.summary().dump(2) << '\n';
    }
    return written;
}

}  // namespace episir
