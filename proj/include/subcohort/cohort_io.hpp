#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/csv.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace subcohort {

/// What the cohort CSV itself does not carry: the schedule and the kind of each covariate.
struct CohortSchema {
    MeasurementSchedule schedule;
    std::map<std::string, CovariateKind> kinds; // unlisted covariates are continuous
};

namespace detail {

inline bool all_integer_ids(const std::vector<std::string>& ids) {
    return std::all_of(ids.begin(), ids.end(), [](const std::string& s) {
        if (s.empty()) return false;
        long long v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        return res.ec == std::errc{} && res.ptr == s.data() + s.size();
    });
}

inline std::vector<std::size_t> id_order(const std::vector<std::string>& ids) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (all_integer_ids(ids)) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return std::stoll(ids[a]) < std::stoll(ids[b]); });
    } else {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    }
    return order;
}

} // namespace detail

/**
 * Reads a cohort CSV: `id,baseline_age,<cov>_w0..<cov>_wM,...,event_age,event`.
 * Ages are in days; an empty covariate cell is missing. Event ages beyond the
 * end of follow-up are administratively censored there. Rows are ordered by id.
 */
inline Cohort load_cohort(std::istream& in, const CohortSchema& schema) {
    const auto table = csv::read(in);
    const auto& header = table.header;
    const int waves = schema.schedule.waves();
    if (header.size() < 5 || header[0] != "id" || header[1] != "baseline_age" ||
        header[header.size() - 2] != "event_age" || header.back() != "event") {
        throw ParseError("header must be id,baseline_age,<cov>_w<k>...,event_age,event", 1);
    }

    std::vector<std::string> names;
    std::vector<std::pair<int, int>> column_cell; // (covariate, wave) per middle column
    for (std::size_t c = 2; c + 2 < header.size(); ++c) {
        const auto& col = header[c];
        const auto pos = col.rfind("_w");
        if (pos == std::string::npos || pos == 0) throw ParseError("bad covariate column '" + col + "'", 1);
        const auto name = col.substr(0, pos);
        const auto wave = static_cast<int>(csv::parse_int(col.substr(pos + 2), 1));
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
            names.push_back(name);
            it = names.end() - 1;
        }
        column_cell.emplace_back(static_cast<int>(it - names.begin()), wave);
    }
    for (int h = 0; h < static_cast<int>(names.size()); ++h) {
        std::vector<int> seen;
        for (const auto& [cov, wave] : column_cell) {
            if (cov == h) seen.push_back(wave);
        }
        std::vector<int> expect(static_cast<std::size_t>(waves));
        std::iota(expect.begin(), expect.end(), 0);
        if (seen != expect) {
            throw ValidationError("covariate '" + names[static_cast<std::size_t>(h)] + "' must have columns _w0.._w" +
                                  std::to_string(waves - 1) + " in order");
        }
    }
    std::vector<CovariateKind> kinds;
    for (const auto& n : names) {
        auto it = schema.kinds.find(n);
        kinds.push_back(it == schema.kinds.end() ? CovariateKind::continuous : it->second);
    }
    for (const auto& [name, kind] : schema.kinds) {
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            throw ValidationError("schema names covariate '" + name + "' absent from the file");
        }
    }

    std::vector<std::string> raw_ids;
    for (const auto& row : table.rows) raw_ids.push_back(row[0]);
    const auto order = detail::id_order(raw_ids);
    for (std::size_t k = 1; k < order.size(); ++k) {
        if (raw_ids[order[k]] == raw_ids[order[k - 1]]) {
            throw ParseError("duplicate id '" + raw_ids[order[k]] + "'", table.lines[order[k]]);
        }
    }

    const int n = static_cast<int>(table.rows.size());
    CovariatePanel panel(n, waves, names, kinds);
    std::vector<std::string> ids;
    std::vector<SurvivalHistory> histories;
    const double end_offset = schema.schedule.offset_days(waves);
    for (int j = 0; j < n; ++j) {
        const auto& row = table.rows[order[static_cast<std::size_t>(j)]];
        const auto line = table.lines[order[static_cast<std::size_t>(j)]];
        ids.push_back(row[0]);
        SurvivalHistory h;
        h.baseline_age = csv::parse_double(row[1], line);
        const double event_age = csv::parse_double(row[row.size() - 2], line);
        const auto event = csv::parse_int(row.back(), line);
        if (event != 0 && event != 1) throw ParseError("event must be 0 or 1", line);
        if (!(event_age > h.baseline_age)) {
            throw ValidationError("individual " + row[0] + " (line " + std::to_string(line) +
                                  "): event before baseline");
        }
        const double end_age = h.baseline_age + end_offset;
        if (event_age >= end_age) {
            h.exit_age = end_age;
            h.event = (event == 1 && event_age == end_age) ? 1 : 0;
        } else {
            h.exit_age = event_age;
            h.event = static_cast<int>(event);
        }
        histories.push_back(h);
        for (std::size_t c = 0; c < column_cell.size(); ++c) {
            const auto v = csv::parse_optional_double(row[c + 2], line);
            if (!v) continue;
            const auto [cov, wave] = column_cell[c];
            try {
                panel.set(j, wave, cov, *v);
            } catch (const ValidationError& e) {
                throw ParseError(e.what(), line);
            }
        }
    }
    panel.recenter();
    return Cohort(schema.schedule, std::move(ids), std::move(histories), std::move(panel));
}

inline Cohort load_cohort(const std::string& path, const CohortSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open cohort file '" + path + "'");
    return load_cohort(in, schema);
}

inline void save_cohort(std::ostream& out, const Cohort& cohort) {
    const auto& panel = cohort.panel();
    std::vector<std::string> header{"id", "baseline_age"};
    for (const auto& name : panel.names()) {
        for (int m = 0; m < panel.waves(); ++m) header.push_back(name + "_w" + std::to_string(m));
    }
    header.emplace_back("event_age");
    header.emplace_back("event");
    csv::write_row(out, header);
    for (int j = 0; j < cohort.size(); ++j) {
        const auto& h = cohort.history(j);
        std::vector<std::string> row{cohort.id(j), csv::format_double(h.baseline_age)};
        for (int c = 0; c < panel.covariates(); ++c) {
            for (int m = 0; m < panel.waves(); ++m) {
                row.push_back(panel.is_missing(j, m, c) ? std::string() : csv::format_double(panel.value(j, m, c)));
            }
        }
        row.push_back(csv::format_double(h.exit_age));
        row.push_back(std::to_string(h.event));
        csv::write_row(out, row);
    }
}

inline void save_cohort(const std::string& path, const Cohort& cohort) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    save_cohort(out, cohort);
}

/// Design CSV: `id,w0,...,wM` of 0/1, rows matched to the cohort by id.
/// Budgets are set to the observed column sums.
inline Design load_design(std::istream& in, const Cohort& cohort) {
    const auto table = csv::read(in);
    const int waves = cohort.schedule().waves();
    if (table.header.size() != static_cast<std::size_t>(waves) + 1 || table.header[0] != "id") {
        throw ParseError("design header must be id,w0..w" + std::to_string(waves - 1), 1);
    }
    for (int m = 0; m < waves; ++m) {
        if (table.header[static_cast<std::size_t>(m) + 1] != "w" + std::to_string(m)) {
            throw ParseError("design header must be id,w0..w" + std::to_string(waves - 1), 1);
        }
    }
    std::map<std::string, int> index;
    for (int j = 0; j < cohort.size(); ++j) index[cohort.id(j)] = j;
    Design design(cohort.size(), waves);
    std::vector<bool> seen(static_cast<std::size_t>(cohort.size()), false);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        auto it = index.find(row[0]);
        if (it == index.end()) throw ParseError("design id '" + row[0] + "' not in cohort", table.lines[r]);
        seen[static_cast<std::size_t>(it->second)] = true;
        for (int m = 0; m < waves; ++m) {
            const auto v = csv::parse_int(row[static_cast<std::size_t>(m) + 1], table.lines[r]);
            if (v != 0 && v != 1) throw ParseError("design entries must be 0 or 1", table.lines[r]);
            design.set(it->second, m, v == 1);
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw ValidationError("design does not cover every cohort member");
    }
    for (int m = 0; m < waves; ++m) design.set_budget(m, design.column_sum(m));
    return design;
}

inline Design load_design(const std::string& path, const Cohort& cohort) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open design file '" + path + "'");
    return load_design(in, cohort);
}

inline void save_design(std::ostream& out, const Cohort& cohort, const Design& design) {
    std::vector<std::string> header{"id"};
    for (int m = 0; m < design.waves(); ++m) header.push_back("w" + std::to_string(m));
    csv::write_row(out, header);
    for (int j = 0; j < cohort.size(); ++j) {
        std::vector<std::string> row{cohort.id(j)};
        for (int m = 0; m < design.waves(); ++m) row.push_back(design(j, m) ? "1" : "0");
        csv::write_row(out, row);
    }
}

inline void save_design(const std::string& path, const Cohort& cohort, const Design& design) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    save_design(out, cohort, design);
}

} // namespace subcohort
