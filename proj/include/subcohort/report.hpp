#pragma once

#include "subcohort/csv.hpp"
#include "subcohort/experiment.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace subcohort {

namespace detail {

inline std::string clean_cell(std::string s) {
    for (auto& ch : s) {
        if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    }
    return s;
}

inline std::ofstream open_output(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    return out;
}

inline std::string sig3(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

} // namespace detail

inline void write_estimates(std::ostream& out, const std::vector<EstimateRecord>& estimates) {
    csv::write_row(out, {"replicate", "strategy", "budget", "parameter", "mean", "sd", "q025", "q975"});
    for (const auto& e : estimates) {
        csv::write_row(out, {std::to_string(e.replicate), e.strategy, e.budget, e.parameter, csv::format_double(e.mean),
                             csv::format_double(e.sd), csv::format_double(e.q025), csv::format_double(e.q975)});
    }
}

inline std::vector<EstimateRecord> read_estimates(std::istream& in) {
    const auto t = csv::read(in);
    const int rep = t.require_column("replicate"), st = t.require_column("strategy"), bu = t.require_column("budget"),
              pa = t.require_column("parameter"), me = t.require_column("mean"), sd = t.require_column("sd"),
              lo = t.require_column("q025"), hi = t.require_column("q975");
    std::vector<EstimateRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto line = t.lines[r];
        out.push_back({static_cast<int>(csv::parse_int(row[static_cast<std::size_t>(rep)], line)),
                       row[static_cast<std::size_t>(st)], row[static_cast<std::size_t>(bu)],
                       row[static_cast<std::size_t>(pa)], csv::parse_double(row[static_cast<std::size_t>(me)], line),
                       csv::parse_double(row[static_cast<std::size_t>(sd)], line),
                       csv::parse_double(row[static_cast<std::size_t>(lo)], line),
                       csv::parse_double(row[static_cast<std::size_t>(hi)], line)});
    }
    return out;
}

/// Figure-1-style selection order: id, round, criterion, age at selection, previous covariate values.
inline void write_selections(std::ostream& out, const std::vector<SelectionRow>& rows,
                             const std::vector<std::string>& covariates) {
    std::vector<std::string> header{"replicate", "strategy", "budget", "wave", "id", "round", "criterion", "age_days", "tied"};
    for (const auto& c : covariates) header.push_back("prev_" + c);
    csv::write_row(out, header);
    for (const auto& r : rows) {
        std::vector<std::string> cells{std::to_string(r.replicate),
                                       r.strategy,
                                       r.budget,
                                       std::to_string(r.wave),
                                       r.id,
                                       std::to_string(r.record.round),
                                       std::isnan(r.record.criterion) ? "" : csv::format_double(r.record.criterion),
                                       csv::format_double(r.record.age),
                                       std::to_string(r.record.tied)};
        for (double v : r.record.previous) cells.push_back(std::isnan(v) ? "" : csv::format_double(v));
        csv::write_row(out, cells);
    }
}

inline void write_failures(std::ostream& out, const std::vector<FailureRecord>& failures) {
    csv::write_row(out, {"replicate", "strategy", "budget", "message"});
    for (const auto& f : failures) {
        csv::write_row(out, {std::to_string(f.replicate), f.strategy, f.budget, detail::clean_cell(f.message)});
    }
}

inline void write_result_csv(std::ostream& out, const ResultTable& t) {
    csv::write_row(out, {"strategy", "budget", "parameter", "mean", "sd", "se", "count", "sd_available", "replicates"});
    for (const auto& r : t.rows) {
        csv::write_row(out, {r.strategy, r.budget, r.parameter, csv::format_double(r.mean_of_means),
                             r.sd_available() ? csv::format_double(r.sd_of_means) : "", csv::format_double(r.mean_se),
                             std::to_string(r.count), r.sd_available() ? "1" : "0", std::to_string(t.replicates)});
    }
}

inline ResultTable read_result_csv(std::istream& in) {
    const auto t = csv::read(in);
    ResultTable table;
    const auto col = [&](const char* n) { return static_cast<std::size_t>(t.require_column(n)); };
    const auto st = col("strategy"), bu = col("budget"), pa = col("parameter"), me = col("mean"), sd = col("sd"),
               se = col("se"), co = col("count"), re = col("replicates");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto line = t.lines[r];
        ResultRow x;
        x.strategy = row[st];
        x.budget = row[bu];
        x.parameter = row[pa];
        x.mean_of_means = csv::parse_double(row[me], line);
        x.sd_of_means = row[sd].empty() ? std::numeric_limits<double>::quiet_NaN() : csv::parse_double(row[sd], line);
        x.mean_se = csv::parse_double(row[se], line);
        x.count = static_cast<int>(csv::parse_int(row[co], line));
        table.replicates = static_cast<int>(csv::parse_int(row[re], line));
        table.rows.push_back(x);
    }
    return table;
}

inline std::string result_json(const ResultTable& t) {
    nlohmann::ordered_json j;
    j["replicates"] = t.replicates;
    j["partial"] = t.partial();
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : t.rows) {
        nlohmann::ordered_json row;
        row["strategy"] = r.strategy;
        row["budget"] = r.budget;
        row["parameter"] = r.parameter;
        row["mean"] = r.mean_of_means;
        row["sd"] = r.sd_available() ? nlohmann::ordered_json(r.sd_of_means) : nlohmann::ordered_json(nullptr);
        row["se"] = r.mean_se;
        row["count"] = r.count;
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

inline ResultTable read_result_json(const std::string& text) {
    ResultTable t;
    try {
        const auto j = nlohmann::json::parse(text);
        t.replicates = j.at("replicates").get<int>();
        for (const auto& row : j.at("rows")) {
            ResultRow r;
            r.strategy = row.at("strategy").get<std::string>();
            r.budget = row.at("budget").get<std::string>();
            r.parameter = row.at("parameter").get<std::string>();
            r.mean_of_means = row.at("mean").get<double>();
            r.sd_of_means = row.at("sd").is_null() ? std::numeric_limits<double>::quiet_NaN() : row.at("sd").get<double>();
            r.mean_se = row.at("se").get<double>();
            r.count = row.at("count").get<int>();
            t.rows.push_back(r);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("result JSON: ") + e.what(), 1);
    }
    return t;
}

/**
 * Aligned text table in the layout of a design-comparison table: one line per
 * design arm, Mean / SD / SE per regression coefficient, 3 significant digits.
 */
inline std::string result_text(const ResultTable& t) {
    std::vector<std::string> params;
    std::vector<std::pair<std::string, std::string>> arms;
    for (const auto& r : t.rows) {
        if (r.parameter.rfind("beta_", 0) == 0 && std::find(params.begin(), params.end(), r.parameter) == params.end()) {
            params.push_back(r.parameter);
        }
        const std::pair<std::string, std::string> arm{r.strategy, r.budget};
        if (std::find(arms.begin(), arms.end(), arm) == arms.end()) arms.push_back(arm);
    }
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head{"Design", "n"};
    for (const auto& p : params) {
        head.push_back(p + " Mean");
        head.push_back("SD");
        head.push_back("SE");
    }
    head.emplace_back("Reps");
    grid.push_back(head);
    for (const auto& [strategy, budget] : arms) {
        std::vector<std::string> line{strategy, budget};
        int count = 0;
        for (const auto& p : params) {
            const auto* r = t.find(strategy, budget, p);
            if (!r) {
                line.insert(line.end(), {"", "", ""});
                continue;
            }
            count = std::max(count, r->count);
            line.push_back(detail::sig3(r->mean_of_means));
            line.push_back(r->sd_available() ? detail::sig3(r->sd_of_means) : "NA");
            line.push_back(detail::sig3(r->mean_se));
        }
        line.push_back(std::to_string(count));
        grid.push_back(line);
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& line : grid) {
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    }
    std::ostringstream o;
    for (const auto& line : grid) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            const auto pad = std::string(width[c] - line[c].size(), ' ');
            o << (c ? "  " : "") << (c < 2 ? line[c] + pad : pad + line[c]);
        }
        o << '\n';
    }
    if (t.partial()) o << "partial: some cells aggregate fewer than " << t.replicates << " replicates\n";
    return o.str();
}

inline void write_report(const std::filesystem::path& dir, const ResultTable& t) {
    std::filesystem::create_directories(dir);
    {
        auto out = detail::open_output(dir / "results.csv");
        write_result_csv(out, t);
    }
    {
        auto out = detail::open_output(dir / "results.json");
        out << result_json(t);
    }
    {
        auto out = detail::open_output(dir / "results.txt");
        out << result_text(t);
    }
}

/// Writes raw artifacts (config echo, estimates, selections, failures) and the report tables.
inline void write_artifacts(const std::filesystem::path& dir, const ExperimentArtifacts& art,
                            const std::vector<std::string>& covariates) {
    std::filesystem::create_directories(dir);
    {
        auto out = detail::open_output(dir / "config.ini");
        out << art.config_ini;
    }
    {
        auto out = detail::open_output(dir / "estimates.csv");
        write_estimates(out, art.estimates);
    }
    {
        auto out = detail::open_output(dir / "selections.csv");
        write_selections(out, art.selections, covariates);
    }
    {
        auto out = detail::open_output(dir / "failures.csv");
        write_failures(out, art.failures);
    }
    write_report(dir, art.table);
}

/// Rebuilds the result table from the raw artifacts in `dir`.
inline ResultTable table_from_artifacts(const std::filesystem::path& dir) {
    const auto est_path = dir / "estimates.csv";
    const auto cfg_path = dir / "config.ini";
    if (!std::filesystem::exists(est_path) || !std::filesystem::exists(cfg_path)) {
        throw std::runtime_error("missing artifacts in '" + dir.string() + "' (need config.ini and estimates.csv)");
    }
    const auto cfg = load_config(cfg_path.string());
    std::ifstream in(est_path);
    return aggregate(read_estimates(in), cfg.replicates);
}

} // namespace subcohort
