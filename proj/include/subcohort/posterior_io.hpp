#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/csv.hpp"
#include "subcohort/mcmc.hpp"

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace subcohort {

/// Column name of an imputed cell: imp:<id>:<covariate>:<wave>.
inline std::string imputed_column(const Cohort& cohort, const Cell& c) {
    return "imp:" + cohort.id(c.individual) + ":" + cohort.panel().names()[static_cast<std::size_t>(c.covariate)] + ":" +
           std::to_string(c.wave);
}

/// One row per retained draw; every parameter, then (optionally) every imputed cell.
inline void write_draws(std::ostream& out, const Cohort& cohort, const PosteriorSample& s, bool imputed = true) {
    auto header = s.parameter_names();
    if (imputed) {
        for (const auto& c : s.missing_cells) header.push_back(imputed_column(cohort, c));
    }
    csv::write_row(out, header);
    for (const auto& d : s.draws) {
        std::vector<std::string> row;
        for (double v : s.parameter_values(d)) row.push_back(csv::format_double(v));
        if (imputed) {
            for (double v : d.imputed) row.push_back(csv::format_double(v));
        }
        csv::write_row(out, row);
    }
}

/**
 * Reads draws written by write_draws back against the same cohort. Imputed-cell
 * columns are matched by id, covariate and wave.
 */
inline PosteriorSample read_draws(std::istream& in, const Cohort& cohort) {
    const auto t = csv::read(in);
    PosteriorSample s;
    const auto& panel = cohort.panel();
    s.covariate_names = panel.names();
    s.covariate_kinds = panel.kinds();
    std::map<std::string, int> col;
    for (std::size_t i = 0; i < t.header.size(); ++i) col[t.header[i]] = static_cast<int>(i);

    for (const auto& h : t.header) {
        if (h.rfind("beta_", 0) == 0) s.feature_names.push_back(h.substr(5));
    }
    const auto need = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end()) throw ParseError("draws file lacks column '" + name + "'", 1);
        return static_cast<std::size_t>(it->second);
    };
    std::map<std::string, int> id_index;
    for (int j = 0; j < cohort.size(); ++j) id_index[cohort.id(j)] = j;
    std::vector<std::size_t> imputed_cols;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        const auto& h = t.header[i];
        if (h.rfind("imp:", 0) != 0) continue;
        const auto parts = csv::split(h, ':');
        if (parts.size() != 4) throw ParseError("bad imputed column '" + h + "'", 1);
        const auto id_it = id_index.find(parts[1]);
        const auto& names = panel.names();
        const auto cov_it = std::find(names.begin(), names.end(), parts[2]);
        if (id_it == id_index.end() || cov_it == names.end()) {
            throw ParseError("imputed column '" + h + "' does not match the cohort", 1);
        }
        s.missing_cells.push_back({id_it->second, static_cast<int>(csv::parse_int(parts[3], 1)),
                                   static_cast<int>(cov_it - names.begin())});
        imputed_cols.push_back(i);
    }

    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto line = t.lines[r];
        const auto num = [&](const std::string& name) { return csv::parse_double(row[need(name)], line); };
        PosteriorDraw d;
        d.survival.beta.resize(static_cast<Eigen::Index>(s.feature_names.size()));
        for (std::size_t k = 0; k < s.feature_names.size(); ++k) {
            d.survival.beta(static_cast<Eigen::Index>(k)) = num("beta_" + s.feature_names[k]);
        }
        d.survival.shape = num("shape");
        d.survival.scale = num("scale");
        d.reparam = to_reparam(d.survival.shape, d.survival.scale);
        d.continuous.assign(s.covariate_names.size(), {});
        d.binary.assign(s.covariate_names.size(), {});
        for (std::size_t h = 0; h < s.covariate_names.size(); ++h) {
            const auto& n = s.covariate_names[h];
            if (s.covariate_kinds[h] == CovariateKind::continuous) {
                d.continuous[h] = {num("c_" + n), num("gamma_" + n), num("v_" + n)};
            } else {
                d.binary[h] = {num("d0_" + n), num("d1_" + n)};
            }
        }
        for (auto c : imputed_cols) d.imputed.push_back(csv::parse_double(row[c], line));
        s.draws.push_back(std::move(d));
    }
    return s;
}

/// parameter,mean,sd,q025,q500,q975,ess
inline void write_summary(std::ostream& out, const PosteriorSample& s) {
    csv::write_row(out, {"parameter", "mean", "sd", "q025", "q500", "q975", "ess"});
    for (const auto& p : s.parameter_names()) {
        const auto trace = s.trace(p);
        const auto sum = posterior_summary(trace);
        const std::string ess = trace.size() >= 10 ? csv::format_double(effective_sample_size(trace)) : "";
        csv::write_row(out, {p, csv::format_double(sum.mean), csv::format_double(sum.sd), csv::format_double(sum.q025),
                             csv::format_double(sum.q500), csv::format_double(sum.q975), ess});
    }
}

} // namespace subcohort
