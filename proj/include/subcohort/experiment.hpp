#pragma once

#include "subcohort/config.hpp"
#include "subcohort/mcmc.hpp"
#include "subcohort/selection.hpp"
#include "subcohort/simulate.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace subcohort {

/// One design arm of an experiment: a strategy with its per-wave budgets.
struct Stratum {
    Strategy strategy = Strategy::full;
    BudgetSpec budget;

    std::string budget_label() const { return strategy == Strategy::full ? "all" : budget.label(); }
};

inline std::vector<Stratum> experiment_strata(const ExperimentConfig& cfg) {
    std::vector<Stratum> out;
    for (auto s : cfg.strategies) {
        if (s == Strategy::full) {
            out.push_back({s, {}});
        } else {
            for (const auto& b : cfg.budgets) out.push_back({s, b});
        }
    }
    return out;
}

/// Posterior summary of one survival parameter from one replicate's final fit.
struct EstimateRecord {
    int replicate = 0;
    std::string strategy;
    std::string budget;
    std::string parameter;
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q975 = 0.0;
};

struct SelectionRow {
    int replicate = 0;
    std::string strategy;
    std::string budget;
    int wave = 0;
    std::string id;
    SelectionRecord record;
};

struct FailureRecord {
    int replicate = 0;
    std::string strategy;
    std::string budget;
    std::string message;
};

/// Aggregate over replicates for one (strategy, budget, parameter).
struct ResultRow {
    std::string strategy;
    std::string budget;
    std::string parameter;
    double mean_of_means = 0.0;
    double sd_of_means = std::numeric_limits<double>::quiet_NaN(); // unavailable with fewer than 2 replicates
    double mean_se = 0.0;
    int count = 0;

    bool sd_available() const { return count > 1; }
    bool operator==(const ResultRow& o) const {
        const auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
        return strategy == o.strategy && budget == o.budget && parameter == o.parameter &&
               same(mean_of_means, o.mean_of_means) && same(sd_of_means, o.sd_of_means) && same(mean_se, o.mean_se) &&
               count == o.count;
    }
};

struct ResultTable {
    int replicates = 0; // configured
    std::vector<ResultRow> rows;

    /// True when some cell aggregates fewer replicates than configured.
    bool partial() const {
        return std::any_of(rows.begin(), rows.end(), [&](const ResultRow& r) { return r.count != replicates; });
    }

    const ResultRow* find(const std::string& strategy, const std::string& budget, const std::string& parameter) const {
        for (const auto& r : rows) {
            if (r.strategy == strategy && r.budget == budget && r.parameter == parameter) return &r;
        }
        return nullptr;
    }

    bool operator==(const ResultTable&) const = default;
};

/// Aggregates per-replicate estimates in first-appearance order of (strategy, budget, parameter).
inline ResultTable aggregate(const std::vector<EstimateRecord>& estimates, int replicates) {
    ResultTable t;
    t.replicates = replicates;
    std::vector<std::vector<const EstimateRecord*>> groups;
    for (const auto& e : estimates) {
        std::size_t g = 0;
        for (; g < t.rows.size(); ++g) {
            if (t.rows[g].strategy == e.strategy && t.rows[g].budget == e.budget && t.rows[g].parameter == e.parameter) break;
        }
        if (g == t.rows.size()) {
            t.rows.push_back({e.strategy, e.budget, e.parameter});
            groups.emplace_back();
        }
        groups[g].push_back(&e);
    }
    for (std::size_t g = 0; g < t.rows.size(); ++g) {
        auto& row = t.rows[g];
        const auto& members = groups[g];
        row.count = static_cast<int>(members.size());
        double sum = 0.0, se = 0.0;
        for (const auto* e : members) {
            sum += e->mean;
            se += e->sd;
        }
        row.mean_of_means = sum / row.count;
        row.mean_se = se / row.count;
        if (row.count > 1) {
            double ss = 0.0;
            for (const auto* e : members) ss += (e->mean - row.mean_of_means) * (e->mean - row.mean_of_means);
            row.sd_of_means = std::sqrt(ss / (row.count - 1));
        }
    }
    return t;
}

struct ExperimentArtifacts {
    std::string config_ini;
    std::vector<EstimateRecord> estimates;
    std::vector<SelectionRow> selections;
    std::vector<FailureRecord> failures;
    ResultTable table;
};

struct ReplicateOutput {
    std::vector<EstimateRecord> estimates;
    std::vector<SelectionRow> selections;
    std::vector<FailureRecord> failures;
};

/// Survival parameters reported in result tables: every beta, then shape and scale.
inline std::vector<std::string> reported_parameters(const PosteriorSample& s) {
    std::vector<std::string> out;
    for (const auto& f : s.feature_names) out.push_back("beta_" + f);
    out.emplace_back("shape");
    out.emplace_back("scale");
    return out;
}

/**
 * Runs one design arm on one complete cohort: for each wave, refit (when the
 * strategy needs a posterior), select and measure; then the final fit.
 */
inline Design run_design_arm(const Cohort& complete, const ExperimentConfig& cfg, const Stratum& stratum,
                             std::uint64_t arm_seed, std::vector<WaveAudit>* audits = nullptr) {
    if (stratum.strategy == Strategy::full) return Design::full(complete);
    Design design = Design::baseline(complete);
    const auto spec = cfg.selection_spec();
    for (int wave = 1; wave < complete.schedule().waves(); ++wave) {
        SelectionSettings ss = cfg.selection;
        ss.budget = stratum.budget.at(wave);
        ss.seed = derive_seed(arm_seed, 0x73656cULL, static_cast<std::uint64_t>(wave));
        std::optional<PosteriorSample> post;
        if (stratum.strategy == Strategy::dbeta) {
            auto mc = cfg.mcmc;
            mc.seed = derive_seed(arm_seed, 0x666974ULL, static_cast<std::uint64_t>(wave));
            post = run_chain(apply_design(complete, design).truncated(wave), spec, cfg.priors, mc);
        }
        auto outcome = run_wave(complete, design, wave, stratum.strategy, ss, spec, post ? &*post : nullptr);
        design = std::move(outcome.design);
        if (audits) audits->push_back(std::move(outcome.audit));
    }
    return design;
}

inline ReplicateOutput run_replicate(const ExperimentConfig& cfg, int replicate) {
    ReplicateOutput out;
    const auto rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(replicate));
    Cohort cohort;
    try {
        cohort = generate_cohort(cfg.generator, derive_seed(rep_seed, 0x636f68ULL));
    } catch (const std::exception& e) {
        out.failures.push_back({replicate, "*", "*", std::string("cohort generation: ") + e.what()});
        return out;
    }
    const auto strata = experiment_strata(cfg);
    for (std::size_t s = 0; s < strata.size(); ++s) {
        const auto& st = strata[s];
        const auto name = to_string(st.strategy);
        const auto label = st.budget_label();
        try {
            const auto arm_seed = derive_seed(rep_seed, 0x61726dULL, s);
            std::vector<WaveAudit> audits;
            const Design design = run_design_arm(cohort, cfg, st, arm_seed, &audits);
            auto mc = cfg.mcmc;
            mc.seed = derive_seed(arm_seed, 0x66696eULL);
            const auto post = run_chain(apply_design(cohort, design), cfg.analysis_spec(), cfg.priors, mc);
            for (const auto& p : reported_parameters(post)) {
                const auto summary = posterior_summary(post, p);
                out.estimates.push_back({replicate, name, label, p, summary.mean, summary.sd, summary.q025, summary.q975});
            }
            for (const auto& a : audits) {
                for (const auto& r : a.selection.records) {
                    out.selections.push_back({replicate, name, label, a.wave, cohort.id(r.individual), r});
                }
            }
        } catch (const std::exception& e) {
            out.failures.push_back({replicate, name, label, e.what()});
        }
    }
    return out;
}

/**
 * Runs every replicate (in parallel across `cfg.threads` workers) and reduces in
 * replicate order, so artifacts do not depend on scheduling.
 */
inline ExperimentArtifacts run_experiment(const ExperimentConfig& cfg,
                                          const std::function<void(int)>& on_replicate_done = {}) {
    cfg.validate();
    std::vector<ReplicateOutput> outputs(static_cast<std::size_t>(cfg.replicates));
    std::atomic<int> next{0};
    std::mutex progress;
    const auto worker = [&] {
        for (int r = next++; r < cfg.replicates; r = next++) {
            outputs[static_cast<std::size_t>(r)] = run_replicate(cfg, r);
            if (on_replicate_done) {
                std::lock_guard lock(progress);
                on_replicate_done(r);
            }
        }
    };
    const int workers = std::min(cfg.threads, cfg.replicates);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    ExperimentArtifacts art;
    art.config_ini = config_to_ini(cfg);
    for (auto& o : outputs) {
        art.estimates.insert(art.estimates.end(), o.estimates.begin(), o.estimates.end());
        art.selections.insert(art.selections.end(), o.selections.begin(), o.selections.end());
        art.failures.insert(art.failures.end(), o.failures.begin(), o.failures.end());
    }
    art.table = aggregate(art.estimates, cfg.replicates);
    return art;
}

} // namespace subcohort
