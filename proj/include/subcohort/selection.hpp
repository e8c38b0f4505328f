#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/information.hpp"
#include "subcohort/mcmc.hpp"
#include "subcohort/model.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace subcohort {

enum class Strategy { dbeta, srs, full };

inline std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::dbeta: return "dbeta";
    case Strategy::srs: return "srs";
    case Strategy::full: return "full";
    }
    return "unknown";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "dbeta") return Strategy::dbeta;
    if (s == "srs") return Strategy::srs;
    if (s == "full") return Strategy::full;
    throw std::invalid_argument("unknown strategy '" + s + "' (expected dbeta, srs or full)");
}

struct SelectionSettings {
    int q = 25;
    int mc_reps = 100;
    int budget = 0;
    std::uint64_t seed = 1;
    double tie_tolerance = 1e-12;

    void validate() const {
        if (q < 1) throw std::invalid_argument("q must be at least 1");
        if (mc_reps < 1) throw std::invalid_argument("mc_reps must be at least 1");
        if (budget < 1) throw std::invalid_argument("budget must be at least 1");
        if (!(tie_tolerance >= 0.0)) throw std::invalid_argument("tie_tolerance must be nonnegative");
    }
};

/// One selected individual, with the data behind selection-order plots.
struct SelectionRecord {
    int individual = 0;
    int round = 0;
    double criterion = std::numeric_limits<double>::quiet_NaN(); // mean D_beta after this addition
    double age = 0.0;                                           // days, at the wave
    std::vector<double> previous;                               // raw covariates at the previous wave
    int tied = 1;                                               // candidates tied for this pick
};

struct SelectionResult {
    Strategy method = Strategy::full;
    int wave = 0;
    double initial_criterion = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> draws; // posterior draws frozen for the criterion
    std::vector<SelectionRecord> records;

    std::vector<int> ordered() const {
        std::vector<int> out;
        for (const auto& r : records) out.push_back(r.individual);
        return out;
    }

    std::vector<double> criterion_trace() const {
        std::vector<double> out;
        for (const auto& r : records) out.push_back(r.criterion);
        return out;
    }
};

namespace detail {

inline SelectionRecord plain_record(const Cohort& cohort, int j, int wave, int round) {
    SelectionRecord r;
    r.individual = j;
    r.round = round;
    r.age = cohort.age_at(j, wave);
    const auto& panel = cohort.panel();
    for (int h = 0; h < panel.covariates(); ++h) {
        r.previous.push_back(panel.is_missing(j, wave - 1, h) ? std::numeric_limits<double>::quiet_NaN()
                                                               : panel.value(j, wave - 1, h));
    }
    return r;
}

inline void check_wave(const Cohort& cohort, int wave) {
    if (wave < 1 || wave > cohort.horizon_wave() || wave >= cohort.schedule().waves()) {
        throw std::out_of_range("selection wave out of range");
    }
}

} // namespace detail

/// q draws evenly spaced through the retained sample: the starting points for build_greedy_problem.
inline std::vector<std::size_t> selection_draws(const PosteriorSample& sample, int q) {
    if (sample.draws.size() < static_cast<std::size_t>(q)) {
        throw std::invalid_argument("posterior sample holds " + std::to_string(sample.draws.size()) +
                                    " draws but q = " + std::to_string(q));
    }
    std::vector<std::size_t> idx;
    for (int l = 0; l < q; ++l) idx.push_back(static_cast<std::size_t>(l) * sample.draws.size() / static_cast<std::size_t>(q));
    return idx;
}

/**
 * Frozen inputs of one greedy wave: per-draw observed information and the
 * cached expected information of every candidate under every draw.
 */
struct GreedyProblem {
    int H = 0;
    std::vector<std::size_t> draws;
    std::vector<int> candidates;
    std::vector<InformationMatrix> observed;            // per draw
    std::vector<std::vector<InformationMatrix>> expected; // [candidate][draw]
};

namespace detail {

inline bool positive_definite(const Matrix& m) {
    const Vector d = m.diagonal();
    if (!(d.minCoeff() > 0.0) || !d.allFinite()) return false;
    const Vector s = d.cwiseSqrt().cwiseInverse();
    Eigen::LLT<Matrix> llt(s.asDiagonal() * m * s.asDiagonal());
    return llt.info() == Eigen::Success;
}

} // namespace detail

/**
 * Frozen draws are taken evenly spaced through the sample; a draw at which the
 * observed information is not positive definite is replaced by the next usable
 * draw in sample order.
 */
inline GreedyProblem build_greedy_problem(const Cohort& cohort, int wave, const PosteriorSample& sample,
                                          const ModelSpec& spec, const SelectionSettings& settings) {
    detail::check_wave(cohort, wave);
    if (sample.meta.data_fingerprint != 0 && sample.meta.data_fingerprint != data_fingerprint(cohort)) {
        throw std::invalid_argument("posterior was not fit to the data available before this wave");
    }
    GreedyProblem p;
    p.H = spec.width();
    p.candidates = at_risk(cohort, wave);
    const auto n = sample.draws.size();
    std::vector<bool> used(n, false);
    std::vector<std::vector<double>> realizations;
    std::vector<DrawModel> models;
    for (auto start : selection_draws(sample, settings.q)) {
        bool found = false;
        for (std::size_t step = 0; step < n && !found; ++step) {
            const auto l = (start + step) % n;
            if (used[l]) continue;
            auto real = sample.realization(cohort, l);
            auto info = observed_info(cohort, real, sample.draws[l].survival, spec);
            if (!detail::positive_definite(info.matrix())) continue;
            used[l] = true;
            found = true;
            p.draws.push_back(l);
            realizations.push_back(std::move(real));
            models.push_back(DrawModel::from_draw(sample.draws[l], cohort, spec));
            p.observed.push_back(std::move(info));
        }
        if (!found) {
            throw SingularInformationError("fewer than q posterior draws give positive definite observed information");
        }
    }
    const auto& draws = p.draws;
    p.expected.resize(p.candidates.size());
    for (std::size_t c = 0; c < p.candidates.size(); ++c) {
        const int j = p.candidates[c];
        for (std::size_t l = 0; l < draws.size(); ++l) {
            Rng rng(derive_seed(settings.seed, static_cast<std::uint64_t>(wave), static_cast<std::uint64_t>(j), l));
            const auto state = candidate_state(cohort, realizations[l], j, wave);
            p.expected[c].push_back(expected_candidate_info(state, models[l], settings.mc_reps, rng));
        }
    }
    return p;
}

/// Mean D_beta over draws of Psi_l = current_l + extra_l.
inline double mean_d_beta(const std::vector<InformationMatrix>& current, const std::vector<InformationMatrix>* extra,
                          int H) {
    double sum = 0.0;
    Matrix psi;
    for (std::size_t l = 0; l < current.size(); ++l) {
        psi = current[l].matrix();
        if (extra) psi += (*extra)[l].matrix();
        try {
            sum += d_beta_value(psi, H);
        } catch (const SingularInformationError& e) {
            throw SingularInformationError(std::string(e.what()) + " (prior draw " + std::to_string(l) + ")");
        }
    }
    return sum / static_cast<double>(current.size());
}

/**
 * Greedy selection over a frozen problem: each round adds the candidate with the
 * smallest mean D_beta; ties within the relative tolerance are broken uniformly at random.
 */
inline std::vector<SelectionRecord> greedy_rounds(const GreedyProblem& p, int budget, double tie_tolerance, Rng& rng,
                                                  double* initial_criterion = nullptr) {
    std::vector<InformationMatrix> current = p.observed;
    if (initial_criterion) *initial_criterion = mean_d_beta(current, nullptr, p.H);
    std::vector<bool> taken(p.candidates.size(), false);
    const int n = std::min<int>(budget, static_cast<int>(p.candidates.size()));
    std::vector<SelectionRecord> out;
    std::vector<double> values(p.candidates.size());
    for (int round = 1; round <= n; ++round) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < p.candidates.size(); ++c) {
            if (taken[c]) continue;
            try {
                values[c] = mean_d_beta(current, &p.expected[c], p.H);
            } catch (const SingularInformationError& e) {
                throw SingularInformationError(std::string(e.what()) + " evaluating candidate index " +
                                               std::to_string(p.candidates[c]));
            }
            best = std::min(best, values[c]);
        }
        std::vector<std::size_t> tied;
        for (std::size_t c = 0; c < p.candidates.size(); ++c) {
            if (!taken[c] && values[c] <= best + tie_tolerance * std::abs(best)) tied.push_back(c);
        }
        std::size_t pick = tied.front();
        if (tied.size() > 1) pick = tied[std::min(tied.size() - 1, static_cast<std::size_t>(uniform01(rng) * tied.size()))];
        taken[pick] = true;
        for (std::size_t l = 0; l < current.size(); ++l) current[l] += p.expected[pick][l];
        SelectionRecord r;
        r.individual = p.candidates[pick];
        r.round = round;
        r.criterion = values[pick];
        r.tied = static_cast<int>(tied.size());
        out.push_back(std::move(r));
    }
    return out;
}

/**
 * Greedy Bayesian D_beta selection at `wave` on the cohort as observed before the
 * wave (design applied, follow-up truncated), with prior draws from `sample`.
 */
inline SelectionResult greedy_select(const Cohort& cohort, int wave, const PosteriorSample& sample,
                                     const ModelSpec& spec, const SelectionSettings& settings) {
    settings.validate();
    const auto problem = build_greedy_problem(cohort, wave, sample, spec, settings);
    if (problem.candidates.empty()) throw std::invalid_argument("no individuals at risk at this wave");
    Rng rng(derive_seed(settings.seed, 0x7469657ULL, static_cast<std::uint64_t>(wave)));
    SelectionResult result;
    result.method = Strategy::dbeta;
    result.wave = wave;
    result.records = greedy_rounds(problem, settings.budget, settings.tie_tolerance, rng, &result.initial_criterion);

    result.draws = problem.draws;
    std::vector<std::vector<double>> realizations;
    for (auto l : problem.draws) realizations.push_back(sample.realization(cohort, l));
    const auto& panel = cohort.panel();
    for (auto& r : result.records) {
        r.age = cohort.age_at(r.individual, wave);
        for (int h = 0; h < panel.covariates(); ++h) {
            if (!panel.is_missing(r.individual, wave - 1, h)) {
                r.previous.push_back(panel.value(r.individual, wave - 1, h));
                continue;
            }
            double s = 0.0;
            for (const auto& x : realizations) s += x[panel.index(r.individual, wave - 1, h)];
            r.previous.push_back(s / static_cast<double>(realizations.size()));
        }
    }
    return result;
}

/// Uniform sample without replacement of min(budget, at-risk) individuals.
inline SelectionResult srs_select(const Cohort& cohort, int wave, int budget, Rng& rng) {
    detail::check_wave(cohort, wave);
    if (budget < 0) throw std::invalid_argument("budget must be nonnegative");
    auto pool = at_risk(cohort, wave);
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(budget), pool.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = i + std::min(pool.size() - i - 1, static_cast<std::size_t>(uniform01(rng) * (pool.size() - i)));
        std::swap(pool[i], pool[k]);
    }
    SelectionResult result;
    result.method = Strategy::srs;
    result.wave = wave;
    for (std::size_t i = 0; i < n; ++i) result.records.push_back(detail::plain_record(cohort, pool[i], wave, static_cast<int>(i) + 1));
    return result;
}

inline SelectionResult full_select(const Cohort& cohort, int wave) {
    detail::check_wave(cohort, wave);
    SelectionResult result;
    result.method = Strategy::full;
    result.wave = wave;
    int round = 0;
    for (int j : at_risk(cohort, wave)) result.records.push_back(detail::plain_record(cohort, j, wave, ++round));
    return result;
}

/// What was done at one wave, for provenance.
struct WaveAudit {
    Strategy strategy = Strategy::full;
    int wave = 0;
    int budget = 0;
    SelectionSettings settings;
    std::uint64_t posterior_seed = 0;
    std::uint64_t posterior_fingerprint = 0;
    std::uint64_t data_fingerprint = 0;
    SelectionResult selection;
};

struct WaveOutcome {
    Design design;
    WaveAudit audit;
};

/**
 * Resolves design column `wave` given the columns before it. `complete` is the
 * fully observed cohort; the strategy only sees its design-applied, truncated view.
 */
inline WaveOutcome run_wave(const Cohort& complete, const Design& design, int wave, Strategy strategy,
                            const SelectionSettings& settings, const ModelSpec& selection_spec,
                            const PosteriorSample* posterior) {
    if (wave < 1 || wave >= complete.schedule().waves()) throw std::out_of_range("wave out of range");
    const Cohort observed = apply_design(complete, design).truncated(wave);
    WaveOutcome out;
    out.design = design;
    out.audit.strategy = strategy;
    out.audit.wave = wave;
    out.audit.budget = settings.budget;
    out.audit.settings = settings;
    out.audit.data_fingerprint = data_fingerprint(observed);
    switch (strategy) {
    case Strategy::dbeta:
        if (!posterior) throw std::invalid_argument("the dbeta strategy needs a posterior fit to the data so far");
        out.audit.posterior_seed = posterior->meta.seed;
        out.audit.posterior_fingerprint = posterior->meta.data_fingerprint;
        out.audit.selection = greedy_select(observed, wave, *posterior, selection_spec, settings);
        break;
    case Strategy::srs: {
        Rng rng(derive_seed(settings.seed, 0x737273ULL, static_cast<std::uint64_t>(wave)));
        out.audit.selection = srs_select(observed, wave, settings.budget, rng);
        break;
    }
    case Strategy::full:
        out.audit.selection = full_select(observed, wave);
        break;
    }
    for (int j = 0; j < complete.size(); ++j) out.design.set(j, wave, false);
    for (const auto& r : out.audit.selection.records) out.design.set(r.individual, wave, true);
    out.design.set_budget(wave, strategy == Strategy::full ? out.design.column_sum(wave) : settings.budget);
    return out;
}

} // namespace subcohort
