#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/covariate_process.hpp"
#include "subcohort/weibull.hpp"

#include <string>
#include <vector>

namespace subcohort {

/// Data-generating model of one covariate (raw scale).
struct CovariateGenerator {
    std::string name;
    CovariateKind kind = CovariateKind::continuous;
    double baseline_mean = 0.0;
    double baseline_sd = 1.0;
    double baseline_p = 0.5;
    ContinuousProcessParams process{0.0, 0.5, 0.75};
    TransitionAssumption transitions{};
    FeatureRule feature = FeatureRule::identity;
    /// Subtracted before feature expansion in the true hazard.
    double feature_center = 0.0;
    /// Probability that the baseline value is unrecorded.
    double baseline_missing_prob = 0.0;
};

struct CohortGenerator {
    int individuals = 1500;
    double age_min_years = 45.0;
    double age_max_years = 65.0;
    MeasurementSchedule schedule{{0.0, 10.0, 20.0}, 30.0};
    std::vector<CovariateGenerator> covariates;
    SurvivalParams truth;

    FeatureMap feature_map() const {
        std::vector<FeatureRule> rules;
        for (const auto& c : covariates) rules.push_back(c.feature);
        return FeatureMap(std::move(rules));
    }

    void validate() const {
        if (individuals < 0) throw ValidationError("cohort size must be nonnegative");
        if (!(age_min_years > 0.0) || !(age_max_years >= age_min_years)) throw ValidationError("invalid age range");
        if (covariates.empty()) throw ValidationError("at least one covariate is required");
        truth.validate();
        if (truth.covariates() != feature_map().width()) {
            throw ValidationError("true beta has " + std::to_string(truth.covariates()) + " entries but the features have " +
                                  std::to_string(feature_map().width()));
        }
        for (const auto& c : covariates) {
            if (c.name.empty()) throw ValidationError("covariate without a name");
            if (c.kind == CovariateKind::binary) {
                c.transitions.validate();
                if (!(c.baseline_p >= 0.0 && c.baseline_p <= 1.0)) throw ValidationError("baseline_p must lie in [0, 1]");
            } else if (!(c.baseline_sd >= 0.0) || !(c.process.v >= 0.0)) {
                throw ValidationError("covariate '" + c.name + "': variances must be nonnegative");
            }
            if (!(c.baseline_missing_prob >= 0.0 && c.baseline_missing_prob < 1.0)) {
                throw ValidationError("baseline_missing_prob must lie in [0, 1)");
            }
        }
    }
};

/**
 * Simulates a full cohort: uniform baseline ages, covariate chains at every wave,
 * piecewise survival with covariates updated at each wave, administrative
 * censoring at the end of follow-up. Covariates after exit are unrecorded.
 */
inline Cohort generate_cohort(const CohortGenerator& g, std::uint64_t seed) {
    g.validate();
    Rng rng(seed);
    const int n = g.individuals;
    const int waves = g.schedule.waves();
    const int H = static_cast<int>(g.covariates.size());
    std::vector<std::string> names;
    std::vector<CovariateKind> kinds;
    for (const auto& c : g.covariates) {
        names.push_back(c.name);
        kinds.push_back(c.kind);
    }
    CovariatePanel panel(n, waves, names, kinds);
    const auto map = g.feature_map();
    std::vector<SurvivalHistory> histories;
    std::vector<std::string> ids;
    std::vector<double> raw(static_cast<std::size_t>(waves * H));
    std::vector<double> centered(static_cast<std::size_t>(H));
    Vector x(map.width());

    for (int j = 0; j < n; ++j) {
        ids.push_back(std::to_string(j + 1));
        const double age_years = g.age_min_years + (g.age_max_years - g.age_min_years) * uniform01(rng);
        SurvivalHistory hist;
        hist.baseline_age = age_years * kDaysPerYear;

        for (int h = 0; h < H; ++h) {
            const auto& c = g.covariates[static_cast<std::size_t>(h)];
            double v = 0.0;
            if (c.kind == CovariateKind::binary) {
                v = uniform01(rng) < c.baseline_p ? 1.0 : 0.0;
            } else {
                v = c.baseline_mean + c.baseline_sd * standard_normal(rng);
            }
            raw[static_cast<std::size_t>(h)] = v;
            for (int m = 1; m < waves; ++m) {
                v = c.kind == CovariateKind::binary ? simulate_next_binary(v, c.transitions, rng)
                                                    : simulate_next_continuous(v, c.process, rng);
                raw[static_cast<std::size_t>(m * H + h)] = v;
            }
        }

        int last_wave = waves - 1;
        for (int m = 0; m < waves; ++m) {
            const double lo = hist.baseline_age + g.schedule.offset_days(m);
            const double hi = hist.baseline_age + g.schedule.offset_days(m + 1);
            for (int h = 0; h < H; ++h) {
                centered[static_cast<std::size_t>(h)] =
                    raw[static_cast<std::size_t>(m * H + h)] - g.covariates[static_cast<std::size_t>(h)].feature_center;
            }
            map.expand_into(centered, x);
            const auto draw = sample_interval_survival(lo, x, g.truth, hi, rng);
            hist.exit_age = draw.age;
            if (draw.delta) {
                hist.event = 1;
                last_wave = m;
                break;
            }
        }
        histories.push_back(hist);

        for (int h = 0; h < H; ++h) {
            const auto& c = g.covariates[static_cast<std::size_t>(h)];
            const bool drop_baseline = c.baseline_missing_prob > 0.0 && uniform01(rng) < c.baseline_missing_prob;
            for (int m = 0; m <= last_wave; ++m) {
                if (m == 0 && drop_baseline) continue;
                panel.set(j, m, h, raw[static_cast<std::size_t>(m * H + h)]);
            }
        }
    }
    panel.recenter();
    return Cohort(g.schedule, std::move(ids), std::move(histories), std::move(panel));
}

} // namespace subcohort
