#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/covariate_process.hpp"
#include "subcohort/weibull.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace subcohort {

/**
 * How raw covariates enter the survival model and how their processes are
 * treated when no transitions have been observed yet.
 */
struct ModelSpec {
    FeatureMap features;
    bool center = true;
    /// Per raw covariate; used for binary covariates without observed transitions.
    std::vector<TransitionAssumption> binary_assumption;
    /// Per raw covariate, on the centered scale; used for continuous covariates without
    /// observed transitions. Defaults to carrying the last value forward.
    std::vector<ContinuousProcessParams> continuous_assumption;

    static ModelSpec linear(int raw_covariates) {
        ModelSpec s;
        s.features = FeatureMap::identity(raw_covariates);
        s.binary_assumption.assign(static_cast<std::size_t>(raw_covariates), TransitionAssumption{});
        s.continuous_assumption.assign(static_cast<std::size_t>(raw_covariates), ContinuousProcessParams{0.0, 1.0, 0.0});
        return s;
    }

    static ModelSpec with_features(FeatureMap map) {
        auto s = linear(map.raw_width());
        s.features = std::move(map);
        return s;
    }

    int raw_width() const noexcept { return features.raw_width(); }
    int width() const noexcept { return features.width(); }
};

/// Offsets subtracted before expansion: the panel's centering offsets, or zero when centering is off.
inline std::vector<double> model_offsets(const CovariatePanel& panel, const ModelSpec& spec) {
    if (spec.raw_width() != panel.covariates()) {
        throw std::invalid_argument("feature map width does not match the number of covariates");
    }
    if (!spec.center) return std::vector<double>(static_cast<std::size_t>(panel.covariates()), 0.0);
    return panel.centering_offsets();
}

/// Cell (individual, wave, covariate) of a covariate panel.
struct Cell {
    int individual = 0;
    int wave = 0;
    int covariate = 0;
    bool operator==(const Cell&) const = default;
};

/// Missing cells that enter the likelihood: wave m for individuals followed during interval m.
inline std::vector<Cell> in_scope_missing_cells(const Cohort& cohort) {
    std::vector<Cell> cells;
    const auto& panel = cohort.panel();
    for (int j = 0; j < cohort.size(); ++j) {
        const int n_records = static_cast<int>(cohort.records(j).size());
        for (int m = 0; m < n_records; ++m) {
            for (int h = 0; h < panel.covariates(); ++h) {
                if (panel.is_missing(j, m, h)) cells.push_back({j, m, h});
            }
        }
    }
    return cells;
}

/// True when some individual has covariate h observed at two consecutive waves.
inline bool has_transition_data(const Cohort& cohort, int h) {
    const auto& panel = cohort.panel();
    for (int j = 0; j < cohort.size(); ++j) {
        const int n_records = static_cast<int>(cohort.records(j).size());
        for (int m = 1; m < n_records; ++m) {
            if (!panel.is_missing(j, m, h) && !panel.is_missing(j, m - 1, h)) return true;
        }
    }
    return false;
}

/**
 * Feature vector of individual j at wave m from a realization (panel-layout raw
 * values with missing cells filled).
 */
inline void features_at(const CovariatePanel& panel, const std::vector<double>& realization, int j, int m,
                        const std::vector<double>& offsets, const FeatureMap& map, Eigen::Ref<Vector> out) {
    const int H = panel.covariates();
    double centered[64];
    if (H > 64) throw std::invalid_argument("too many covariates");
    for (int h = 0; h < H; ++h) {
        const double v = realization[panel.index(j, m, h)];
        if (std::isnan(v)) {
            throw std::invalid_argument("covariate realization has an unfilled missing value (individual " +
                                        std::to_string(j) + ", wave " + std::to_string(m) + ")");
        }
        centered[h] = v - offsets[static_cast<std::size_t>(h)];
    }
    map.expand_into(std::span<const double>(centered, static_cast<std::size_t>(H)), out);
}

/// Sum of interval log-likelihoods over every individual and observed interval.
inline double total_loglik(const Cohort& cohort, const std::vector<double>& realization, const SurvivalParams& params,
                           const ModelSpec& spec) {
    if (realization.size() != cohort.panel().values().size()) {
        throw std::invalid_argument("realization does not match the panel shape");
    }
    const auto offsets = model_offsets(cohort.panel(), spec);
    Vector x(spec.width());
    double ll = 0.0;
    for (const auto& rec : cohort.intervals()) {
        features_at(cohort.panel(), realization, rec.individual, rec.wave, offsets, spec.features, x);
        ll += interval_loglik(rec.t_lo, rec.t_hi, rec.delta, x, params);
    }
    return ll;
}

/// Hash of what a fit can see: cohort size, follow-up horizon, observed intervals and the missingness pattern.
inline std::uint64_t data_fingerprint(const Cohort& cohort) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    mix(static_cast<std::uint64_t>(cohort.size()));
    mix(static_cast<std::uint64_t>(cohort.horizon_wave()));
    mix(cohort.intervals().size());
    const auto& panel = cohort.panel();
    for (int j = 0; j < cohort.size(); ++j) {
        for (int m = 0; m < panel.waves(); ++m) {
            for (int c = 0; c < panel.covariates(); ++c) mix(panel.is_missing(j, m, c) ? 1 : 2);
        }
    }
    return h;
}

} // namespace subcohort
