#pragma once

#include "subcohort/common.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace subcohort {

/// x_m = c + gamma x_{m-1} + eps, eps ~ N(0, v)
struct ContinuousProcessParams {
    double c = 0.0;
    double gamma = 0.0;
    double v = 1.0;
};

/// logit P(x_m = 1) = d0 + d1 x_{m-1}
struct BinaryProcessParams {
    double d0 = 0.0;
    double d1 = 0.0;
};

/// Transition probabilities assumed before any observed transitions exist.
struct TransitionAssumption {
    double p_one_to_zero = 0.4;
    double p_zero_to_one = 0.1;

    void validate() const {
        if (!(p_one_to_zero >= 0.0 && p_one_to_zero <= 1.0) || !(p_zero_to_one >= 0.0 && p_zero_to_one <= 1.0)) {
            throw std::invalid_argument("transition probabilities must lie in [0, 1]");
        }
    }
};

inline double logistic(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double simulate_next_continuous(double prev, const ContinuousProcessParams& p, Rng& rng) {
    const double mean = p.c + p.gamma * prev;
    if (p.v <= 0.0) return mean;
    return mean + std::sqrt(p.v) * standard_normal(rng);
}

inline double binary_success_probability(double prev, const BinaryProcessParams& p) {
    return logistic(p.d0 + p.d1 * prev);
}

inline double binary_success_probability(double prev, const TransitionAssumption& a) {
    return prev != 0.0 ? 1.0 - a.p_one_to_zero : a.p_zero_to_one;
}

template <class Transition>
double simulate_next_binary(double prev, const Transition& t, Rng& rng) {
    if (prev != 0.0 && prev != 1.0) throw std::invalid_argument("binary state must be 0 or 1");
    return uniform01(rng) < binary_success_probability(prev, t) ? 1.0 : 0.0;
}

inline double logdensity_continuous(double next, double prev, const ContinuousProcessParams& p) {
    if (!(p.v > 0.0)) throw std::invalid_argument("process variance must be positive");
    const double r = next - p.c - p.gamma * prev;
    return -0.5 * std::log(2.0 * std::numbers::pi * p.v) - 0.5 * r * r / p.v;
}

/// Log Bernoulli mass, computed stably from the linear predictor.
inline double logmass_binary(double next, double prev, const BinaryProcessParams& p) {
    const double z = p.d0 + p.d1 * prev;
    // log logistic(z) = -log1p(exp(-z))
    const auto log_sigmoid = [](double u) { return u >= 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u)); };
    return next != 0.0 ? log_sigmoid(z) : log_sigmoid(-z);
}

inline double logmass_binary(double next, double prev, const TransitionAssumption& a) {
    const double p1 = binary_success_probability(prev, a);
    return std::log(next != 0.0 ? p1 : 1.0 - p1);
}

enum class FeatureRule { identity, quadratic };

inline FeatureRule feature_rule_from_string(const std::string& s) {
    if (s == "identity" || s == "linear") return FeatureRule::identity;
    if (s == "quadratic") return FeatureRule::quadratic;
    throw std::invalid_argument("unknown feature rule '" + s + "'");
}

inline std::string to_string(FeatureRule r) { return r == FeatureRule::quadratic ? "quadratic" : "identity"; }

/**
 * Expansion of raw (centered) covariates into model columns: identity keeps a
 * column, quadratic emits (x, x^2).
 */
class FeatureMap {
public:
    FeatureMap() = default;
    explicit FeatureMap(std::vector<FeatureRule> rules) : rules_(std::move(rules)) {}

    static FeatureMap identity(int raw_covariates) {
        return FeatureMap(std::vector<FeatureRule>(static_cast<std::size_t>(raw_covariates), FeatureRule::identity));
    }

    int raw_width() const noexcept { return static_cast<int>(rules_.size()); }
    int width() const noexcept {
        int w = 0;
        for (auto r : rules_) w += r == FeatureRule::quadratic ? 2 : 1;
        return w;
    }
    const std::vector<FeatureRule>& rules() const noexcept { return rules_; }

    /// Raw covariate that feature column k derives from.
    int source(int k) const {
        int col = 0;
        for (int h = 0; h < raw_width(); ++h) {
            const int w = rules_[static_cast<std::size_t>(h)] == FeatureRule::quadratic ? 2 : 1;
            if (k < col + w) return h;
            col += w;
        }
        throw std::out_of_range("feature column out of range");
    }

    std::vector<std::string> names(const std::vector<std::string>& raw_names) const {
        std::vector<std::string> out;
        for (int h = 0; h < raw_width(); ++h) {
            out.push_back(raw_names.at(static_cast<std::size_t>(h)));
            if (rules_[static_cast<std::size_t>(h)] == FeatureRule::quadratic) out.push_back(raw_names[static_cast<std::size_t>(h)] + "^2");
        }
        return out;
    }

    /// Writes the expansion of an already-centered row into `out` (size width()).
    void expand_into(std::span<const double> centered, Eigen::Ref<Vector> out) const {
        if (static_cast<int>(centered.size()) != raw_width()) throw std::invalid_argument("raw row has wrong width");
        int k = 0;
        for (int h = 0; h < raw_width(); ++h) {
            const double v = centered[static_cast<std::size_t>(h)];
            out(k++) = v;
            if (rules_[static_cast<std::size_t>(h)] == FeatureRule::quadratic) out(k++) = v * v;
        }
    }

    bool operator==(const FeatureMap&) const = default;

private:
    std::vector<FeatureRule> rules_;
};

/**
 * Centers a raw row by `offsets` and expands it. Missing raw entries (nullopt)
 * make every derived column missing.
 */
inline std::vector<std::optional<double>> expand_features(std::span<const std::optional<double>> raw,
                                                          std::span<const double> offsets, const FeatureMap& map) {
    if (static_cast<int>(raw.size()) != map.raw_width() || offsets.size() != raw.size()) {
        throw std::invalid_argument("raw row, offsets and feature map disagree in width");
    }
    std::vector<std::optional<double>> out;
    for (int h = 0; h < map.raw_width(); ++h) {
        const auto& v = raw[static_cast<std::size_t>(h)];
        const bool quad = map.rules()[static_cast<std::size_t>(h)] == FeatureRule::quadratic;
        if (!v) {
            out.emplace_back();
            if (quad) out.emplace_back();
            continue;
        }
        const double c = *v - offsets[static_cast<std::size_t>(h)];
        out.emplace_back(c);
        if (quad) out.emplace_back(c * c);
    }
    return out;
}

} // namespace subcohort
