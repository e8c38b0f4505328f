#pragma once

#include "subcohort/cohort_io.hpp"
#include "subcohort/csv.hpp"
#include "subcohort/mcmc.hpp"
#include "subcohort/model.hpp"
#include "subcohort/selection.hpp"
#include "subcohort/simulate.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace subcohort {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-wave budgets n_1..n_M for one design arm.
struct BudgetSpec {
    std::vector<int> per_wave;

    int at(int wave) const {
        if (per_wave.size() == 1) return per_wave.front();
        return per_wave.at(static_cast<std::size_t>(wave - 1));
    }

    std::string label() const {
        std::string s;
        for (std::size_t i = 0; i < per_wave.size(); ++i) s += (i ? "/" : "") + std::to_string(per_wave[i]);
        return s;
    }
};

/// Estimation-side treatment of one covariate.
struct CovariateModelSpec {
    FeatureRule analysis_feature = FeatureRule::identity;
    FeatureRule selection_feature = FeatureRule::identity;
    TransitionAssumption binary_assumption{};
    ContinuousProcessParams continuous_assumption{0.0, 1.0, 0.0};
};

struct ExperimentConfig {
    std::string profile = "desk";
    CohortGenerator generator;
    std::vector<CovariateModelSpec> models; // parallel to generator.covariates
    std::vector<Strategy> strategies{Strategy::dbeta, Strategy::srs, Strategy::full};
    std::vector<BudgetSpec> budgets;
    int replicates = 30;
    std::uint64_t seed = 20150101;
    McmcSettings mcmc;
    PriorSpec priors;
    SelectionSettings selection;
    int threads = 1;
    std::string output = "out";

    ModelSpec model_spec(bool for_selection) const {
        std::vector<FeatureRule> rules;
        ModelSpec s;
        for (const auto& m : models) {
            rules.push_back(for_selection ? m.selection_feature : m.analysis_feature);
            s.binary_assumption.push_back(m.binary_assumption);
            s.continuous_assumption.push_back(m.continuous_assumption);
        }
        s.features = FeatureMap(std::move(rules));
        return s;
    }
    ModelSpec analysis_spec() const { return model_spec(false); }
    ModelSpec selection_spec() const { return model_spec(true); }

    CohortSchema schema() const {
        CohortSchema s{generator.schedule, {}};
        for (const auto& c : generator.covariates) s.kinds[c.name] = c.kind;
        return s;
    }

    void validate() const {
        try {
            generator.validate();
            mcmc.validate();
            priors.validate();
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        if (models.size() != generator.covariates.size()) throw ConfigError("covariate model list out of sync");
        for (const auto& m : models) {
            if (m.continuous_assumption.v < 0.0) throw ConfigError("assumed process variance must be nonnegative");
            try {
                m.binary_assumption.validate();
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
        }
        if (replicates < 1) throw ConfigError("replicates must be at least 1");
        if (threads < 1) throw ConfigError("threads must be at least 1");
        if (selection.q < 1 || selection.mc_reps < 1 || !(selection.tie_tolerance >= 0.0)) {
            throw ConfigError("selection needs q >= 1, mc_reps >= 1, tie_tolerance >= 0");
        }
        if (selection.q > mcmc.retained) throw ConfigError("q exceeds the number of retained posterior draws");
        std::set<std::string> names;
        for (const auto& c : generator.covariates) {
            if (!names.insert(c.name).second) throw ConfigError("covariate '" + c.name + "' defined twice");
        }
        const bool needs_budget = std::any_of(strategies.begin(), strategies.end(), [](Strategy s) { return s != Strategy::full; });
        if (needs_budget && budgets.empty()) throw ConfigError("strategies other than full need at least one budget");
        const int M = generator.schedule.remeasurements();
        for (const auto& b : budgets) {
            if (b.per_wave.size() != 1 && static_cast<int>(b.per_wave.size()) != M) {
                throw ConfigError("budget '" + b.label() + "' must give one value or one per re-measurement wave");
            }
            for (int n : b.per_wave) {
                if (n < 1 || n > generator.individuals) throw ConfigError("budget '" + b.label() + "' is outside 1..N");
            }
        }
    }
};

namespace detail {

inline ExperimentConfig base_profile() {
    ExperimentConfig c;
    CovariateGenerator x;
    x.name = "x";
    CovariateGenerator z = x;
    z.name = "z";
    c.generator.covariates = {x, z};
    c.generator.truth = {Vector{{0.1, 0.4}}, 6.3, 27900.0};
    CovariateModelSpec m;
    m.continuous_assumption = {0.0, 0.5, 0.75};
    c.models = {m, m};
    return c;
}

} // namespace detail

/// Built-in profiles: "desk" (N=500, 30 replicates, shortened chains) and "paper" (N=1500, 100 replicates).
inline ExperimentConfig profile_config(const std::string& name) {
    auto c = detail::base_profile();
    c.profile = name;
    if (name == "desk") {
        c.generator.individuals = 500;
        c.replicates = 30;
        c.budgets = {{{100}}, {{150}}};
        c.mcmc.iterations = 6000;
        c.mcmc.burn_in = 2000;
        c.mcmc.retained = 500;
    } else if (name == "paper") {
        c.generator.individuals = 1500;
        c.replicates = 100;
        c.budgets = {{{300}}, {{400}}, {{500}}, {{600}}};
        c.mcmc.iterations = 20000;
        c.mcmc.burn_in = 5000;
        c.mcmc.retained = 1000;
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
    }
    return c;
}

namespace detail {

using boost::property_tree::ptree;

inline double config_double(const std::string& section, const std::string& key, const std::string& v) {
    try {
        return csv::parse_double(csv::trim(v), 0);
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": expected a number, got '" + v + "'");
    }
}

inline long long config_int(const std::string& section, const std::string& key, const std::string& v) {
    try {
        return csv::parse_int(csv::trim(v), 0);
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": expected an integer, got '" + v + "'");
    }
}

inline std::vector<std::string> config_list(const std::string& v) {
    std::vector<std::string> out;
    for (auto& item : csv::split(v, ',')) {
        item = csv::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<double> config_doubles(const std::string& section, const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : config_list(v)) out.push_back(config_double(section, key, item));
    return out;
}

inline void apply_covariate(ExperimentConfig& cfg, const std::string& name, const ptree& sec,
                            std::vector<double>& beta_out) {
    const std::string section = "covariate:" + name;
    auto it = std::find_if(cfg.generator.covariates.begin(), cfg.generator.covariates.end(),
                           [&](const CovariateGenerator& c) { return c.name == name; });
    if (it == cfg.generator.covariates.end()) {
        CovariateGenerator g;
        g.name = name;
        cfg.generator.covariates.push_back(g);
        CovariateModelSpec m;
        m.continuous_assumption = {g.process.c, g.process.gamma, g.process.v};
        cfg.models.push_back(m);
        it = cfg.generator.covariates.end() - 1;
    }
    const auto idx = static_cast<std::size_t>(it - cfg.generator.covariates.begin());
    auto& g = *it;
    auto& m = cfg.models[idx];
    bool selection_feature_set = false;
    for (const auto& [key, node] : sec) {
        const auto v = node.get_value<std::string>();
        try {
            if (key == "kind") g.kind = covariate_kind_from_string(std::string(csv::trim(v)));
            else if (key == "beta") beta_out = config_doubles(section, key, v);
            else if (key == "feature") m.analysis_feature = feature_rule_from_string(std::string(csv::trim(v)));
            else if (key == "selection_feature") {
                m.selection_feature = feature_rule_from_string(std::string(csv::trim(v)));
                selection_feature_set = true;
            } else if (key == "feature_center") g.feature_center = config_double(section, key, v);
            else if (key == "baseline_mean") g.baseline_mean = config_double(section, key, v);
            else if (key == "baseline_sd") g.baseline_sd = config_double(section, key, v);
            else if (key == "baseline_p") g.baseline_p = config_double(section, key, v);
            else if (key == "baseline_missing_prob") g.baseline_missing_prob = config_double(section, key, v);
            else if (key == "c") g.process.c = config_double(section, key, v);
            else if (key == "gamma") g.process.gamma = config_double(section, key, v);
            else if (key == "v") g.process.v = config_double(section, key, v);
            else if (key == "p_one_to_zero") g.transitions.p_one_to_zero = config_double(section, key, v);
            else if (key == "p_zero_to_one") g.transitions.p_zero_to_one = config_double(section, key, v);
            else if (key == "assumed_c") m.continuous_assumption.c = config_double(section, key, v);
            else if (key == "assumed_gamma") m.continuous_assumption.gamma = config_double(section, key, v);
            else if (key == "assumed_v") m.continuous_assumption.v = config_double(section, key, v);
            else if (key == "assumed_p_one_to_zero") m.binary_assumption.p_one_to_zero = config_double(section, key, v);
            else if (key == "assumed_p_zero_to_one") m.binary_assumption.p_zero_to_one = config_double(section, key, v);
            else throw ConfigError("[" + section + "] unknown key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError("[" + section + "] " + key + ": " + e.what());
        }
    }
    if (!selection_feature_set && sec.count("feature")) m.selection_feature = m.analysis_feature;
}

} // namespace detail

/**
 * Parses an INI experiment config on top of a profile. The profile is taken from
 * `[run] profile` unless `profile_override` is given. Covariate sections
 * `[covariate:<name>]` replace the profile's covariate list when present.
 */
inline ExperimentConfig parse_config(std::istream& in, const std::string& profile_override = "") {
    detail::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    std::string profile = profile_override;
    if (profile.empty()) profile = std::string(csv::trim(tree.get<std::string>("run.profile", "desk")));
    auto cfg = profile_config(profile);

    bool covariates_replaced = false;
    std::vector<std::pair<std::string, std::vector<double>>> betas;
    std::vector<double> survival_beta;
    for (const auto& [section, sec] : tree) {
        if (section.rfind("covariate:", 0) == 0) {
            if (!covariates_replaced) {
                cfg.generator.covariates.clear();
                cfg.models.clear();
                covariates_replaced = true;
            }
            const auto name = std::string(csv::trim(section.substr(10)));
            if (name.empty()) throw ConfigError("covariate section without a name");
            std::vector<double> beta;
            detail::apply_covariate(cfg, name, sec, beta);
            betas.emplace_back(name, beta);
            continue;
        }
        for (const auto& [key, node] : sec) {
            const auto v = node.get_value<std::string>();
            if (section == "run") {
                if (key == "profile") continue;
                if (key == "threads") cfg.threads = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "output") cfg.output = std::string(csv::trim(v));
                else throw ConfigError("[run] unknown key '" + key + "'");
            } else if (section == "cohort") {
                if (key == "individuals") cfg.generator.individuals = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "age_min") cfg.generator.age_min_years = detail::config_double(section, key, v);
                else if (key == "age_max") cfg.generator.age_max_years = detail::config_double(section, key, v);
                else if (key == "schedule" || key == "follow_up_end") continue;
                else throw ConfigError("[cohort] unknown key '" + key + "'");
            } else if (section == "survival") {
                if (key == "shape") cfg.generator.truth.shape = detail::config_double(section, key, v);
                else if (key == "scale") cfg.generator.truth.scale = detail::config_double(section, key, v);
                else throw ConfigError("[survival] unknown key '" + key + "'");
            } else if (section == "design") {
                if (key == "strategies") {
                    cfg.strategies.clear();
                    for (const auto& s : detail::config_list(v)) {
                        try {
                            cfg.strategies.push_back(strategy_from_string(s));
                        } catch (const std::exception& e) {
                            throw ConfigError(std::string("[design] strategies: ") + e.what());
                        }
                    }
                } else if (key == "budgets") {
                    cfg.budgets.clear();
                    for (const auto& item : detail::config_list(v)) {
                        BudgetSpec b;
                        for (const auto& part : csv::split(item, '/')) {
                            b.per_wave.push_back(static_cast<int>(detail::config_int(section, key, part)));
                        }
                        cfg.budgets.push_back(b);
                    }
                } else if (key == "replicates") cfg.replicates = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::config_int(section, key, v));
                else throw ConfigError("[design] unknown key '" + key + "'");
            } else if (section == "mcmc") {
                if (key == "iterations") cfg.mcmc.iterations = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "burn_in") cfg.mcmc.burn_in = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "retained") cfg.mcmc.retained = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "target_acceptance") cfg.mcmc.target_acceptance = detail::config_double(section, key, v);
                else throw ConfigError("[mcmc] unknown key '" + key + "'");
            } else if (section == "selection") {
                if (key == "q") cfg.selection.q = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "mc_reps") cfg.selection.mc_reps = static_cast<int>(detail::config_int(section, key, v));
                else if (key == "tie_tolerance") cfg.selection.tie_tolerance = detail::config_double(section, key, v);
                else throw ConfigError("[selection] unknown key '" + key + "'");
            } else {
                throw ConfigError("unknown section [" + section + "]");
            }
        }
    }

    if (auto s = tree.get_optional<std::string>("cohort.schedule")) {
        const auto times = detail::config_doubles("cohort", "schedule", *s);
        const double end = tree.get_optional<std::string>("cohort.follow_up_end")
                               ? detail::config_double("cohort", "follow_up_end", tree.get<std::string>("cohort.follow_up_end"))
                               : cfg.generator.schedule.follow_up_end();
        try {
            cfg.generator.schedule = MeasurementSchedule(times, end);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("[cohort] schedule: ") + e.what());
        }
    } else if (auto e = tree.get_optional<std::string>("cohort.follow_up_end")) {
        try {
            cfg.generator.schedule =
                MeasurementSchedule(cfg.generator.schedule.wave_years(), detail::config_double("cohort", "follow_up_end", *e));
        } catch (const std::exception& ex) {
            throw ConfigError(std::string("[cohort] follow_up_end: ") + ex.what());
        }
    }

    if (covariates_replaced) {
        std::vector<double> beta;
        for (std::size_t h = 0; h < betas.size(); ++h) {
            const auto& [name, b] = betas[h];
            const auto rule = cfg.models[h].analysis_feature;
            cfg.generator.covariates[h].feature = rule;
            const std::size_t want = rule == FeatureRule::quadratic ? 2 : 1;
            if (b.size() != want) {
                throw ConfigError("[covariate:" + name + "] beta needs " + std::to_string(want) + " value(s)");
            }
            beta.insert(beta.end(), b.begin(), b.end());
        }
        cfg.generator.truth.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& profile_override = "") {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in, profile_override);
}

/// The effective configuration as INI; parsing it back yields the same configuration.
inline std::string config_to_ini(const ExperimentConfig& c) {
    std::ostringstream o;
    const auto num = [](double v) { return csv::format_double(v); };
    const auto list = [&](const std::vector<double>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
        return s;
    };
    o << "[run]\nprofile = " << c.profile << "\nthreads = " << c.threads << "\noutput = " << c.output << "\n\n";
    o << "[cohort]\nindividuals = " << c.generator.individuals << "\nage_min = " << num(c.generator.age_min_years)
      << "\nage_max = " << num(c.generator.age_max_years) << "\nschedule = " << list(c.generator.schedule.wave_years())
      << "\nfollow_up_end = " << num(c.generator.schedule.follow_up_end()) << "\n\n";
    o << "[survival]\nshape = " << num(c.generator.truth.shape) << "\nscale = " << num(c.generator.truth.scale) << "\n\n";
    int col = 0;
    for (std::size_t h = 0; h < c.generator.covariates.size(); ++h) {
        const auto& g = c.generator.covariates[h];
        const auto& m = c.models[h];
        const int w = m.analysis_feature == FeatureRule::quadratic ? 2 : 1;
        std::vector<double> beta;
        for (int k = 0; k < w; ++k) beta.push_back(c.generator.truth.beta(col + k));
        col += w;
        o << "[covariate:" << g.name << "]\nkind = " << to_string(g.kind) << "\nbeta = " << list(beta)
          << "\nfeature = " << to_string(m.analysis_feature) << "\nselection_feature = " << to_string(m.selection_feature)
          << "\nfeature_center = " << num(g.feature_center) << "\nbaseline_missing_prob = " << num(g.baseline_missing_prob)
          << "\n";
        if (g.kind == CovariateKind::continuous) {
            o << "baseline_mean = " << num(g.baseline_mean) << "\nbaseline_sd = " << num(g.baseline_sd) << "\nc = "
              << num(g.process.c) << "\ngamma = " << num(g.process.gamma) << "\nv = " << num(g.process.v)
              << "\nassumed_c = " << num(m.continuous_assumption.c) << "\nassumed_gamma = "
              << num(m.continuous_assumption.gamma) << "\nassumed_v = " << num(m.continuous_assumption.v) << "\n";
        } else {
            o << "baseline_p = " << num(g.baseline_p) << "\np_one_to_zero = " << num(g.transitions.p_one_to_zero)
              << "\np_zero_to_one = " << num(g.transitions.p_zero_to_one) << "\nassumed_p_one_to_zero = "
              << num(m.binary_assumption.p_one_to_zero) << "\nassumed_p_zero_to_one = "
              << num(m.binary_assumption.p_zero_to_one) << "\n";
        }
        o << "\n";
    }
    o << "[design]\nstrategies = ";
    for (std::size_t i = 0; i < c.strategies.size(); ++i) o << (i ? "," : "") << to_string(c.strategies[i]);
    o << "\nbudgets = ";
    for (std::size_t i = 0; i < c.budgets.size(); ++i) o << (i ? "," : "") << c.budgets[i].label();
    o << "\nreplicates = " << c.replicates << "\nseed = " << c.seed << "\n\n";
    o << "[mcmc]\niterations = " << c.mcmc.iterations << "\nburn_in = " << c.mcmc.burn_in
      << "\nretained = " << c.mcmc.retained << "\ntarget_acceptance = " << num(c.mcmc.target_acceptance) << "\n\n";
    o << "[selection]\nq = " << c.selection.q << "\nmc_reps = " << c.selection.mc_reps
      << "\ntie_tolerance = " << num(c.selection.tie_tolerance) << "\n";
    return o.str();
}

} // namespace subcohort
