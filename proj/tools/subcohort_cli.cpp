// Command-line front end: generate, estimate, select, experiment, report.

#include "subcohort/subcohort.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace subcohort;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct CommonOptions {
    std::string config;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
    ExperimentConfig cfg = o.config.empty() ? profile_config(o.profile.empty() ? "desk" : o.profile)
                                            : load_config(o.config, o.profile);
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "INI experiment configuration");
    cmd->add_option("--profile", o.profile, "built-in profile (desk or paper)")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", o.seed, "master seed");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    return out;
}

Cohort observed_cohort(const ExperimentConfig& cfg, const std::string& cohort_path, const std::string& design_path,
                       int wave, Design* design_out = nullptr) {
    Cohort cohort = load_cohort(cohort_path, cfg.schema());
    Design design = design_path.empty() ? Design::full(cohort) : load_design(design_path, cohort);
    if (!design_path.empty()) design.validate(cohort);
    if (design_out) *design_out = design;
    Cohort observed = design_path.empty() ? cohort : apply_design(cohort, design);
    return wave > 0 ? observed.truncated(wave) : observed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential Bayesian D_beta-optimal subcohort selection for survival follow-up studies"};
    app.require_subcommand(1);

    CommonOptions gen_opts;
    auto* gen = app.add_subcommand("generate", "simulate a cohort and write it as CSV");
    add_common(gen, gen_opts);
    gen->add_option("--out", gen_opts.out, "cohort CSV to write")->required();

    CommonOptions est_opts;
    std::string est_cohort, est_design, est_draws;
    int est_wave = 0;
    bool est_selection_model = false;
    auto* est = app.add_subcommand("estimate", "fit the joint model to a cohort (and design) and summarize the posterior");
    add_common(est, est_opts);
    est->add_option("--cohort", est_cohort, "cohort CSV")->required();
    est->add_option("--design", est_design, "design CSV; unmeasured cells become missing");
    est->add_option("--wave", est_wave, "use only data available before this re-measurement wave");
    est->add_option("--draws", est_draws, "also write the retained draws (with imputed cells) to this CSV");
    est->add_flag("--selection-model", est_selection_model, "fit the selection model instead of the analysis model");
    est->add_option("--out", est_opts.out, "posterior summary CSV")->required();

    CommonOptions sel_opts;
    std::string sel_cohort, sel_design, sel_posterior, sel_strategy = "dbeta", sel_order;
    int sel_wave = 1;
    int sel_budget = 0;
    auto* sel = app.add_subcommand("select", "choose the subcohort for one re-measurement wave");
    add_common(sel, sel_opts);
    sel->add_option("--cohort", sel_cohort, "cohort CSV")->required();
    sel->add_option("--design", sel_design, "design so far (default: baseline only)");
    sel->add_option("--posterior", sel_posterior, "draws CSV from `estimate --wave <wave> --draws`");
    sel->add_option("--wave", sel_wave, "re-measurement wave to select for")->required();
    sel->add_option("--strategy", sel_strategy, "dbeta, srs or full")->check(CLI::IsMember({"dbeta", "srs", "full"}));
    sel->add_option("--budget", sel_budget, "number of individuals to measure");
    sel->add_option("--order", sel_order, "write the selection order CSV here");
    sel->add_option("--out", sel_opts.out, "updated design CSV")->required();

    CommonOptions exp_opts;
    std::optional<int> exp_replicates, exp_threads;
    std::vector<std::string> exp_strategies;
    std::vector<int> exp_budgets;
    auto* exp = app.add_subcommand("experiment", "run a replicated design-comparison experiment");
    add_common(exp, exp_opts);
    exp->add_option("--strategy", exp_strategies, "restrict to these strategies")->check(CLI::IsMember({"dbeta", "srs", "full"}));
    exp->add_option("--budget", exp_budgets, "override budgets (same at every wave)");
    exp->add_option("--replicates", exp_replicates, "override the replicate count");
    exp->add_option("--threads", exp_threads, "parallel workers");
    exp->add_option("--out", exp_opts.out, "artifact directory (default from config)");

    std::string rep_in, rep_out;
    auto* rep = app.add_subcommand("report", "rebuild result tables from experiment artifacts");
    rep->add_option("artifacts", rep_in, "artifact directory written by `experiment`")->required();
    rep->add_option("--out", rep_out, "directory for the tables (default: the artifact directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*gen) {
            const auto cfg = resolve_config(gen_opts);
            const auto cohort = generate_cohort(cfg.generator, derive_seed(cfg.seed, 0x67656eULL));
            auto out = open_out(gen_opts.out);
            save_cohort(out, cohort);
            std::cout << "wrote " << cohort.size() << " individuals to " << gen_opts.out << "\n";
        } else if (*est) {
            const auto cfg = resolve_config(est_opts);
            const auto observed = observed_cohort(cfg, est_cohort, est_design, est_wave);
            auto mc = cfg.mcmc;
            mc.seed = derive_seed(cfg.seed, 0x657374ULL);
            const auto post = run_chain(observed, est_selection_model ? cfg.selection_spec() : cfg.analysis_spec(),
                                        cfg.priors, mc);
            auto out = open_out(est_opts.out);
            write_summary(out, post);
            if (!est_draws.empty()) {
                auto d = open_out(est_draws);
                write_draws(d, observed, post);
            }
            for (const auto& [block, rate] : post.meta.acceptance) std::cout << "acceptance " << block << " " << rate << "\n";
        } else if (*sel) {
            const auto cfg = resolve_config(sel_opts);
            const auto strategy = strategy_from_string(sel_strategy);
            Cohort complete = load_cohort(sel_cohort, cfg.schema());
            Design design = sel_design.empty() ? Design::baseline(complete) : load_design(sel_design, complete);
            if (sel_wave < 1 || sel_wave >= complete.schedule().waves()) throw ConfigError("--wave must be 1..M");
            for (int m = sel_wave; m < design.waves(); ++m) {
                for (int j = 0; j < complete.size(); ++j) design.set(j, m, false);
            }
            SelectionSettings ss = cfg.selection;
            ss.budget = sel_budget > 0 ? sel_budget : (cfg.budgets.empty() ? 1 : cfg.budgets.front().at(sel_wave));
            ss.seed = derive_seed(cfg.seed, 0x73656cULL, static_cast<std::uint64_t>(sel_wave));
            std::optional<PosteriorSample> post;
            if (strategy == Strategy::dbeta) {
                if (sel_posterior.empty()) throw ConfigError("--strategy dbeta needs --posterior");
                const Cohort observed = apply_design(complete, design).truncated(sel_wave);
                std::ifstream in(sel_posterior);
                if (!in) throw std::runtime_error("cannot open '" + sel_posterior + "'");
                post = read_draws(in, observed);
            }
            const auto outcome = run_wave(complete, design, sel_wave, strategy, ss, cfg.selection_spec(),
                                          post ? &*post : nullptr);
            auto out = open_out(sel_opts.out);
            save_design(out, complete, outcome.design);
            if (!sel_order.empty()) {
                std::vector<SelectionRow> rows;
                for (const auto& r : outcome.audit.selection.records) {
                    rows.push_back({0, to_string(strategy), std::to_string(ss.budget), sel_wave, complete.id(r.individual), r});
                }
                auto o = open_out(sel_order);
                write_selections(o, rows, complete.panel().names());
            }
            std::cout << "selected " << outcome.audit.selection.records.size() << " individuals at wave " << sel_wave << "\n";
        } else if (*exp) {
            auto cfg = resolve_config(exp_opts);
            if (!exp_strategies.empty()) {
                cfg.strategies.clear();
                for (const auto& s : exp_strategies) cfg.strategies.push_back(strategy_from_string(s));
            }
            if (!exp_budgets.empty()) {
                cfg.budgets.clear();
                for (int b : exp_budgets) cfg.budgets.push_back({{b}});
            }
            if (exp_replicates) cfg.replicates = *exp_replicates;
            if (exp_threads) cfg.threads = *exp_threads;
            if (!exp_opts.out.empty()) cfg.output = exp_opts.out;
            cfg.validate();
            const auto art = run_experiment(cfg, [&](int r) { std::cerr << "replicate " << r << " done\n"; });
            std::vector<std::string> names;
            for (const auto& c : cfg.generator.covariates) names.push_back(c.name);
            write_artifacts(cfg.output, art, names);
            std::cout << result_text(art.table);
            if (!art.failures.empty()) {
                std::cerr << art.failures.size() << " replicate arm(s) failed; see failures.csv\n";
                return kRuntimeError;
            }
        } else if (*rep) {
            const auto table = table_from_artifacts(rep_in);
            write_report(rep_out.empty() ? rep_in : rep_out, table);
            std::cout << result_text(table);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return 0;
}
