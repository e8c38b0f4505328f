#include "subcohort/selection.hpp"
#include "subcohort/simulate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using namespace subcohort;

namespace {

CohortGenerator paper_generator(int n) {
    CohortGenerator g;
    g.individuals = n;
    CovariateGenerator x;
    x.name = "x";
    CovariateGenerator z = x;
    z.name = "z";
    g.covariates = {x, z};
    g.truth = {Vector{{0.1, 0.4}}, 6.3, 27900.0};
    return g;
}

// Prior draws around the truth, for a cohort whose in-scope cells are all observed.
PosteriorSample synthetic_sample(const Cohort& cohort, int draws, std::uint64_t seed) {
    PosteriorSample s;
    s.covariate_names = cohort.panel().names();
    s.covariate_kinds = cohort.panel().kinds();
    s.feature_names = s.covariate_names;
    s.missing_cells = in_scope_missing_cells(cohort);
    s.meta.data_fingerprint = data_fingerprint(cohort);
    Rng rng(seed);
    for (int l = 0; l < draws; ++l) {
        PosteriorDraw d;
        d.survival = {Vector{{0.1 + 0.05 * standard_normal(rng), 0.4 + 0.05 * standard_normal(rng)}},
                      6.3 + 0.2 * standard_normal(rng), 27900.0 + 300.0 * standard_normal(rng)};
        d.reparam = to_reparam(d.survival.shape, d.survival.scale);
        d.continuous = {{0.0, 0.5 + 0.05 * standard_normal(rng), 0.75}, {0.0, 0.5, 0.75 + 0.05 * uniform01(rng)}};
        d.binary = {{}, {}};
        for (std::size_t k = 0; k < s.missing_cells.size(); ++k) d.imputed.push_back(standard_normal(rng));
        s.draws.push_back(d);
    }
    return s;
}

// The cohort before wave 1, with follow-up cut midway for all but `candidates` of those at risk.
Cohort few_candidates(const Cohort& observed, int candidates) {
    auto histories = observed.histories();
    int kept = 0;
    for (int j = 0; j < observed.size(); ++j) {
        if (observed.at_risk(j, 1) && kept++ < candidates) continue;
        auto& h = histories[static_cast<std::size_t>(j)];
        const double cut = 0.5 * (observed.age_at(j, 0) + observed.age_at(j, 1));
        if (h.exit_age > cut) {
            h.exit_age = cut;
            h.event = 0;
        }
    }
    return Cohort(observed.schedule(), observed.ids(), histories, observed.panel()).truncated(1);
}

} // namespace

TEST(Cohort, SubsetKeepsRowsAndHorizon) {
    const auto observed = generate_cohort(paper_generator(30), 3).truncated(1);
    const auto sub = observed.subset({4, 1});
    ASSERT_EQ(sub.size(), 2);
    EXPECT_EQ(sub.id(0), observed.id(4));
    EXPECT_EQ(sub.horizon_wave(), observed.horizon_wave());
    EXPECT_EQ(sub.panel().value(1, 0, 1), observed.panel().value(1, 0, 1));
    EXPECT_EQ(sub.records(0).size(), observed.records(4).size());
    EXPECT_EQ(sub.panel().centering_offsets(), observed.panel().centering_offsets());
}

TEST(GreedySelect, EveryStepMatchesExhaustiveSearch) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto observed = few_candidates(generate_cohort(paper_generator(500), seed).truncated(1), 9);
        const auto sample = synthetic_sample(observed, 4, seed + 10);
        SelectionSettings ss;
        ss.q = 4;
        ss.mc_reps = 20;
        ss.budget = 100;
        ss.seed = seed;
        const auto spec = ModelSpec::linear(2);
        const auto problem = build_greedy_problem(observed, 1, sample, spec, ss);
        ASSERT_EQ(problem.candidates.size(), 9u);
        ASSERT_GE(problem.candidates.size(), 3u);
        Rng rng(0);
        const auto records = greedy_rounds(problem, static_cast<int>(problem.candidates.size()), 0.0, rng);
        ASSERT_EQ(records.size(), problem.candidates.size());

        std::vector<std::size_t> chosen;
        for (const auto& r : records) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t c = 0; c < problem.candidates.size(); ++c) {
                if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
                double sum = 0.0;
                for (std::size_t l = 0; l < problem.observed.size(); ++l) {
                    Matrix psi = problem.observed[l].matrix();
                    for (auto k : chosen) psi += problem.expected[k][l].matrix();
                    psi += problem.expected[c][l].matrix();
                    const Matrix inv = psi.inverse();
                    sum += inv.topLeftCorner(2, 2).determinant();
                }
                if (sum / problem.observed.size() < best) {
                    best = sum / problem.observed.size();
                    arg = c;
                }
            }
            EXPECT_EQ(r.individual, problem.candidates[arg]) << "round " << r.round;
            EXPECT_NEAR(r.criterion, best, 1e-9 * best);
            chosen.push_back(arg);
        }
    }
}

TEST(GreedySelect, FirstPickMatchesFromScratchEvaluation) {
    const auto observed = generate_cohort(paper_generator(40), 21).truncated(1);
    const auto sample = synthetic_sample(observed, 6, 5);
    SelectionSettings ss;
    ss.q = 3;
    ss.mc_reps = 30;
    ss.budget = 5;
    ss.seed = 99;
    const auto spec = ModelSpec::linear(2);
    const auto result = greedy_select(observed, 1, sample, spec, ss);
    ASSERT_EQ(result.records.size(), 5u);

    const auto draws = selection_draws(sample, ss.q);
    EXPECT_EQ(draws, (std::vector<std::size_t>{0, 2, 4}));
    EXPECT_EQ(result.draws, draws);
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int j : at_risk(observed, 1)) {
        double sum = 0.0;
        for (std::size_t l = 0; l < draws.size(); ++l) {
            const auto real = sample.realization(observed, draws[l]);
            const auto obs = observed_info(observed, real, sample.draws[draws[l]].survival, spec);
            Rng rng(derive_seed(ss.seed, 1, static_cast<std::uint64_t>(j), l));
            const auto e = expected_candidate_info(observed, j, 1, sample, draws[l], spec, ss.mc_reps, rng);
            sum += d_beta_value(obs + e, 2);
        }
        if (sum / 3.0 < best) {
            best = sum / 3.0;
            arg = j;
        }
    }
    EXPECT_EQ(result.records.front().individual, arg);
    EXPECT_NEAR(result.records.front().criterion, best, 1e-12 * best);
    EXPECT_GT(result.initial_criterion, best);
}

TEST(GreedySelect, SkipsDrawsWithIndefiniteObservedInformation) {
    const auto observed = generate_cohort(paper_generator(300), 12).truncated(1);
    auto sample = synthetic_sample(observed, 6, 2);
    // a shape far below the truth makes the observed information indefinite
    sample.draws[2].survival.shape = 4.0;
    sample.draws[2].survival.scale = 26000.0;
    const auto spec = ModelSpec::linear(2);
    const auto bad = observed_info(observed, sample.realization(observed, 2), sample.draws[2].survival, spec);
    ASSERT_LT(Eigen::SelfAdjointEigenSolver<Matrix>(bad.matrix()).eigenvalues()(0), 0.0);
    SelectionSettings ss;
    ss.q = 3;
    ss.mc_reps = 5;
    ss.budget = 2;
    const auto problem = build_greedy_problem(observed, 1, sample, spec, ss);
    EXPECT_EQ(problem.draws, (std::vector<std::size_t>{0, 3, 4}));
    for (auto& d : sample.draws) d.survival = sample.draws[2].survival;
    EXPECT_THROW(build_greedy_problem(observed, 1, sample, spec, ss), SingularInformationError);
}

TEST(GreedySelect, LargeBudgetSelectsEveryoneInCriterionOrder) {
    const auto observed = generate_cohort(paper_generator(25), 8).truncated(1);
    const auto sample = synthetic_sample(observed, 3, 1);
    SelectionSettings ss;
    ss.q = 3;
    ss.mc_reps = 10;
    ss.budget = 1000;
    const auto result = greedy_select(observed, 1, sample, ModelSpec::linear(2), ss);
    auto ids = result.ordered();
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(ids, at_risk(observed, 1));
    const auto trace = result.criterion_trace();
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1] * (1 + 1e-12));
    for (const auto& r : result.records) {
        EXPECT_EQ(r.age, observed.age_at(r.individual, 1));
        EXPECT_EQ(r.previous[0], observed.panel().value(r.individual, 0, 0));
    }
}

TEST(GreedySelect, TiesAreCountedAndBrokenAtRandom) {
    GreedyProblem p;
    p.H = 1;
    p.candidates = {4, 7, 9};
    p.observed = {InformationMatrix(Matrix::Identity(3, 3))};
    const InformationMatrix strong(Matrix(Vector{{3.0, 1.0, 1.0}}.asDiagonal()));
    const InformationMatrix weak(Matrix(Vector{{1.0, 1.0, 1.0}}.asDiagonal()));
    p.expected = {{weak}, {strong}, {strong}};
    std::set<int> first;
    for (std::uint64_t s = 0; s < 40; ++s) {
        Rng rng(s);
        const auto r = greedy_rounds(p, 1, 1e-12, rng);
        ASSERT_EQ(r.size(), 1u);
        EXPECT_EQ(r[0].tied, 2);
        first.insert(r[0].individual);
    }
    EXPECT_EQ(first, (std::set<int>{7, 9}));
}

TEST(GreedySelect, RejectsPosteriorFromOtherData) {
    const auto complete = generate_cohort(paper_generator(30), 4);
    const auto sample = synthetic_sample(complete.truncated(2), 3, 1);
    SelectionSettings ss;
    ss.q = 3;
    ss.mc_reps = 5;
    ss.budget = 2;
    EXPECT_THROW(greedy_select(complete.truncated(1), 1, sample, ModelSpec::linear(2), ss), std::invalid_argument);
    ss.q = 10;
    EXPECT_THROW(greedy_select(complete.truncated(2), 2, sample, ModelSpec::linear(2), ss), std::invalid_argument);
}

TEST(SrsSelect, UniformInclusionAndReproducible) {
    const auto cohort = generate_cohort(paper_generator(10), 1).truncated(1);
    std::vector<int> pool = at_risk(cohort, 1);
    // use only individuals at risk; pad expectations accordingly
    const int reps = 10000, budget = 3;
    std::vector<int> counts(static_cast<std::size_t>(cohort.size()), 0);
    Rng rng(2718);
    for (int r = 0; r < reps; ++r) {
        for (const auto& rec : srs_select(cohort, 1, budget, rng).records) ++counts[static_cast<std::size_t>(rec.individual)];
    }
    const double expected = static_cast<double>(reps) * budget / static_cast<double>(pool.size());
    double chi2 = 0.0;
    for (int j : pool) chi2 += std::pow(counts[static_cast<std::size_t>(j)] - expected, 2) / expected;
    // 0.999 quantiles of chi-square with 1..9 degrees of freedom
    const double critical[] = {0, 10.83, 13.82, 16.27, 18.47, 20.52, 22.46, 24.32, 26.12, 27.88};
    ASSERT_GE(pool.size(), 4u);
    EXPECT_LT(chi2, critical[pool.size() - 1]);

    Rng a(5), b(5);
    EXPECT_EQ(srs_select(cohort, 1, 2, a).ordered(), srs_select(cohort, 1, 2, b).ordered());
    Rng c(6);
    auto all = srs_select(cohort, 1, 1000, c).ordered();
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, pool);
}

TEST(FullSelect, EqualsAtRiskAndIsIdempotent) {
    const auto cohort = generate_cohort(paper_generator(50), 2).truncated(2);
    EXPECT_EQ(full_select(cohort, 2).ordered(), at_risk(cohort, 2));
    EXPECT_EQ(full_select(cohort, 2).ordered(), full_select(cohort, 2).ordered());

    const MeasurementSchedule sched({0.0, 10.0, 20.0}, 30.0);
    CovariatePanel panel(1, 3, {"x"}, {CovariateKind::continuous});
    panel.set(0, 0, 0, 0.0);
    const Cohort dead(sched, {"1"}, {{50.0 * kDaysPerYear, 52.0 * kDaysPerYear, 1}}, panel);
    EXPECT_TRUE(full_select(dead.truncated(1), 1).records.empty());
    EXPECT_THROW(full_select(cohort, 3), std::out_of_range);
}

TEST(RunWave, StrategiesAndProvenance) {
    const auto complete = generate_cohort(paper_generator(120), 77);
    const auto spec = ModelSpec::linear(2);
    Design design = Design::baseline(complete);

    SelectionSettings ss;
    ss.budget = 15;
    ss.seed = 3;
    ss.q = 4;
    ss.mc_reps = 10;
    const auto full = run_wave(complete, design, 1, Strategy::full, ss, spec, nullptr);
    for (int j = 0; j < complete.size(); ++j) EXPECT_EQ(full.design(j, 1), complete.at_risk(j, 1));
    EXPECT_EQ(full.design.column_budgets()[1], full.design.column_sum(1));

    McmcSettings mc;
    mc.iterations = 900;
    mc.burn_in = 300;
    mc.retained = 60;
    mc.seed = 1;
    const auto post1 = run_chain(apply_design(complete, design).truncated(1), spec, PriorSpec{}, mc);
    EXPECT_THROW(run_wave(complete, design, 1, Strategy::dbeta, ss, spec, nullptr), std::invalid_argument);
    const auto w1 = run_wave(complete, design, 1, Strategy::dbeta, ss, spec, &post1);
    EXPECT_EQ(w1.design.column_sum(1), 15);
    EXPECT_EQ(w1.audit.posterior_fingerprint, w1.audit.data_fingerprint);
    for (const auto& r : w1.audit.selection.records) EXPECT_TRUE(complete.at_risk(r.individual, 1));

    // the wave-2 posterior must condition on the wave-1 design
    EXPECT_THROW(run_wave(complete, w1.design, 2, Strategy::dbeta, ss, spec, &post1), std::invalid_argument);
    const auto observed2 = apply_design(complete, w1.design).truncated(2);
    const auto post2 = run_chain(observed2, spec, PriorSpec{}, mc);
    const auto w2 = run_wave(complete, w1.design, 2, Strategy::dbeta, ss, spec, &post2);
    EXPECT_EQ(w2.audit.posterior_fingerprint, data_fingerprint(observed2));
    EXPECT_EQ(w2.audit.data_fingerprint, data_fingerprint(observed2));
    for (int j = 0; j < complete.size(); ++j) {
        if (!complete.at_risk(j, 2)) EXPECT_FALSE(w2.design(j, 2));
        EXPECT_EQ(w2.design(j, 1), w1.design(j, 1));
    }
    EXPECT_NO_THROW(w2.design.validate(complete));

    const auto srs = run_wave(complete, design, 1, Strategy::srs, ss, spec, nullptr);
    EXPECT_EQ(srs.design.column_sum(1), 15);
    const auto srs_again = run_wave(complete, design, 1, Strategy::srs, ss, spec, nullptr);
    EXPECT_EQ(srs.audit.selection.ordered(), srs_again.audit.selection.ordered());
}
