#include "subcohort/mcmc.hpp"
#include "subcohort/posterior_io.hpp"
#include "subcohort/simulate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

using namespace subcohort;

namespace {

const MeasurementSchedule kSchedule({0.0, 10.0, 20.0}, 30.0);

double mc_error(const std::vector<double>& chain) {
    const auto s = posterior_summary(chain);
    return s.sd / std::sqrt(effective_sample_size(chain));
}

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

// Two individuals, one binary covariate, chosen ages; cells given as strings ("" = missing).
Cohort tiny_binary_cohort(const std::vector<std::vector<double>>& cells, const std::vector<SurvivalHistory>& hist) {
    CovariatePanel panel(static_cast<int>(cells.size()), 3, {"s"}, {CovariateKind::binary});
    for (std::size_t j = 0; j < cells.size(); ++j) {
        for (int m = 0; m < 3; ++m) {
            if (!std::isnan(cells[j][static_cast<std::size_t>(m)])) panel.set(static_cast<int>(j), m, 0, cells[j][static_cast<std::size_t>(m)]);
        }
    }
    panel.recenter();
    std::vector<std::string> ids;
    for (std::size_t j = 0; j < cells.size(); ++j) ids.push_back(std::to_string(j + 1));
    return Cohort(kSchedule, ids, hist, panel);
}

double years(double y) { return y * kDaysPerYear; }

} // namespace

TEST(PosteriorSummary, SimpleChains) {
    const auto s = posterior_summary(std::vector<double>{1, 2, 3});
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    EXPECT_DOUBLE_EQ(s.sd, 1.0);
    const auto c = posterior_summary(std::vector<double>(50, 4.5));
    EXPECT_EQ(c.sd, 0.0);
    EXPECT_EQ(c.q025, 4.5);
    EXPECT_THROW(posterior_summary(std::vector<double>{}), std::invalid_argument);
}

TEST(PosteriorSummary, QuantilesMatchSortedArray) {
    Rng rng(4);
    std::vector<double> v(1001);
    for (auto& x : v) x = standard_normal(rng);
    const auto s = posterior_summary(v);
    std::sort(v.begin(), v.end());
    // with 1001 points, type-7 quantiles at 0.025/0.5/0.975 land exactly on order statistics
    EXPECT_EQ(s.q025, v[25]);
    EXPECT_EQ(s.q500, v[500]);
    EXPECT_EQ(s.q975, v[975]);
    EXPECT_DOUBLE_EQ(sorted_quantile({0.0, 10.0}, 0.25), 2.5);
}

TEST(EffectiveSampleSize, WhiteNoiseAndAr1) {
    Rng rng(12);
    const int n = 20000;
    std::vector<double> w(n);
    for (auto& x : w) x = standard_normal(rng);
    EXPECT_NEAR(effective_sample_size(w), n, 0.2 * n);

    const double rho = 0.9;
    const int m = 200000;
    std::vector<double> a(m);
    a[0] = standard_normal(rng);
    for (int i = 1; i < m; ++i) a[static_cast<std::size_t>(i)] = rho * a[static_cast<std::size_t>(i - 1)] + std::sqrt(1 - rho * rho) * standard_normal(rng);
    const double expected = m * (1 - rho) / (1 + rho);
    EXPECT_NEAR(effective_sample_size(a), expected, 0.3 * expected);

    EXPECT_EQ(effective_sample_size(std::vector<double>(100, 1.0)), 1.0);
    EXPECT_THROW(effective_sample_size(std::vector<double>(5, 1.0)), std::invalid_argument);
}

TEST(RunChain, EmptyCohortRecoversPriors) {
    const Cohort empty(kSchedule, {}, {}, CovariatePanel(0, 3, {"x", "s"}, {CovariateKind::continuous, CovariateKind::binary}));
    PriorSpec priors;
    priors.beta_variance = 4.0;
    priors.r = {3.0, 2.0};
    priors.alpha_variance = 1.0;
    priors.c_variance = 1.0;
    priors.gamma_variance = 0.25;
    priors.v_precision = {3.0, 2.0};
    priors.d_variance = 1.0;
    McmcSettings mc;
    mc.iterations = 60000;
    mc.burn_in = 10000;
    mc.retained = 10000;
    mc.seed = 77;
    mc.assume_without_transitions = false;
    const auto post = run_chain(empty, ModelSpec::linear(2), priors, mc);
    ASSERT_EQ(post.size(), 10000u);
    EXPECT_TRUE(post.missing_cells.empty());

    struct Expectation {
        std::vector<double> trace;
        double mean;
        double variance;
    };
    std::vector<double> precision;
    for (double v : post.trace("v_x")) precision.push_back(1.0 / v);
    const std::vector<Expectation> checks{
        {post.trace("beta_x"), 0.0, 4.0}, {post.trace("beta_s"), 0.0, 4.0}, {post.trace("r"), 1.5, 0.75},
        {post.trace("alpha"), 0.0, 1.0},  {post.trace("c_x"), 0.0, 1.0},   {post.trace("gamma_x"), 0.0, 0.25},
        {precision, 1.5, 0.75},           {post.trace("d0_s"), 0.0, 1.0},  {post.trace("d1_s"), 0.0, 1.0}};
    for (std::size_t k = 0; k < checks.size(); ++k) {
        const auto& c = checks[k];
        const auto s = posterior_summary(c.trace);
        const double ess = effective_sample_size(c.trace);
        EXPECT_LT(std::abs(s.mean - c.mean), 4.0 * std::sqrt(c.variance / ess)) << "check " << k;
        // loose check on the spread: variance within 4 standard errors of a normal-theory estimate
        EXPECT_NEAR(s.sd * s.sd, c.variance, 4.0 * c.variance * std::sqrt(2.0 / ess) + 0.05 * c.variance) << "check " << k;
    }
}

TEST(RunChain, ProcessCoefficientsMatchConjugatePosterior) {
    auto g = paper_generator(40);
    const auto cohort = generate_cohort(g, 31);
    PriorSpec priors;
    priors.c_variance = 2.0;
    priors.gamma_variance = 0.5;
    McmcSettings mc;
    mc.iterations = 42000;
    mc.burn_in = 2000;
    mc.retained = 10000;
    mc.seed = 5;
    mc.update_survival = false;
    mc.update_process_variance = false;
    mc.initial_survival = g.truth;
    mc.initial_continuous = {{0.0, 0.0, 0.75}, {0.0, 0.0, 0.75}};
    const auto post = run_chain(cohort, ModelSpec::linear(2), priors, mc);

    // independent closed form: Bayesian linear regression with known variance
    const auto& panel = cohort.panel();
    const double off = panel.centering_offsets()[0];
    Matrix xtx = Matrix::Zero(2, 2);
    Vector xty = Vector::Zero(2);
    for (int j = 0; j < cohort.size(); ++j) {
        for (int m = 1; m < static_cast<int>(cohort.records(j).size()); ++m) {
            const Vector row{{1.0, panel.value(j, m - 1, 0) - off}};
            xtx += row * row.transpose();
            xty += row * (panel.value(j, m, 0) - off);
        }
    }
    Matrix prec = xtx / 0.75;
    prec(0, 0) += 1.0 / priors.c_variance;
    prec(1, 1) += 1.0 / priors.gamma_variance;
    const Matrix cov = prec.inverse();
    const Vector mean = cov * (xty / 0.75);

    const std::vector<std::string> names{"c_x", "gamma_x"};
    for (int k = 0; k < 2; ++k) {
        const auto trace = post.trace(names[static_cast<std::size_t>(k)]);
        const auto s = posterior_summary(trace);
        const double ess = effective_sample_size(trace);
        EXPECT_LT(std::abs(s.mean - mean(k)), 3.0 * std::sqrt(cov(k, k) / ess)) << names[static_cast<std::size_t>(k)];
        EXPECT_LT(std::abs(s.sd * s.sd - cov(k, k)), 3.0 * cov(k, k) * std::sqrt(2.0 / ess)) << names[static_cast<std::size_t>(k)];
    }
    for (double v : post.trace("v_x")) ASSERT_EQ(v, 0.75);
    for (double b : post.trace("beta_z")) ASSERT_EQ(b, 0.4);
}

TEST(UpdateMissingCell, BinaryCellMatchesEnumeration) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::vector<SurvivalHistory> hist{{years(60), years(85), 1}, {years(55), years(80), 0}};
    const auto cohort = tiny_binary_cohort({{1.0, nan, 0.0}, {0.0, 1.0, 1.0}}, hist);
    const SurvivalParams theta{Vector{{1.2}}, 6.3, 27900.0};
    const BinaryProcessParams proc{-1.0, 2.5};

    McmcSettings mc;
    mc.update_survival = false;
    mc.update_process = false;
    mc.initial_survival = theta;
    mc.initial_binary = {proc};
    mc.seed = 2;
    AugmentedSampler sampler(cohort, ModelSpec::linear(1), PriorSpec{}, mc);
    ASSERT_EQ(sampler.missing_cells().size(), 1u);
    const auto idx = cohort.panel().index(0, 1, 0);

    // enumerate the two-point conditional
    double logw[2];
    for (int v = 0; v < 2; ++v) {
        auto real = cohort.panel().values();
        real[idx] = v;
        logw[v] = total_loglik(cohort, real, theta, ModelSpec::linear(1)) + logmass_binary(v, 1.0, proc) +
                  logmass_binary(0.0, v, proc);
    }
    const double p1 = 1.0 / (1.0 + std::exp(logw[0] - logw[1]));

    const int n = 60000;
    int ones = 0;
    for (int i = 0; i < n; ++i) {
        sampler.sweep(false);
        ones += sampler.realization()[idx] == 1.0;
    }
    EXPECT_NEAR(static_cast<double>(ones) / n, p1, 0.01);
}

TEST(UpdateMissingCell, WithoutExposureOrSuccessorIsADirectDraw) {
    auto g = paper_generator(60);
    auto cohort = generate_cohort(g, 8);
    Design d = Design::full(cohort);
    for (int j : at_risk(cohort, 2)) d.set(j, 2, false);
    const auto observed = apply_design(cohort, d);

    McmcSettings mc;
    mc.update_survival = false;
    mc.update_process = false;
    mc.initial_survival = SurvivalParams{Vector::Zero(2), 6.3, 27900.0};
    mc.initial_continuous = {{0.1, 0.5, 0.75}, {0.1, 0.5, 0.75}};
    mc.seed = 9;
    AugmentedSampler sampler(observed, ModelSpec::linear(2), PriorSpec{}, mc);
    ASSERT_FALSE(sampler.missing_cells().empty());
    for (int rep = 0; rep < 50; ++rep) {
        for (std::size_t k = 0; k < sampler.missing_cells().size(); ++k) EXPECT_TRUE(sampler.update_missing_cell(k));
    }

    // the imputed mean is the transition mean c + gamma * previous (centered scale)
    const auto& cell = sampler.missing_cells().front();
    const auto& panel = observed.panel();
    const double off = panel.centering_offsets()[static_cast<std::size_t>(cell.covariate)];
    const double prev = panel.value(cell.individual, cell.wave - 1, cell.covariate) - off;
    const auto idx = panel.index(cell.individual, cell.wave, cell.covariate);
    const int n = 40000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sampler.update_missing_cell(0);
        sum += sampler.realization()[idx] - off;
    }
    EXPECT_NEAR(sum / n, 0.1 + 0.5 * prev, 4.0 * std::sqrt(0.75 / n));
}

TEST(RunChain, FullCohortRecoversCoefficientsAndIsReproducible) {
    const auto cohort = generate_cohort(paper_generator(500), 2024);
    McmcSettings mc;
    mc.iterations = 6000;
    mc.burn_in = 2000;
    mc.retained = 500;
    mc.seed = 17;
    const auto post = run_chain(cohort, ModelSpec::linear(2), PriorSpec{}, mc);
    const auto bz = posterior_summary(post, "beta_z");
    const auto bx = posterior_summary(post, "beta_x");
    EXPECT_LT(std::abs(bz.mean - 0.4), 4.0 * bz.sd);
    EXPECT_LT(std::abs(bx.mean - 0.1), 4.0 * bx.sd);
    for (const auto& [block, rate] : post.meta.acceptance) {
        EXPECT_GT(rate, 0.1) << block;
        EXPECT_LT(rate, 0.6) << block;
    }
    EXPECT_GT(effective_sample_size(post.trace("beta_z")), 100.0);
    EXPECT_EQ(post.meta.data_fingerprint, data_fingerprint(cohort));

    const auto again = run_chain(cohort, ModelSpec::linear(2), PriorSpec{}, mc);
    ASSERT_EQ(again.size(), post.size());
    for (std::size_t i = 0; i < post.size(); ++i) {
        ASSERT_EQ(again.parameter_values(again.draws[i]), post.parameter_values(post.draws[i]));
    }
}

TEST(RunChain, MissingCellsAreImputedAndDrawsRoundTrip) {
    const auto cohort = generate_cohort(paper_generator(200), 404);
    Design d = Design::full(cohort);
    const auto risk = at_risk(cohort, 1);
    for (std::size_t k = 0; k < risk.size(); k += 2) d.set(risk[k], 1, false);
    const auto observed = apply_design(cohort, d).truncated(2);
    McmcSettings mc;
    mc.iterations = 1500;
    mc.burn_in = 500;
    mc.retained = 100;
    mc.seed = 3;
    const auto post = run_chain(observed, ModelSpec::linear(2), PriorSpec{}, mc);
    ASSERT_FALSE(post.missing_cells.empty());
    for (const auto& c : post.missing_cells) EXPECT_EQ(c.wave, 1);
    for (std::size_t i = 0; i < post.size(); ++i) {
        const auto real = post.realization(observed, i);
        for (const auto& rec : observed.intervals()) {
            for (int h = 0; h < 2; ++h) ASSERT_FALSE(std::isnan(real[observed.panel().index(rec.individual, rec.wave, h)]));
        }
    }

    std::stringstream buf;
    write_draws(buf, observed, post);
    const auto back = read_draws(buf, observed);
    ASSERT_EQ(back.size(), post.size());
    EXPECT_EQ(back.missing_cells, post.missing_cells);
    EXPECT_EQ(back.parameter_names(), post.parameter_names());
    for (std::size_t i = 0; i < post.size(); ++i) {
        EXPECT_EQ(back.draws[i].imputed, post.draws[i].imputed);
        EXPECT_EQ(back.draws[i].survival.beta, post.draws[i].survival.beta);
        EXPECT_EQ(back.draws[i].continuous[1].gamma, post.draws[i].continuous[1].gamma);
    }
}

TEST(RunChain, CovariateWithoutTransitionsUsesAssumption) {
    const auto cohort = generate_cohort(paper_generator(150), 6).truncated(1);
    auto spec = ModelSpec::linear(2);
    spec.continuous_assumption = {{0.0, 0.5, 0.75}, {0.0, 0.5, 0.75}};
    McmcSettings mc;
    mc.iterations = 600;
    mc.burn_in = 200;
    mc.retained = 100;
    const auto post = run_chain(cohort, spec, PriorSpec{}, mc);
    for (double g : post.trace("gamma_x")) ASSERT_EQ(g, 0.5);
    EXPECT_EQ(post.meta.acceptance.count("process_x"), 0u);

    const auto bin = tiny_binary_cohort({{1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}},
                                        {{years(60), years(65), 0}, {years(55), years(62), 1}});
    AugmentedSampler s(bin, ModelSpec::linear(1), PriorSpec{}, mc);
    EXPECT_FALSE(s.process_sampled(0));
    EXPECT_NEAR(binary_success_probability(0.0, s.binary()[0]), 0.1, 1e-12);
    EXPECT_NEAR(binary_success_probability(1.0, s.binary()[0]), 0.6, 1e-12);
}

TEST(McmcSettings, Validation) {
    McmcSettings mc;
    mc.iterations = 100;
    mc.burn_in = 200;
    EXPECT_THROW(mc.validate(), std::invalid_argument);
    mc.burn_in = 50;
    mc.retained = 100;
    EXPECT_THROW(mc.validate(), std::invalid_argument);
    mc.retained = 10;
    EXPECT_EQ(mc.thinning(), 5);
    EXPECT_NO_THROW(mc.validate());
}
