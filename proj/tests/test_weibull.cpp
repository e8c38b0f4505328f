#include "subcohort/model.hpp"
#include "subcohort/simulate.hpp"
#include "subcohort/weibull.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

using namespace subcohort;

namespace {

SurvivalParams paper_params() { return {Vector{{0.1, 0.4}}, 6.3, 27900.0}; }

// Second partial derivatives by central differences, Richardson-extrapolated.
Matrix fd_hessian(const std::function<double(const Vector&)>& f, const Vector& theta, const Vector& step) {
    const int n = static_cast<int>(theta.size());
    const auto at = [&](int i, int k, double hi, double hk) {
        Vector t = theta;
        t(i) += hi;
        t(k) += hk;
        return f(t);
    };
    const auto once = [&](int i, int k, double s) {
        const double hi = step(i) * s;
        const double hk = step(k) * s;
        if (i == k) return (at(i, i, hi, 0) - 2.0 * f(theta) + at(i, i, -hi, 0)) / (hi * hi);
        return (at(i, k, hi, hk) - at(i, k, hi, -hk) - at(i, k, -hi, hk) + at(i, k, -hi, -hk)) / (4.0 * hi * hk);
    };
    Matrix out(n, n);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < n; ++k) out(i, k) = (4.0 * once(i, k, 0.5) - once(i, k, 1.0)) / 3.0;
    }
    return out;
}

double loglik_at(double lo, double hi, int delta, const Vector& x, const Vector& theta) {
    const int H = static_cast<int>(x.size());
    SurvivalParams p{theta.head(H), theta(H), theta(H + 1)};
    return interval_loglik(lo, hi, delta, x, p);
}

} // namespace

TEST(BaselineCumHazard, KnownValues) {
    EXPECT_DOUBLE_EQ(baseline_cum_hazard(27900.0, 6.3, 27900.0), 1.0);
    EXPECT_NEAR(baseline_cum_hazard(13950.0, 1.0, 27900.0), 0.5, 1e-15);
    // (20000/27900)^6.3 evaluated independently to 40 digits
    EXPECT_NEAR(baseline_cum_hazard(20000.0, 6.3, 27900.0), 0.1227955113794233196664986361096453183967, 1e-15);
    EXPECT_EQ(baseline_cum_hazard(0.0, 6.3, 27900.0), 0.0);
    EXPECT_THROW(baseline_cum_hazard(-1.0, 6.3, 27900.0), std::domain_error);
}

TEST(Hazard, ProportionalStructure) {
    const auto p = paper_params();
    const double t = 25000.0;
    SurvivalParams zero{Vector::Zero(2), p.shape, p.scale};
    EXPECT_DOUBLE_EQ(hazard(t, Vector{{1.3, -0.2}}, zero), baseline_hazard(t, p));
    EXPECT_NEAR(hazard(t, Vector{{1.0, 1.0}}, p) / baseline_hazard(t, p), std::exp(0.5), 1e-13);
    SurvivalParams half{p.beta / 2.0, p.shape, p.scale};
    const Vector x{{0.7, -1.1}};
    EXPECT_NEAR(hazard(t, 2.0 * x, half), hazard(t, x, p), 1e-15 * hazard(t, x, p));
}

TEST(IntervalLoglik, LimitsAndSurvivalRatio) {
    const auto p = paper_params();
    const Vector x{{0.3, -0.8}};
    EXPECT_NEAR(interval_loglik(20000.0, 20000.0 + 1e-9, 0, x, p), 0.0, 1e-12);
    SurvivalParams zero{Vector::Zero(2), p.shape, p.scale};
    EXPECT_NEAR(interval_loglik(20000.0, 24000.0, 0, x, zero),
                -(baseline_cum_hazard(24000.0, zero) - baseline_cum_hazard(20000.0, zero)), 1e-14);

    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const double lo = 16000.0 + 12000.0 * uniform01(rng);
        const double hi = lo + 3652.5 * uniform01(rng);
        const Vector xi{{standard_normal(rng), standard_normal(rng)}};
        const double ratio = survival(hi, xi, p) / survival(lo, xi, p);
        EXPECT_NEAR(std::exp(interval_loglik(lo, hi, 0, xi, p)), ratio, 1e-12 * ratio);
    }
    EXPECT_THROW(interval_loglik(0.0, 1.0, 0, x, p), std::domain_error);
    EXPECT_THROW(interval_loglik(2.0, 1.0, 0, x, p), std::domain_error);
}

TEST(TotalLoglik, AdditivityAndNaiveOracle) {
    CohortGenerator g;
    g.individuals = 20;
    CovariateGenerator x;
    x.name = "x";
    CovariateGenerator z = x;
    z.name = "z";
    g.covariates = {x, z};
    g.truth = paper_params();
    const auto c = generate_cohort(g, 99);
    const auto spec = ModelSpec::linear(2);
    const auto& panel = c.panel();
    const auto& offsets = panel.centering_offsets();
    const SurvivalParams p{Vector{{0.25, -0.15}}, 5.8, 28500.0};

    double naive = 0.0;
    for (int j = 0; j < c.size(); ++j) {
        const auto& hist = c.history(j);
        for (int m = 0; m < c.schedule().waves(); ++m) {
            const double lo = c.age_at(j, m);
            if (lo >= hist.exit_age) break;
            const double hi = std::min(c.age_at(j, m + 1), hist.exit_age);
            const Vector xm{{panel.value(j, m, 0) - offsets[0], panel.value(j, m, 1) - offsets[1]}};
            naive += std::log(survival(hi, xm, p) / survival(lo, xm, p));
            if (hist.event && hi == hist.exit_age) naive += std::log(hazard(hi, xm, p));
        }
    }
    const double ll = total_loglik(c, panel.values(), p, spec);
    EXPECT_NEAR(ll, naive, 1e-9 * std::abs(naive));

    const auto& rec = c.intervals().front();
    Vector x0(2);
    features_at(panel, panel.values(), rec.individual, rec.wave, offsets, spec.features, x0);
    const double single = interval_loglik(rec.t_lo, rec.t_hi, rec.delta, x0, p);

    CovariatePanel one(1, 3, panel.names(), panel.kinds());
    CovariatePanel two(2, 3, panel.names(), panel.kinds());
    for (int m = 0; m < 3; ++m) {
        for (int h = 0; h < 2; ++h) {
            for (int k = 0; k < 2; ++k) {
                if (panel.is_missing(rec.individual, m, h)) {
                    if (k == 0) one.set_missing(0, m, h);
                    two.set_missing(k, m, h);
                } else {
                    if (k == 0) one.set(0, m, h, panel.value(rec.individual, m, h));
                    two.set(k, m, h, panel.value(rec.individual, m, h));
                }
            }
        }
    }
    one.set_offsets(offsets);
    two.set_offsets(offsets);
    SurvivalHistory h = c.history(rec.individual);
    h.exit_age = rec.t_hi;
    h.event = rec.delta;
    const Cohort c1(c.schedule(), {"1"}, {h}, one);
    const Cohort c2(c.schedule(), {"1", "2"}, {h, h}, two);
    EXPECT_NEAR(total_loglik(c1, one.values(), p, spec), single, 1e-12 * std::abs(single));
    EXPECT_NEAR(total_loglik(c2, two.values(), p, spec), 2.0 * single, 1e-12 * std::abs(single));
}

TEST(LoglikHessian, BetaBlockClosedForm) {
    const auto p = paper_params();
    const Vector x{{0.6, -1.4}};
    const double lo = 22000.0, hi = 25000.0;
    const Matrix h = loglik_hessian(lo, hi, 1, x, p);
    const double inc = baseline_cum_hazard(hi, p) - baseline_cum_hazard(lo, p);
    const Matrix expected = -x * x.transpose() * std::exp(p.beta.dot(x)) * inc;
    EXPECT_TRUE(h.topLeftCorner(2, 2).isApprox(expected, 1e-13));
    EXPECT_TRUE(h.isApprox(h.transpose(), 0.0));
    const Matrix h0 = loglik_hessian(lo, hi, 0, Vector::Zero(2), p);
    EXPECT_EQ(h0.topLeftCorner(2, 2).norm(), 0.0);
}

TEST(LoglikHessian, MatchesFiniteDifferences) {
    Rng rng(2015);
    for (int trial = 0; trial < 40; ++trial) {
        const double lo = (45.0 + 40.0 * uniform01(rng)) * kDaysPerYear;
        const double hi = lo + (0.1 + 9.9 * uniform01(rng)) * kDaysPerYear;
        const int delta = trial % 2;
        const Vector x{{standard_normal(rng), standard_normal(rng)}};
        Vector theta(4);
        theta << -0.5 + uniform01(rng), -0.5 + 1.5 * uniform01(rng), 4.0 + 4.0 * uniform01(rng),
            24000.0 + 8000.0 * uniform01(rng);
        const Vector step{{1e-2 / std::abs(x(0)), 1e-2 / std::abs(x(1)), 2e-3 * theta(2), 2e-3 * theta(3)}};
        const Matrix fd = fd_hessian([&](const Vector& t) { return loglik_at(lo, hi, delta, x, t); }, theta, step);
        const Matrix an = loglik_hessian(lo, hi, delta, x, {theta.head(2), theta(2), theta(3)});
        for (int i = 0; i < 4; ++i) {
            for (int k = 0; k < 4; ++k) {
                EXPECT_LT(std::abs(fd(i, k) - an(i, k)), 1e-5 * std::abs(an(i, k)))
                    << "trial " << trial << " entry " << i << "," << k;
            }
        }
    }
}

TEST(LoglikGradient, MeanScoreIsZeroUnderTheModel) {
    const auto p = paper_params();
    const Vector x{{0.5, 1.0}};
    const double lo = 60.0 * kDaysPerYear, horizon = 70.0 * kDaysPerYear;
    Rng rng(3);
    const int n = 200000;
    Vector mean = Vector::Zero(4);
    Vector sq = Vector::Zero(4);
    for (int i = 0; i < n; ++i) {
        const auto d = sample_interval_survival(lo, x, p, horizon, rng);
        const Vector g = loglik_gradient(lo, d.age, d.delta, x, p);
        mean += g;
        sq += g.cwiseProduct(g);
    }
    mean /= n;
    const Vector se = ((sq / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
    for (int k = 0; k < 4; ++k) EXPECT_LT(std::abs(mean(k)), 4.0 * se(k)) << k;
}

TEST(SampleIntervalSurvival, EmpiricalCurveMatchesAnalytic) {
    const auto p = paper_params();
    const Vector x{{0.4, -0.3}};
    const double lo = 62.0 * kDaysPerYear, horizon = 72.0 * kDaysPerYear;
    Rng rng(11);
    const int n = 100000;
    std::vector<double> ages;
    int censored = 0;
    for (int i = 0; i < n; ++i) {
        const auto d = sample_interval_survival(lo, x, p, horizon, rng);
        ASSERT_GT(d.age, lo);
        ASSERT_LE(d.age, horizon);
        if (d.delta) {
            ages.push_back(d.age);
        } else {
            ASSERT_EQ(d.age, horizon);
            ++censored;
        }
    }
    std::sort(ages.begin(), ages.end());
    const double s_lo = survival(lo, x, p);
    double worst = 0.0;
    for (std::size_t k = 0; k < ages.size(); ++k) {
        const double analytic = survival(ages[k], x, p) / s_lo;
        const double above = 1.0 - static_cast<double>(k + 1) / n;
        const double below = 1.0 - static_cast<double>(k) / n;
        worst = std::max({worst, std::abs(analytic - above), std::abs(analytic - below)});
    }
    EXPECT_LT(worst, 0.01);
    EXPECT_NEAR(static_cast<double>(censored) / n, survival(horizon, x, p) / s_lo, 0.01);
}

TEST(SampleIntervalSurvival, Limits) {
    const double lo = 60.0 * kDaysPerYear;
    Rng rng(5);
    SurvivalParams huge{Vector{{20.0}}, 6.3, 27900.0};
    for (int i = 0; i < 1000; ++i) {
        const auto d = sample_interval_survival(lo, Vector{{1.0}}, huge, lo + 3652.5, rng);
        EXPECT_EQ(d.delta, 1);
        EXPECT_LT(d.age - lo, 1.0);
    }
    SurvivalParams tiny{Vector{{-30.0}}, 6.3, 27900.0};
    for (int i = 0; i < 1000; ++i) {
        const auto d = sample_interval_survival(lo, Vector{{1.0}}, tiny, lo + 1e-3, rng);
        EXPECT_EQ(d.delta, 0);
        EXPECT_EQ(d.age, lo + 1e-3);
    }
}

TEST(Reparam, RoundTrip) {
    const auto r = to_reparam(6.3, 27900.0);
    const auto [a, b] = from_reparam(r);
    EXPECT_DOUBLE_EQ(a, 6.3);
    EXPECT_NEAR(b, 27900.0, 1e-9);
    EXPECT_NEAR(std::exp(r.alpha + r.r * std::log(20000.0)), baseline_cum_hazard(20000.0, 6.3, 27900.0), 1e-14);
}
