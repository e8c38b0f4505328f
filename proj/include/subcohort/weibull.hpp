#pragma once

#include "subcohort/common.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace subcohort {

/**
 * Survival-model parameters theta* = (beta_1..beta_H, a, b): log hazard ratios,
 * Weibull shape a and scale b (days). Information matrices use this order.
 */
struct SurvivalParams {
    Vector beta;
    double shape = 1.0;
    double scale = 1.0;

    int covariates() const noexcept { return static_cast<int>(beta.size()); }
    int dimension() const noexcept { return covariates() + 2; }

    void validate() const {
        if (!(shape > 0.0) || !std::isfinite(shape)) throw std::invalid_argument("Weibull shape must be positive");
        if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("Weibull scale must be positive");
        if (!beta.allFinite()) throw std::invalid_argument("regression coefficients must be finite");
    }
};

/// Sampler coordinates: r = a, alpha = -a log b, so that Lambda_0(t) = exp(alpha + r log t).
struct ReparamWeibull {
    double r = 1.0;
    double alpha = 0.0;
};

inline ReparamWeibull to_reparam(double shape, double scale) { return {shape, -shape * std::log(scale)}; }

inline std::pair<double, double> from_reparam(const ReparamWeibull& p) {
    if (!(p.r > 0.0)) throw std::invalid_argument("reparameterised shape r must be positive");
    return {p.r, std::exp(-p.alpha / p.r)};
}

/// Lambda_0(t) = (t/b)^a, evaluated as exp(a (log t - log b)).
inline double baseline_cum_hazard(double t, double shape, double scale) {
    if (t < 0.0) throw std::domain_error("baseline_cum_hazard: negative time");
    if (t == 0.0) return 0.0;
    return std::exp(shape * (std::log(t) - std::log(scale)));
}

inline double baseline_cum_hazard(double t, const SurvivalParams& p) { return baseline_cum_hazard(t, p.shape, p.scale); }

inline double baseline_hazard(double t, const SurvivalParams& p) {
    if (!(t > 0.0)) throw std::domain_error("hazard: time must be positive");
    return std::exp(std::log(p.shape) - std::log(p.scale) + (p.shape - 1.0) * (std::log(t) - std::log(p.scale)));
}

inline double linear_predictor(const Eigen::Ref<const Vector>& x, const SurvivalParams& p) {
    if (x.size() != p.beta.size()) throw std::invalid_argument("covariate vector length does not match beta");
    return p.beta.dot(x);
}

/// lambda(t | x) = (a/b)(t/b)^(a-1) exp(beta'x)
inline double hazard(double t, const Eigen::Ref<const Vector>& x, const SurvivalParams& p) {
    return baseline_hazard(t, p) * std::exp(linear_predictor(x, p));
}

inline double survival(double t, const Eigen::Ref<const Vector>& x, const SurvivalParams& p) {
    return std::exp(-baseline_cum_hazard(t, p) * std::exp(linear_predictor(x, p)));
}

/**
 * Log-likelihood of one left-truncated interval (t_lo, t_hi]:
 *   delta * log lambda(t_hi | x) - exp(beta'x) (Lambda_0(t_hi) - Lambda_0(t_lo)).
 */
inline double interval_loglik(double t_lo, double t_hi, int delta, const Eigen::Ref<const Vector>& x,
                              const SurvivalParams& p) {
    if (!(t_lo > 0.0) || !(t_hi > t_lo)) throw std::domain_error("interval_loglik: need 0 < t_lo < t_hi");
    const double eta = linear_predictor(x, p);
    const double increment = baseline_cum_hazard(t_hi, p) - baseline_cum_hazard(t_lo, p);
    double ll = -std::exp(eta) * increment;
    if (delta) {
        ll += std::log(p.shape) - p.shape * std::log(p.scale) + (p.shape - 1.0) * std::log(t_hi) + eta;
    }
    return ll;
}

namespace detail {

// Lambda_0 and its partial derivatives in (a, b) at one time point.
struct CumHazardDerivs {
    double value = 0, da = 0, db = 0, daa = 0, dab = 0, dbb = 0;
};

inline CumHazardDerivs cum_hazard_derivs(double t, double a, double b) {
    CumHazardDerivs d;
    const double L = std::log(t) - std::log(b);
    const double lam = std::exp(a * L);
    d.value = lam;
    d.da = L * lam;
    d.db = -(a / b) * lam;
    d.daa = L * L * lam;
    d.dab = -(lam / b) * (1.0 + a * L);
    d.dbb = a * (a + 1.0) / (b * b) * lam;
    return d;
}

} // namespace detail

/// Gradient of interval_loglik with respect to (beta, a, b).
inline Vector loglik_gradient(double t_lo, double t_hi, int delta, const Eigen::Ref<const Vector>& x,
                              const SurvivalParams& p) {
    if (!(t_lo > 0.0) || !(t_hi > t_lo)) throw std::domain_error("loglik_gradient: need 0 < t_lo < t_hi");
    const int H = p.covariates();
    const double e = std::exp(linear_predictor(x, p));
    const auto hi = detail::cum_hazard_derivs(t_hi, p.shape, p.scale);
    const auto lo = detail::cum_hazard_derivs(t_lo, p.shape, p.scale);
    Vector g(H + 2);
    g.head(H) = (delta - e * (hi.value - lo.value)) * x;
    g(H) = -e * (hi.da - lo.da);
    g(H + 1) = -e * (hi.db - lo.db);
    if (delta) {
        g(H) += 1.0 / p.shape + std::log(t_hi) - std::log(p.scale);
        g(H + 1) += -p.shape / p.scale;
    }
    return g;
}

/**
 * Adds `weight` times the negative Hessian of interval_loglik (in (beta, a, b)
 * order) to `out`. This is the per-interval contribution to observed information.
 */
inline void accumulate_neg_hessian(double t_lo, double t_hi, int delta, const Eigen::Ref<const Vector>& x,
                                   const SurvivalParams& p, Matrix& out, double weight = 1.0) {
    if (!(t_lo > 0.0) || !(t_hi > t_lo)) throw std::domain_error("loglik_hessian: need 0 < t_lo < t_hi");
    const int H = p.covariates();
    const double a = p.shape;
    const double b = p.scale;
    const double e = std::exp(linear_predictor(x, p)) * weight;
    const auto hi = detail::cum_hazard_derivs(t_hi, a, b);
    const auto lo = detail::cum_hazard_derivs(t_lo, a, b);
    const double inc = hi.value - lo.value;
    const double inc_a = hi.da - lo.da;
    const double inc_b = hi.db - lo.db;

    for (int i = 0; i < H; ++i) {
        for (int k = 0; k <= i; ++k) {
            const double v = e * inc * (x(i) * x(k));
            out(i, k) += v;
            if (k != i) out(k, i) += v;
        }
    }
    out.block(0, H, H, 1) += (e * inc_a) * x;
    out.block(0, H + 1, H, 1) += (e * inc_b) * x;
    out.block(H, 0, 1, H) += (e * inc_a) * x.transpose();
    out.block(H + 1, 0, 1, H) += (e * inc_b) * x.transpose();

    double aa = e * (hi.daa - lo.daa);
    double ab = e * (hi.dab - lo.dab);
    double bb = e * (hi.dbb - lo.dbb);
    if (delta) {
        aa += weight / (a * a);
        ab += weight / b;
        bb -= weight * a / (b * b);
    }
    out(H, H) += aa;
    out(H, H + 1) += ab;
    out(H + 1, H) += ab;
    out(H + 1, H + 1) += bb;
}

/// Analytic Hessian of interval_loglik with respect to (beta_1..beta_H, a, b).
inline Matrix loglik_hessian(double t_lo, double t_hi, int delta, const Eigen::Ref<const Vector>& x,
                             const SurvivalParams& p) {
    Matrix h = Matrix::Zero(p.dimension(), p.dimension());
    accumulate_neg_hessian(t_lo, t_hi, delta, x, p, h);
    return -h;
}

struct SurvivalDraw {
    double age = 0.0;
    int delta = 0;
};

/**
 * Inverse-CDF draw of the event age given survival to t_lo, covariates x held
 * fixed: t = b (Lambda_0(t_lo) - log U / exp(beta'x))^(1/a). Draws beyond
 * horizon_age are censored there.
 */
inline SurvivalDraw sample_interval_survival(double t_lo, const Eigen::Ref<const Vector>& x, const SurvivalParams& p,
                                             double horizon_age, Rng& rng) {
    if (!(horizon_age > t_lo)) throw std::domain_error("sample_interval_survival: horizon must exceed t_lo");
    const double target = baseline_cum_hazard(t_lo, p) - std::log(uniform01(rng)) / std::exp(linear_predictor(x, p));
    const double t = p.scale * std::exp(std::log(target) / p.shape);
    if (!(t < horizon_age) || !std::isfinite(t)) return {horizon_age, 0};
    // guard against rounding below the truncation point for enormous hazards
    return {std::max(t, std::nextafter(t_lo, horizon_age)), 1};
}

} // namespace subcohort
