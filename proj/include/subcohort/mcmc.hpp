#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/covariate_process.hpp"
#include "subcohort/model.hpp"
#include "subcohort/weibull.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace subcohort {

struct GammaPrior {
    double shape = 1.0;
    double rate = 1.0;
};

/// Priors of the joint model. Normal priors are given by their variances (mean 0).
struct PriorSpec {
    double beta_variance = 1e4;
    GammaPrior r{1.0, 1e-4};
    double alpha_variance = 1e4;
    double c_variance = 100.0;
    double gamma_variance = 100.0;
    GammaPrior v_precision{1.0, 0.01}; // prior on 1/v
    double d_variance = 1e4;

    void validate() const {
        if (!(beta_variance > 0 && alpha_variance > 0 && c_variance > 0 && gamma_variance > 0 && d_variance > 0 &&
              r.shape > 0 && r.rate > 0 && v_precision.shape > 0 && v_precision.rate > 0)) {
            throw std::invalid_argument("prior hyperparameters must be positive");
        }
    }
};

struct McmcSettings {
    int iterations = 20000;
    int burn_in = 5000;
    int retained = 1000;
    std::uint64_t seed = 1;
    double target_acceptance = 0.35;

    bool update_survival = true;
    bool update_process = true;
    bool update_process_variance = true;
    bool update_missing = true;
    /// Fix a covariate's process at the model-spec assumption when no transitions are observed.
    bool assume_without_transitions = true;
    /// Move the starting point to the posterior mode before sampling.
    bool warm_start = true;

    std::optional<SurvivalParams> initial_survival;
    std::vector<ContinuousProcessParams> initial_continuous; // per raw covariate, centered scale
    std::vector<BinaryProcessParams> initial_binary;         // per raw covariate

    int thinning() const { return retained > 0 ? (iterations - burn_in) / retained : 0; }

    void validate() const {
        if (iterations < burn_in) throw std::invalid_argument("iteration budget is smaller than the burn-in");
        if (retained < 1 || thinning() < 1) throw std::invalid_argument("too few post-burn-in iterations for the retained count");
    }
};

struct PosteriorDraw {
    SurvivalParams survival;
    ReparamWeibull reparam;
    std::vector<ContinuousProcessParams> continuous; // per raw covariate, centered scale
    std::vector<BinaryProcessParams> binary;         // per raw covariate
    std::vector<double> imputed;                     // aligned with PosteriorSample::missing_cells
};

struct ChainMeta {
    int iterations = 0;
    int burn_in = 0;
    int thinning = 0;
    std::uint64_t seed = 0;
    std::uint64_t data_fingerprint = 0; // of the cohort the chain was fit to
    std::map<std::string, double> acceptance;
};

/**
 * Retained draws of the joint posterior: survival parameters in both
 * parameterizations, covariate-process parameters and every imputed cell.
 */
struct PosteriorSample {
    std::vector<std::string> covariate_names;
    std::vector<CovariateKind> covariate_kinds;
    std::vector<std::string> feature_names;
    std::vector<Cell> missing_cells;
    std::vector<PosteriorDraw> draws;
    ChainMeta meta;

    std::size_t size() const noexcept { return draws.size(); }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> names;
        for (const auto& f : feature_names) names.push_back("beta_" + f);
        names.insert(names.end(), {"shape", "scale", "r", "alpha"});
        for (std::size_t h = 0; h < covariate_names.size(); ++h) {
            const auto& n = covariate_names[h];
            if (covariate_kinds[h] == CovariateKind::continuous) {
                names.insert(names.end(), {"c_" + n, "gamma_" + n, "v_" + n});
            } else {
                names.insert(names.end(), {"d0_" + n, "d1_" + n});
            }
        }
        return names;
    }

    std::vector<double> parameter_values(const PosteriorDraw& d) const {
        std::vector<double> v(d.survival.beta.data(), d.survival.beta.data() + d.survival.beta.size());
        v.insert(v.end(), {d.survival.shape, d.survival.scale, d.reparam.r, d.reparam.alpha});
        for (std::size_t h = 0; h < covariate_names.size(); ++h) {
            if (covariate_kinds[h] == CovariateKind::continuous) {
                v.insert(v.end(), {d.continuous[h].c, d.continuous[h].gamma, d.continuous[h].v});
            } else {
                v.insert(v.end(), {d.binary[h].d0, d.binary[h].d1});
            }
        }
        return v;
    }

    std::vector<double> trace(const std::string& parameter) const {
        const auto names = parameter_names();
        const auto it = std::find(names.begin(), names.end(), parameter);
        if (it == names.end()) throw std::invalid_argument("unknown parameter '" + parameter + "'");
        const auto k = static_cast<std::size_t>(it - names.begin());
        std::vector<double> out;
        out.reserve(draws.size());
        for (const auto& d : draws) out.push_back(parameter_values(d)[k]);
        return out;
    }

    /// Panel-layout raw values with the draw's imputations filled in.
    std::vector<double> realization(const Cohort& cohort, std::size_t draw) const {
        std::vector<double> values = cohort.panel().values();
        const auto& d = draws.at(draw);
        for (std::size_t k = 0; k < missing_cells.size(); ++k) {
            const auto& c = missing_cells[k];
            values[cohort.panel().index(c.individual, c.wave, c.covariate)] = d.imputed[k];
        }
        return values;
    }
};

struct PosteriorSummary {
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q500 = 0.0;
    double q975 = 0.0;
};

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline PosteriorSummary posterior_summary(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("posterior summary of an empty sample");
    PosteriorSummary s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    std::sort(values.begin(), values.end());
    s.q025 = sorted_quantile(values, 0.025);
    s.q500 = sorted_quantile(values, 0.5);
    s.q975 = sorted_quantile(values, 0.975);
    return s;
}

inline PosteriorSummary posterior_summary(const PosteriorSample& sample, const std::string& parameter) {
    if (sample.draws.empty()) throw std::invalid_argument("posterior summary of an empty sample");
    return posterior_summary(sample.trace(parameter));
}

/**
 * Effective sample size with Geyer's initial positive sequence estimator.
 * A constant chain has ESS 1.
 */
inline double effective_sample_size(const std::vector<double>& chain) {
    const auto n = chain.size();
    if (n < 10) throw std::invalid_argument("chain too short for an ESS estimate");
    double mean = 0.0;
    for (double v : chain) mean += v;
    mean /= static_cast<double>(n);
    std::vector<double> c(chain.size());
    for (std::size_t i = 0; i < n; ++i) c[i] = chain[i] - mean;
    const auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
        return s / static_cast<double>(n);
    };
    const double c0 = autocov(0);
    if (!(c0 > 0.0)) return 1.0;
    double sum_pairs = 0.0;
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if (pair <= 0.0) break;
        sum_pairs += pair;
    }
    const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / static_cast<double>(n));
    return static_cast<double>(n) / tau;
}

namespace detail {

/// Damped Newton ascent with finite-difference derivatives. Returns the final point and
/// negative Hessian there.
struct NewtonResult {
    Vector point;
    Matrix neg_hessian;
};

inline Matrix numeric_hessian(const std::function<double(const Vector&)>& f, const Vector& x, Vector& grad) {
    const auto d = x.size();
    Matrix hess(d, d);
    grad.resize(d);
    Vector h(d);
    for (Eigen::Index i = 0; i < d; ++i) h(i) = 1e-4 * std::max(1.0, std::abs(x(i)));
    const double f0 = f(x);
    for (Eigen::Index i = 0; i < d; ++i) {
        Vector xp = x, xm = x;
        xp(i) += h(i);
        xm(i) -= h(i);
        const double fp = f(xp), fm = f(xm);
        grad(i) = (fp - fm) / (2 * h(i));
        hess(i, i) = (fp - 2 * f0 + fm) / (h(i) * h(i));
        for (Eigen::Index k = 0; k < i; ++k) {
            Vector a = x, b = x, c = x, e = x;
            a(i) += h(i), a(k) += h(k);
            b(i) += h(i), b(k) -= h(k);
            c(i) -= h(i), c(k) += h(k);
            e(i) -= h(i), e(k) -= h(k);
            hess(i, k) = hess(k, i) = (f(a) - f(b) - f(c) + f(e)) / (4 * h(i) * h(k));
        }
    }
    return hess;
}

inline Matrix make_positive_definite(Matrix m) {
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    Vector ev = es.eigenvalues();
    const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-12);
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(std::abs(ev(i)), 1e-8 * top);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline NewtonResult newton_ascent(const std::function<double(const Vector&)>& f, Vector x, int max_iter = 60) {
    Vector grad;
    Matrix neg_h;
    double fx = f(x);
    if (!std::isfinite(fx)) throw std::runtime_error("non-finite log-posterior at the initial state");
    for (int it = 0; it < max_iter; ++it) {
        neg_h = make_positive_definite(-numeric_hessian(f, x, grad));
        const Vector step = neg_h.ldlt().solve(grad);
        double t = 1.0;
        bool moved = false;
        while (t > 1e-10) {
            const Vector cand = x + t * step;
            const double fc = f(cand);
            if (std::isfinite(fc) && fc >= fx - 1e-10) {
                moved = fc > fx;
                x = cand;
                fx = fc;
                break;
            }
            t *= 0.5;
        }
        if (!moved || (t * step).cwiseAbs().maxCoeff() < 1e-9) break;
    }
    neg_h = make_positive_definite(-numeric_hessian(f, x, grad));
    return {x, neg_h};
}

/// Random-walk Metropolis block with Robbins-Monro scale and burn-in covariance adaptation.
class AdaptiveBlock {
public:
    AdaptiveBlock() = default;
    AdaptiveBlock(std::string name, int dim, const Matrix& covariance)
        : name_(std::move(name)), dim_(dim), log_scale_(std::log(2.38 / std::sqrt(static_cast<double>(dim)))),
          sum_(Vector::Zero(dim)), sum_sq_(Matrix::Zero(dim, dim)) {
        set_covariance(covariance);
    }

    const std::string& name() const noexcept { return name_; }
    int dim() const noexcept { return dim_; }

    Vector propose(const Vector& current, Rng& rng) const {
        Vector z(dim_);
        for (int i = 0; i < dim_; ++i) z(i) = standard_normal(rng);
        return current + std::exp(log_scale_) * (chol_ * z);
    }

    void record(bool accepted, const Vector& state, bool adapting, double target) {
        ++steps_;
        if (adapting) {
            log_scale_ += (static_cast<double>(accepted) - target) / std::pow(static_cast<double>(steps_) + 10.0, 0.6);
            log_scale_ = std::clamp(log_scale_, -20.0, 5.0);
            sum_ += state;
            sum_sq_.noalias() += state * state.transpose();
            ++samples_;
            if (samples_ >= 100 * dim_ && samples_ % 100 == 0) {
                const double n = static_cast<double>(samples_);
                const Vector mean = sum_ / n;
                Matrix cov = (sum_sq_ - n * mean * mean.transpose()) / (n - 1.0);
                cov.diagonal().array() += 1e-10 * (1.0 + cov.diagonal().array().abs());
                set_covariance(cov);
            }
        } else {
            ++post_steps_;
            post_accepted_ += accepted ? 1 : 0;
        }
    }

    double acceptance_rate() const {
        return post_steps_ > 0 ? static_cast<double>(post_accepted_) / static_cast<double>(post_steps_) : 0.0;
    }

private:
    void set_covariance(const Matrix& cov) {
        Eigen::LLT<Matrix> llt(make_positive_definite(cov));
        chol_ = llt.matrixL();
    }

    std::string name_;
    int dim_ = 0;
    double log_scale_ = 0.0;
    Matrix chol_;
    Vector sum_;
    Matrix sum_sq_;
    long samples_ = 0;
    long steps_ = 0;
    long post_steps_ = 0;
    long post_accepted_ = 0;
};

inline double normal_logprior(double x, double variance) { return -0.5 * x * x / variance; }

} // namespace detail

/**
 * Metropolis-within-Gibbs sampler for the joint model: Weibull PH survival
 * likelihood over every observed interval, covariate-process likelihood over
 * every in-scope transition, priors, and data augmentation of missing cells.
 *
 * Survival parameters are sampled in (beta, log r, alpha~) with
 * alpha~ = alpha + r * t0 for a fixed log-age reference t0; this is a unit-Jacobian
 * shift of alpha that removes most of its correlation with r.
 */
class AugmentedSampler {
public:
    AugmentedSampler(const Cohort& cohort, ModelSpec spec, PriorSpec priors, McmcSettings settings)
        : cohort_(cohort), spec_(std::move(spec)), priors_(priors), settings_(std::move(settings)),
          rng_(settings_.seed) {
        priors_.validate();
        const auto& panel = cohort_.panel();
        if (spec_.raw_width() != panel.covariates()) {
            throw std::invalid_argument("model spec does not match the cohort covariates");
        }
        offsets_ = model_offsets(panel, spec_);
        raw_ = panel.covariates();
        width_ = spec_.width();
        build_intervals();
        build_cells();
        build_transitions();
        initialize();
    }

    // --- state access -------------------------------------------------------
    const Vector& beta() const noexcept { return beta_; }
    double r() const noexcept { return std::exp(log_r_); }
    double alpha() const noexcept { return alpha_shift_ - r() * t_ref_; }
    SurvivalParams survival() const {
        const auto [a, b] = from_reparam({r(), alpha()});
        return {beta_, a, b};
    }
    const std::vector<ContinuousProcessParams>& continuous() const noexcept { return cont_; }
    const std::vector<BinaryProcessParams>& binary() const noexcept { return bin_; }
    const std::vector<double>& realization() const noexcept { return x_; }
    const std::vector<Cell>& missing_cells() const noexcept { return cells_; }
    bool process_sampled(int h) const { return sampled_process_[static_cast<std::size_t>(h)]; }

    /// Unnormalized log posterior of the current state (sampler coordinates).
    double log_posterior() const {
        return survival_loglik(beta_, log_r_, alpha_shift_) + survival_logprior(beta_, log_r_, alpha_shift_) +
               process_logpost_all() + baseline_logdensity_all();
    }

    /// One Metropolis update of missing cell k; returns whether the proposal was accepted.
    bool update_missing_cell(std::size_t k) {
        const auto& info = cell_info_[k];
        const auto& cell = cells_[k];
        const auto idx = info.index;
        const double current = x_[idx];
        const double proposal = propose_cell(cell, info);
        if (proposal == current) return true;

        double log_ratio = 0.0;
        if (info.next_index != kNone) {
            log_ratio += transition_logdensity(cell.covariate, x_[info.next_index], proposal) -
                         transition_logdensity(cell.covariate, x_[info.next_index], current);
        }
        const auto i = info.interval;
        const double old_eta = eta_[i];
        x_[idx] = proposal;
        features_at(cohort_.panel(), x_, cell.individual, cell.wave, offsets_, spec_.features, row_buffer_);
        const double new_eta = row_buffer_.dot(beta_);
        log_ratio += delta_[i] * (new_eta - old_eta) - (std::exp(new_eta) - exp_eta_[i]) * dlam_[i];
        if (std::log(uniform01(rng_)) < log_ratio) {
            features_.row(static_cast<Eigen::Index>(i)) = row_buffer_.transpose();
            eta_[i] = new_eta;
            exp_eta_[i] = std::exp(new_eta);
            return true;
        }
        x_[idx] = current;
        return false;
    }

    /// One full sweep over every block.
    void sweep(bool adapting) {
        if (settings_.update_survival) {
            update_beta(adapting);
            update_weibull(adapting);
        }
        if (settings_.update_process) {
            for (int h = 0; h < raw_; ++h) {
                if (sampled_process_[static_cast<std::size_t>(h)]) update_process(h, adapting);
            }
        }
        if (settings_.update_missing) {
            std::size_t accepted = 0;
            for (std::size_t k = 0; k < cells_.size(); ++k) accepted += update_missing_cell(k) ? 1 : 0;
            if (!adapting) {
                cell_accepts_ += accepted;
                cell_steps_ += cells_.size();
            }
        }
    }

    PosteriorSample run() {
        settings_.validate();
        PosteriorSample out;
        out.covariate_names = cohort_.panel().names();
        out.covariate_kinds = cohort_.panel().kinds();
        out.feature_names = spec_.features.names(out.covariate_names);
        out.missing_cells = cells_;
        const int thin = settings_.thinning();
        out.meta = {settings_.iterations, settings_.burn_in, thin, settings_.seed, data_fingerprint(cohort_), {}};
        out.draws.reserve(static_cast<std::size_t>(settings_.retained));
        const int first_kept = settings_.iterations - settings_.retained * thin;
        for (int it = 0; it < settings_.iterations; ++it) {
            sweep(it < settings_.burn_in);
            if (it >= first_kept && (it - first_kept + 1) % thin == 0) out.draws.push_back(current_draw());
        }
        out.meta.acceptance["beta"] = beta_block_.acceptance_rate();
        out.meta.acceptance["weibull"] = weibull_block_.acceptance_rate();
        for (int h = 0; h < raw_; ++h) {
            if (sampled_process_[static_cast<std::size_t>(h)]) {
                out.meta.acceptance["process_" + out.covariate_names[static_cast<std::size_t>(h)]] =
                    process_blocks_[static_cast<std::size_t>(h)].acceptance_rate();
            }
        }
        if (cell_steps_ > 0) {
            out.meta.acceptance["missing_cells"] = static_cast<double>(cell_accepts_) / static_cast<double>(cell_steps_);
        }
        return out;
    }

    PosteriorDraw current_draw() const {
        PosteriorDraw d;
        d.survival = survival();
        d.reparam = {r(), alpha()};
        d.continuous = cont_;
        d.binary = bin_;
        d.imputed.reserve(cells_.size());
        for (const auto& info : cell_info_) d.imputed.push_back(x_[info.index]);
        return d;
    }

private:
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    struct CellInfo {
        std::size_t index = 0;      // into x_
        std::size_t prev_index = kNone;
        std::size_t next_index = kNone;
        std::size_t interval = 0;
    };

    struct Transition {
        std::size_t prev = 0;
        std::size_t next = 0;
    };

    void build_intervals() {
        const auto& recs = cohort_.intervals();
        const auto n = recs.size();
        log_lo_.resize(n);
        log_hi_.resize(n);
        delta_.resize(n);
        double sum = 0.0;
        int count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            log_lo_[i] = std::log(recs[i].t_lo);
            log_hi_[i] = std::log(recs[i].t_hi);
            delta_[i] = recs[i].delta;
            if (recs[i].delta) {
                sum += log_hi_[i];
                ++count;
            }
        }
        if (count == 0) {
            for (std::size_t i = 0; i < n; ++i) sum += log_hi_[i];
            count = static_cast<int>(n);
        }
        t_ref_ = count > 0 ? sum / count : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            log_lo_[i] -= t_ref_;
            log_hi_[i] -= t_ref_;
        }
        events_ = 0.0;
        event_log_hi_ = 0.0;
        event_log_t_ = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (delta_[i]) {
                events_ += 1.0;
                event_log_hi_ += log_hi_[i];
                event_log_t_ += std::log(recs[i].t_hi);
            }
        }
    }

    void build_cells() {
        const auto& panel = cohort_.panel();
        cells_ = in_scope_missing_cells(cohort_);
        cell_info_.clear();
        for (const auto& c : cells_) {
            CellInfo info;
            info.index = panel.index(c.individual, c.wave, c.covariate);
            if (c.wave > 0) info.prev_index = panel.index(c.individual, c.wave - 1, c.covariate);
            if (c.wave + 1 < static_cast<int>(cohort_.records(c.individual).size())) {
                info.next_index = panel.index(c.individual, c.wave + 1, c.covariate);
            }
            info.interval = cohort_.record_offset(c.individual) + static_cast<std::size_t>(c.wave);
            cell_info_.push_back(info);
        }
        // baseline distribution for missing baseline cells: moments of the observed baselines
        baseline_mean_.assign(static_cast<std::size_t>(raw_), 0.0);
        baseline_var_.assign(static_cast<std::size_t>(raw_), 1.0);
        for (int h = 0; h < raw_; ++h) {
            double s = 0, ss = 0;
            int n = 0;
            for (int j = 0; j < cohort_.size(); ++j) {
                if (!panel.is_missing(j, 0, h)) {
                    s += panel.value(j, 0, h);
                    ss += panel.value(j, 0, h) * panel.value(j, 0, h);
                    ++n;
                }
            }
            if (panel.kind(h) == CovariateKind::binary) {
                baseline_mean_[static_cast<std::size_t>(h)] = n > 0 ? (s + 0.5) / (n + 1.0) : 0.5;
            } else if (n > 1) {
                const double m = s / n;
                baseline_mean_[static_cast<std::size_t>(h)] = m;
                baseline_var_[static_cast<std::size_t>(h)] = std::max((ss - n * m * m) / (n - 1), 1e-8);
            } else if (n == 1) {
                baseline_mean_[static_cast<std::size_t>(h)] = s;
            }
        }
    }

    void build_transitions() {
        const auto& panel = cohort_.panel();
        transitions_.assign(static_cast<std::size_t>(raw_), {});
        sampled_process_.assign(static_cast<std::size_t>(raw_), true);
        for (int h = 0; h < raw_; ++h) {
            for (int j = 0; j < cohort_.size(); ++j) {
                const int n_records = static_cast<int>(cohort_.records(j).size());
                for (int m = 1; m < n_records; ++m) {
                    transitions_[static_cast<std::size_t>(h)].push_back(
                        {panel.index(j, m - 1, h), panel.index(j, m, h)});
                }
            }
            if (settings_.assume_without_transitions && !has_transition_data(cohort_, h)) {
                sampled_process_[static_cast<std::size_t>(h)] = false;
            }
        }
    }

    // --- likelihood pieces ---------------------------------------------------
    double working(int h, double raw) const {
        return cohort_.panel().kind(h) == CovariateKind::continuous ? raw - offsets_[static_cast<std::size_t>(h)] : raw;
    }

    double transition_logdensity(int h, double next_raw, double prev_raw) const {
        const auto hh = static_cast<std::size_t>(h);
        if (cohort_.panel().kind(h) == CovariateKind::continuous) {
            const auto& p = cont_[hh];
            if (!(p.v > 0.0)) return 0.0;
            return logdensity_continuous(working(h, next_raw), working(h, prev_raw), p);
        }
        return logmass_binary(next_raw, prev_raw, bin_[hh]);
    }

    double baseline_logdensity(int h, double raw) const {
        const auto hh = static_cast<std::size_t>(h);
        if (cohort_.panel().kind(h) == CovariateKind::binary) {
            return std::log(raw != 0.0 ? baseline_mean_[hh] : 1.0 - baseline_mean_[hh]);
        }
        const double r = raw - baseline_mean_[hh];
        return -0.5 * std::log(2 * std::numbers::pi * baseline_var_[hh]) - 0.5 * r * r / baseline_var_[hh];
    }

    double baseline_logdensity_all() const {
        double s = 0.0;
        for (std::size_t k = 0; k < cells_.size(); ++k) {
            if (cells_[k].wave == 0) s += baseline_logdensity(cells_[k].covariate, x_[cell_info_[k].index]);
        }
        return s;
    }

    double propose_cell(const Cell& cell, const CellInfo& info) {
        const int h = cell.covariate;
        const auto hh = static_cast<std::size_t>(h);
        const bool binary = cohort_.panel().kind(h) == CovariateKind::binary;
        if (info.prev_index == kNone) {
            if (binary) return uniform01(rng_) < baseline_mean_[hh] ? 1.0 : 0.0;
            return baseline_mean_[hh] + std::sqrt(baseline_var_[hh]) * standard_normal(rng_);
        }
        const double prev = x_[info.prev_index];
        if (binary) return simulate_next_binary(prev, bin_[hh], rng_);
        return simulate_next_continuous(working(h, prev), cont_[hh], rng_) + offsets_[hh];
    }

    double survival_loglik(const Vector& beta, double log_r, double alpha_shift) const {
        const double r = std::exp(log_r);
        const auto n = log_hi_.size();
        // log h0(t) = log r + alpha~ + r (log t - t_ref) - log t
        double ll = events_ * (log_r + alpha_shift) + r * event_log_hi_ - event_log_t_;
        const bool same_beta = beta.size() == beta_.size() && beta == beta_;
        for (std::size_t i = 0; i < n; ++i) {
            const double eta = same_beta ? eta_[i] : features_.row(static_cast<Eigen::Index>(i)).dot(beta);
            if (delta_[i]) ll += eta;
            const double inc = std::exp(alpha_shift + r * log_hi_[i]) - std::exp(alpha_shift + r * log_lo_[i]);
            ll -= std::exp(eta) * inc;
        }
        return ll;
    }

    double survival_logprior(const Vector& beta, double log_r, double alpha_shift) const {
        const double r = std::exp(log_r);
        double lp = -0.5 * beta.squaredNorm() / priors_.beta_variance;
        lp += priors_.r.shape * log_r - priors_.r.rate * r; // includes the log-Jacobian of log r
        lp += detail::normal_logprior(alpha_shift - r * t_ref_, priors_.alpha_variance);
        return lp;
    }

    double process_loglik(int h, const ContinuousProcessParams& p) const {
        if (!(p.v > 0.0)) return -std::numeric_limits<double>::infinity();
        double ll = 0.0;
        const double log_norm = -0.5 * std::log(2 * std::numbers::pi * p.v);
        for (const auto& t : transitions_[static_cast<std::size_t>(h)]) {
            const double r = working(h, x_[t.next]) - p.c - p.gamma * working(h, x_[t.prev]);
            ll += log_norm - 0.5 * r * r / p.v;
        }
        return ll;
    }

    double process_loglik(int h, const BinaryProcessParams& p) const {
        double ll = 0.0;
        for (const auto& t : transitions_[static_cast<std::size_t>(h)]) ll += logmass_binary(x_[t.next], x_[t.prev], p);
        return ll;
    }

    // block coordinates: continuous (c, gamma, log v); binary (d0, d1)
    double process_logpost(int h, const Vector& z) const {
        if (cohort_.panel().kind(h) == CovariateKind::continuous) {
            const ContinuousProcessParams p{z(0), z(1), std::exp(z(2))};
            const double log_tau = -z(2);
            double lp = detail::normal_logprior(p.c, priors_.c_variance) +
                        detail::normal_logprior(p.gamma, priors_.gamma_variance) +
                        priors_.v_precision.shape * log_tau - priors_.v_precision.rate * std::exp(log_tau);
            return lp + process_loglik(h, p);
        }
        const BinaryProcessParams p{z(0), z(1)};
        return detail::normal_logprior(p.d0, priors_.d_variance) + detail::normal_logprior(p.d1, priors_.d_variance) +
               process_loglik(h, p);
    }

    Vector process_coords(int h) const {
        const auto hh = static_cast<std::size_t>(h);
        if (cohort_.panel().kind(h) == CovariateKind::continuous) {
            const auto& p = cont_[hh];
            if (!settings_.update_process_variance) return Vector{{p.c, p.gamma}};
            return Vector{{p.c, p.gamma, std::log(p.v)}};
        }
        return Vector{{bin_[hh].d0, bin_[hh].d1}};
    }

    double process_block_logpost(int h, const Vector& z) const {
        if (cohort_.panel().kind(h) == CovariateKind::continuous && !settings_.update_process_variance) {
            return process_logpost(h, Vector{{z(0), z(1), std::log(cont_[static_cast<std::size_t>(h)].v)}});
        }
        return process_logpost(h, z);
    }

    void set_process_coords(int h, const Vector& z) {
        const auto hh = static_cast<std::size_t>(h);
        if (cohort_.panel().kind(h) == CovariateKind::continuous) {
            cont_[hh].c = z(0);
            cont_[hh].gamma = z(1);
            if (settings_.update_process_variance) cont_[hh].v = std::exp(z(2));
        } else {
            bin_[hh] = {z(0), z(1)};
        }
    }

    double process_logpost_all() const {
        double s = 0.0;
        for (int h = 0; h < raw_; ++h) {
            const auto hh = static_cast<std::size_t>(h);
            if (sampled_process_[hh]) {
                s += process_block_logpost(h, process_coords(h));
            } else if (cohort_.panel().kind(h) == CovariateKind::continuous) {
                if (cont_[hh].v > 0.0) s += process_loglik(h, cont_[hh]);
            } else {
                s += process_loglik(h, bin_[hh]);
            }
        }
        return s;
    }

    void refresh_survival_caches() {
        const auto n = log_hi_.size();
        const double r = std::exp(log_r_);
        for (std::size_t i = 0; i < n; ++i) {
            eta_[i] = features_.row(static_cast<Eigen::Index>(i)).dot(beta_);
            exp_eta_[i] = std::exp(eta_[i]);
            dlam_[i] = std::exp(alpha_shift_ + r * log_hi_[i]) - std::exp(alpha_shift_ + r * log_lo_[i]);
        }
    }

    void rebuild_features() {
        const auto& recs = cohort_.intervals();
        features_.resize(static_cast<Eigen::Index>(recs.size()), width_);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            features_at(cohort_.panel(), x_, recs[i].individual, recs[i].wave, offsets_, spec_.features, row_buffer_);
            features_.row(static_cast<Eigen::Index>(i)) = row_buffer_.transpose();
        }
    }

    // --- block updates -------------------------------------------------------
    void update_beta(bool adapting) {
        const Vector prop = beta_block_.propose(beta_, rng_);
        const auto n = log_hi_.size();
        proposal_eta_.resize(n);
        double diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double eta = features_.row(static_cast<Eigen::Index>(i)).dot(prop);
            proposal_eta_[i] = eta;
            diff += delta_[i] * (eta - eta_[i]) - (std::exp(eta) - exp_eta_[i]) * dlam_[i];
        }
        diff += -0.5 * (prop.squaredNorm() - beta_.squaredNorm()) / priors_.beta_variance;
        const bool accept = std::log(uniform01(rng_)) < diff;
        if (accept) {
            beta_ = prop;
            for (std::size_t i = 0; i < n; ++i) {
                eta_[i] = proposal_eta_[i];
                exp_eta_[i] = std::exp(eta_[i]);
            }
        }
        beta_block_.record(accept, beta_, adapting, settings_.target_acceptance);
    }

    void update_weibull(bool adapting) {
        const Vector cur{{log_r_, alpha_shift_}};
        const Vector prop = weibull_block_.propose(cur, rng_);
        const double r_new = std::exp(prop(0));
        const double r_old = std::exp(log_r_);
        const auto n = log_hi_.size();
        proposal_dlam_.resize(n);
        double diff = events_ * (prop(0) - log_r_ + prop(1) - alpha_shift_) + (r_new - r_old) * event_log_hi_;
        for (std::size_t i = 0; i < n; ++i) {
            const double inc = std::exp(prop(1) + r_new * log_hi_[i]) - std::exp(prop(1) + r_new * log_lo_[i]);
            proposal_dlam_[i] = inc;
            diff -= exp_eta_[i] * (inc - dlam_[i]);
        }
        diff += survival_logprior(beta_, prop(0), prop(1)) - survival_logprior(beta_, log_r_, alpha_shift_);
        const bool accept = std::isfinite(diff) && std::log(uniform01(rng_)) < diff;
        if (accept) {
            log_r_ = prop(0);
            alpha_shift_ = prop(1);
            dlam_ = proposal_dlam_;
        }
        weibull_block_.record(accept, Vector{{log_r_, alpha_shift_}}, adapting, settings_.target_acceptance);
    }

    void update_process(int h, bool adapting) {
        auto& block = process_blocks_[static_cast<std::size_t>(h)];
        const Vector cur = process_coords(h);
        const Vector prop = block.propose(cur, rng_);
        const double diff = process_block_logpost(h, prop) - process_block_logpost(h, cur);
        const bool accept = std::isfinite(diff) && std::log(uniform01(rng_)) < diff;
        if (accept) set_process_coords(h, prop);
        block.record(accept, accept ? prop : cur, adapting, settings_.target_acceptance);
    }

    // --- initialization ------------------------------------------------------
    void initialize() {
        const auto& panel = cohort_.panel();
        x_ = panel.values();
        cont_.assign(static_cast<std::size_t>(raw_), ContinuousProcessParams{0.0, 0.0, 1.0});
        bin_.assign(static_cast<std::size_t>(raw_), BinaryProcessParams{});
        for (int h = 0; h < raw_; ++h) {
            const auto hh = static_cast<std::size_t>(h);
            if (!sampled_process_[hh]) {
                if (panel.kind(h) == CovariateKind::continuous) {
                    cont_[hh] = spec_.continuous_assumption.at(hh);
                } else {
                    const auto& a = spec_.binary_assumption.at(hh);
                    a.validate();
                    const auto logit = [](double p) {
                        p = std::clamp(p, 1e-12, 1.0 - 1e-12);
                        return std::log(p / (1.0 - p));
                    };
                    bin_[hh].d0 = logit(a.p_zero_to_one);
                    bin_[hh].d1 = logit(1.0 - a.p_one_to_zero) - bin_[hh].d0;
                }
            } else {
                init_process_from_data(h);
            }
            if (hh < settings_.initial_continuous.size() && panel.kind(h) == CovariateKind::continuous) {
                cont_[hh] = settings_.initial_continuous[hh];
            }
            if (hh < settings_.initial_binary.size() && panel.kind(h) == CovariateKind::binary) {
                bin_[hh] = settings_.initial_binary[hh];
            }
        }
        // forward-simulate missing cells in wave order
        std::vector<std::size_t> order(cells_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return cells_[a].wave < cells_[b].wave; });
        for (auto k : order) x_[cell_info_[k].index] = propose_cell(cells_[k], cell_info_[k]);

        row_buffer_.resize(width_);
        eta_.assign(log_hi_.size(), 0.0);
        exp_eta_.assign(log_hi_.size(), 1.0);
        dlam_.assign(log_hi_.size(), 0.0);
        rebuild_features();

        if (settings_.initial_survival) {
            const auto& s = *settings_.initial_survival;
            s.validate();
            if (s.covariates() != width_) throw std::invalid_argument("initial beta has the wrong length");
            beta_ = s.beta;
            const auto rp = to_reparam(s.shape, s.scale);
            log_r_ = std::log(rp.r);
            alpha_shift_ = rp.alpha + rp.r * t_ref_;
        } else {
            beta_ = Vector::Zero(width_);
            moment_start();
        }
        refresh_survival_caches();

        // survival blocks: optional mode search, proposal covariances from the curvature there
        const int d = width_ + 2;
        const auto joint = [&](const Vector& z) {
            const Vector b = z.head(width_);
            return survival_loglik(b, z(width_), z(width_ + 1)) + survival_logprior(b, z(width_), z(width_ + 1));
        };
        Vector z(d);
        z << beta_, log_r_, alpha_shift_;
        Matrix neg_h;
        if (settings_.warm_start && settings_.update_survival) {
            auto res = detail::newton_ascent(joint, z);
            z = res.point;
            neg_h = res.neg_hessian;
            beta_ = z.head(width_);
            log_r_ = z(width_);
            alpha_shift_ = z(width_ + 1);
            refresh_survival_caches();
        } else {
            Vector g;
            neg_h = detail::make_positive_definite(-detail::numeric_hessian(joint, z, g));
        }
        const Matrix cov = neg_h.ldlt().solve(Matrix::Identity(d, d));
        beta_block_ = detail::AdaptiveBlock("beta", width_, width_ > 0 ? Matrix(cov.topLeftCorner(width_, width_)) : Matrix());
        weibull_block_ = detail::AdaptiveBlock("weibull", 2, cov.bottomRightCorner(2, 2));

        process_blocks_.assign(static_cast<std::size_t>(raw_), {});
        for (int h = 0; h < raw_; ++h) {
            if (!sampled_process_[static_cast<std::size_t>(h)]) continue;
            const auto f = [&, h](const Vector& zz) { return process_block_logpost(h, zz); };
            Vector zp = process_coords(h);
            Vector g;
            const Matrix nh = detail::make_positive_definite(-detail::numeric_hessian(f, zp, g));
            const auto dim = static_cast<int>(zp.size());
            process_blocks_[static_cast<std::size_t>(h)] = detail::AdaptiveBlock(
                "process", dim, nh.ldlt().solve(Matrix::Identity(dim, dim)));
        }

        if (!std::isfinite(log_posterior())) throw std::runtime_error("non-finite log-posterior at initialization");
    }

    void moment_start() {
        // crude marginal Weibull fit to the observed event ages
        std::vector<double> ages;
        for (const auto& rec : cohort_.intervals()) {
            if (rec.delta) ages.push_back(rec.t_hi);
        }
        double shape = 1.0, scale = std::exp(t_ref_);
        if (ages.size() >= 2) {
            double m = 0, ss = 0;
            for (double a : ages) m += a;
            m /= static_cast<double>(ages.size());
            for (double a : ages) ss += (a - m) * (a - m);
            const double sd = std::sqrt(ss / static_cast<double>(ages.size() - 1));
            if (sd > 0) {
                shape = std::clamp(std::pow(sd / m, -1.086), 0.2, 50.0);
                scale = m / std::tgamma(1.0 + 1.0 / shape);
            }
        } else if (cohort_.intervals().empty()) {
            scale = 1.0;
        }
        const auto rp = to_reparam(shape, scale);
        log_r_ = std::log(rp.r);
        alpha_shift_ = rp.alpha + rp.r * t_ref_;
    }

    void init_process_from_data(int h) {
        const auto hh = static_cast<std::size_t>(h);
        const auto& panel = cohort_.panel();
        std::vector<std::pair<double, double>> pairs;
        for (int j = 0; j < cohort_.size(); ++j) {
            const int n_records = static_cast<int>(cohort_.records(j).size());
            for (int m = 1; m < n_records; ++m) {
                if (!panel.is_missing(j, m, h) && !panel.is_missing(j, m - 1, h)) {
                    pairs.emplace_back(panel.value(j, m - 1, h), panel.value(j, m, h));
                }
            }
        }
        if (panel.kind(h) == CovariateKind::continuous) {
            if (pairs.size() >= 3) {
                double sx = 0, sy = 0, sxx = 0, sxy = 0;
                for (auto [p, n] : pairs) {
                    const double a = working(h, p), b = working(h, n);
                    sx += a, sy += b, sxx += a * a, sxy += a * b;
                }
                const double k = static_cast<double>(pairs.size());
                const double det = k * sxx - sx * sx;
                double gamma = det > 0 ? (k * sxy - sx * sy) / det : 0.0;
                double c = (sy - gamma * sx) / k;
                double rss = 0;
                for (auto [p, n] : pairs) {
                    const double e = working(h, n) - c - gamma * working(h, p);
                    rss += e * e;
                }
                cont_[hh] = {c, gamma, std::max(rss / std::max(k - 2.0, 1.0), 1e-6)};
            }
        } else {
            double n00 = 0.5, n01 = 0.5, n10 = 0.5, n11 = 0.5;
            for (auto [p, n] : pairs) {
                if (p == 0.0) (n == 0.0 ? n00 : n01) += 1;
                else (n == 0.0 ? n10 : n11) += 1;
            }
            bin_[hh].d0 = std::log(n01 / n00);
            bin_[hh].d1 = std::log(n11 / n10) - bin_[hh].d0;
        }
    }

    const Cohort& cohort_;
    ModelSpec spec_;
    PriorSpec priors_;
    McmcSettings settings_;
    Rng rng_;

    std::vector<double> offsets_;
    int raw_ = 0;
    int width_ = 0;

    // intervals (times on the log scale, shifted by t_ref_)
    std::vector<double> log_lo_, log_hi_;
    std::vector<int> delta_;
    double t_ref_ = 0.0;
    double events_ = 0.0;
    double event_log_hi_ = 0.0; // sum over events of shifted log t_hi
    double event_log_t_ = 0.0;  // sum over events of log t_hi
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> features_;
    std::vector<double> eta_, exp_eta_, dlam_, proposal_eta_, proposal_dlam_;
    Vector row_buffer_;

    std::vector<Cell> cells_;
    std::vector<CellInfo> cell_info_;
    std::vector<std::vector<Transition>> transitions_;
    std::vector<bool> sampled_process_;
    std::vector<double> baseline_mean_, baseline_var_;

    // state
    Vector beta_;
    double log_r_ = 0.0;
    double alpha_shift_ = 0.0;
    std::vector<ContinuousProcessParams> cont_;
    std::vector<BinaryProcessParams> bin_;
    std::vector<double> x_;

    detail::AdaptiveBlock beta_block_;
    detail::AdaptiveBlock weibull_block_;
    std::vector<detail::AdaptiveBlock> process_blocks_;
    std::size_t cell_accepts_ = 0;
    std::size_t cell_steps_ = 0;
};

/// Runs one chain on a (design-applied) cohort and returns the retained draws.
inline PosteriorSample run_chain(const Cohort& cohort, const ModelSpec& spec, const PriorSpec& priors,
                                 const McmcSettings& settings) {
    settings.validate();
    AugmentedSampler sampler(cohort, spec, priors, settings);
    return sampler.run();
}

} // namespace subcohort
