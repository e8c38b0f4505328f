#pragma once

#include "subcohort/cohort.hpp"
#include "subcohort/covariate_process.hpp"
#include "subcohort/mcmc.hpp"
#include "subcohort/model.hpp"
#include "subcohort/weibull.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace subcohort {

/// Symmetric (H+2)x(H+2) information matrix in (beta_1..beta_H, a, b) order.
class InformationMatrix {
public:
    InformationMatrix() = default;
    explicit InformationMatrix(int dim) : m_(Matrix::Zero(dim, dim)) {}
    explicit InformationMatrix(Matrix m) : m_(std::move(m)) {
        if (m_.rows() != m_.cols()) throw std::invalid_argument("information matrix must be square");
        const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
        if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw std::invalid_argument("information matrix must be symmetric");
        }
        m_ = 0.5 * (m_ + m_.transpose());
    }

    int dim() const noexcept { return static_cast<int>(m_.rows()); }
    const Matrix& matrix() const noexcept { return m_; }
    Matrix& mutable_matrix() noexcept { return m_; }

    InformationMatrix& operator+=(const InformationMatrix& other) {
        if (other.dim() != dim()) throw std::invalid_argument("information matrices differ in shape");
        m_ += other.m_;
        return *this;
    }

    friend InformationMatrix operator+(InformationMatrix a, const InformationMatrix& b) { return a += b; }

private:
    Matrix m_;
};

/// J: negative Hessian of the total log-likelihood over every observed interval.
inline InformationMatrix observed_info(const Cohort& cohort, const std::vector<double>& realization,
                                       const SurvivalParams& params, const ModelSpec& spec) {
    if (realization.size() != cohort.panel().values().size()) {
        throw std::invalid_argument("realization does not match the panel shape");
    }
    if (params.covariates() != spec.width()) throw std::invalid_argument("beta does not match the feature width");
    const auto offsets = model_offsets(cohort.panel(), spec);
    InformationMatrix info(params.dimension());
    Vector x(spec.width());
    for (const auto& rec : cohort.intervals()) {
        features_at(cohort.panel(), realization, rec.individual, rec.wave, offsets, spec.features, x);
        accumulate_neg_hessian(rec.t_lo, rec.t_hi, rec.delta, x, params, info.mutable_matrix());
    }
    return info;
}

/// Parameters of one prior draw needed to simulate a candidate's next interval.
struct DrawModel {
    SurvivalParams theta;
    std::vector<ContinuousProcessParams> continuous; // centered scale
    std::vector<BinaryProcessParams> binary;
    std::vector<CovariateKind> kinds;
    std::vector<double> offsets;
    FeatureMap features;

    static DrawModel from_draw(const PosteriorDraw& d, const Cohort& cohort, const ModelSpec& spec) {
        return {d.survival, d.continuous, d.binary, cohort.panel().kinds(), model_offsets(cohort.panel(), spec),
                spec.features};
    }
};

/// A candidate for measurement at wave m: previous raw covariates and the interval (t_lo, horizon].
struct CandidateState {
    std::vector<double> previous;
    double t_lo = 0.0;
    double horizon = 0.0;
};

inline CandidateState candidate_state(const Cohort& cohort, const std::vector<double>& realization, int j, int wave) {
    if (wave < 1 || wave >= cohort.schedule().waves() + 1 || !cohort.at_risk(j, wave)) {
        throw std::invalid_argument("individual " + cohort.id(j) + " is not at risk at wave " + std::to_string(wave));
    }
    CandidateState s;
    const auto& panel = cohort.panel();
    for (int h = 0; h < panel.covariates(); ++h) {
        const double v = realization[panel.index(j, wave - 1, h)];
        if (std::isnan(v)) throw std::invalid_argument("previous covariate of candidate " + cohort.id(j) + " is unfilled");
        s.previous.push_back(v);
    }
    s.t_lo = cohort.age_at(j, wave);
    s.horizon = cohort.age_at(j, wave + 1);
    return s;
}

struct CandidateOutcome {
    std::vector<double> covariates; // raw X_m
    SurvivalDraw survival;
};

/// Draws (X_m, Y_{m+1}) for one candidate under one prior draw.
inline CandidateOutcome simulate_candidate_outcome(const CandidateState& s, const DrawModel& d, Rng& rng) {
    CandidateOutcome out;
    const auto H = s.previous.size();
    out.covariates.resize(H);
    double centered[64];
    if (H > 64) throw std::invalid_argument("too many covariates");
    for (std::size_t h = 0; h < H; ++h) {
        double v = 0.0;
        if (d.kinds[h] == CovariateKind::binary) {
            v = simulate_next_binary(s.previous[h], d.binary[h], rng);
        } else {
            v = simulate_next_continuous(s.previous[h] - d.offsets[h], d.continuous[h], rng) + d.offsets[h];
        }
        out.covariates[h] = v;
        centered[h] = v - d.offsets[h];
    }
    Vector x(d.features.width());
    d.features.expand_into(std::span<const double>(centered, H), x);
    out.survival = sample_interval_survival(s.t_lo, x, d.theta, s.horizon, rng);
    return out;
}

/**
 * Monte Carlo expected information of the candidate's next interval: average of
 * the negative interval Hessian over `mc_reps` simulated (X_m, Y_{m+1}).
 */
inline InformationMatrix expected_candidate_info(const CandidateState& s, const DrawModel& d, int mc_reps, Rng& rng) {
    if (mc_reps < 1) throw std::invalid_argument("mc_reps must be at least 1");
    InformationMatrix info(d.theta.dimension());
    if (!(s.horizon > s.t_lo)) return info;
    const double w = 1.0 / mc_reps;
    Vector x(d.features.width());
    double centered[64];
    for (int r = 0; r < mc_reps; ++r) {
        const auto outcome = simulate_candidate_outcome(s, d, rng);
        for (std::size_t h = 0; h < outcome.covariates.size(); ++h) centered[h] = outcome.covariates[h] - d.offsets[h];
        d.features.expand_into(std::span<const double>(centered, outcome.covariates.size()), x);
        accumulate_neg_hessian(s.t_lo, outcome.survival.age, outcome.survival.delta, x, d.theta, info.mutable_matrix(), w);
    }
    return info;
}

inline InformationMatrix expected_candidate_info(const Cohort& cohort, int j, int wave, const PosteriorSample& sample,
                                                 std::size_t draw, const ModelSpec& spec, int mc_reps, Rng& rng) {
    const auto realization = sample.realization(cohort, draw);
    const auto state = candidate_state(cohort, realization, j, wave);
    return expected_candidate_info(state, DrawModel::from_draw(sample.draws.at(draw), cohort, spec), mc_reps, rng);
}

/// Psi = observed + sum of the selected candidates' expected information.
inline InformationMatrix assemble_psi(const InformationMatrix& observed, const std::vector<InformationMatrix>& selected) {
    InformationMatrix psi = observed;
    for (const auto& e : selected) psi += e;
    return psi;
}

/**
 * det of the HxH upper-left block of psi^-1, from one LDL^T factorization of
 * the diagonally equilibrated matrix and H right-hand sides.
 */
inline double d_beta_value(const Matrix& psi, int H) {
    const auto n = psi.rows();
    if (psi.cols() != n || H < 1 || H > n) throw std::invalid_argument("d_beta_value: bad dimensions");
    Vector scale(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = psi(i, i);
        if (!(d > 0.0) || !std::isfinite(d)) {
            throw SingularInformationError("information matrix has a non-positive diagonal entry");
        }
        scale(i) = 1.0 / std::sqrt(d);
    }
    const Matrix s = scale.asDiagonal() * psi * scale.asDiagonal();
    Eigen::LDLT<Matrix> ldlt(s);
    if (ldlt.info() != Eigen::Success) throw SingularInformationError("information matrix factorization failed");
    const Vector pivots = ldlt.vectorD();
    if (!(pivots.cwiseAbs().minCoeff() > 1e-14 * std::max(1.0, pivots.cwiseAbs().maxCoeff()))) {
        throw SingularInformationError("information matrix is singular");
    }
    const Matrix cols = ldlt.solve(Matrix::Identity(n, H));
    double det = cols.topRows(H).determinant();
    for (int i = 0; i < H; ++i) det *= scale(i) * scale(i);
    if (!(det > 0.0) || !std::isfinite(det)) {
        throw SingularInformationError("information matrix is not positive definite in the beta block");
    }
    return det;
}

inline double d_beta_value(const InformationMatrix& psi, int H) { return d_beta_value(psi.matrix(), H); }

/// -(1/q) sum_l D_beta(Psi_l) over per-draw mixed information matrices.
inline double utility(const std::vector<InformationMatrix>& psi_per_draw, int H) {
    if (psi_per_draw.empty()) throw std::invalid_argument("utility needs at least one draw");
    double sum = 0.0;
    for (std::size_t l = 0; l < psi_per_draw.size(); ++l) {
        try {
            sum += d_beta_value(psi_per_draw[l], H);
        } catch (const SingularInformationError& e) {
            throw SingularInformationError(std::string(e.what()) + " (prior draw " + std::to_string(l) + ")");
        }
    }
    return -sum / static_cast<double>(psi_per_draw.size());
}

} // namespace subcohort
