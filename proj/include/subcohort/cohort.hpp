#pragma once

#include "subcohort/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace subcohort {

enum class CovariateKind { continuous, binary };

inline std::string to_string(CovariateKind kind) {
    return kind == CovariateKind::binary ? "binary" : "continuous";
}

inline CovariateKind covariate_kind_from_string(const std::string& s) {
    if (s == "continuous") return CovariateKind::continuous;
    if (s == "binary") return CovariateKind::binary;
    throw ValidationError("unknown covariate kind '" + s + "'");
}

/**
 * Calendar times of the baseline and re-measurement waves, in years from
 * baseline, plus the end of follow-up. Index k = 0..M are waves and k = M+1
 * is the end of follow-up.
 */
class MeasurementSchedule {
public:
    MeasurementSchedule() = default;

    MeasurementSchedule(std::vector<double> wave_years, double follow_up_end)
        : wave_years_(std::move(wave_years)), follow_up_end_(follow_up_end) {
        if (wave_years_.size() < 2) {
            throw ValidationError("schedule needs a baseline and at least one re-measurement");
        }
        if (wave_years_.front() != 0.0) {
            throw ValidationError("schedule must start at time 0");
        }
        for (std::size_t k = 1; k < wave_years_.size(); ++k) {
            if (!(wave_years_[k] > wave_years_[k - 1])) {
                throw ValidationError("schedule times must be strictly increasing");
            }
        }
        if (!(follow_up_end_ > wave_years_.back())) {
            throw ValidationError("follow-up end must come after the last wave");
        }
    }

    /// Number of re-measurements M.
    int remeasurements() const noexcept { return static_cast<int>(wave_years_.size()) - 1; }
    /// Number of measurement waves M+1 (baseline included).
    int waves() const noexcept { return static_cast<int>(wave_years_.size()); }

    double time_years(int k) const {
        if (k < 0 || k > waves()) throw std::out_of_range("schedule index out of range");
        return k == waves() ? follow_up_end_ : wave_years_[static_cast<std::size_t>(k)];
    }
    double offset_days(int k) const { return time_years(k) * kDaysPerYear; }

    const std::vector<double>& wave_years() const noexcept { return wave_years_; }
    double follow_up_end() const noexcept { return follow_up_end_; }

    bool operator==(const MeasurementSchedule&) const = default;

private:
    std::vector<double> wave_years_;
    double follow_up_end_ = 0.0;
};

/**
 * Raw covariate measurements, individuals x waves x covariates, with an
 * explicit missingness mask. Values are stored uncentered; the centering
 * offsets (means of the observed baseline values) are kept alongside.
 */
class CovariatePanel {
public:
    CovariatePanel() = default;

    CovariatePanel(int individuals, int waves, std::vector<std::string> names,
                   std::vector<CovariateKind> kinds)
        : individuals_(individuals), waves_(waves), names_(std::move(names)), kinds_(std::move(kinds)) {
        if (names_.size() != kinds_.size()) throw ValidationError("covariate names and kinds differ in length");
        if (names_.empty()) throw ValidationError("at least one covariate is required");
        const auto cells = static_cast<std::size_t>(individuals_) * waves_ * covariates();
        values_.assign(cells, std::numeric_limits<double>::quiet_NaN());
        missing_.assign(cells, 1);
        offsets_.assign(names_.size(), 0.0);
    }

    int individuals() const noexcept { return individuals_; }
    int waves() const noexcept { return waves_; }
    int covariates() const noexcept { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<CovariateKind>& kinds() const noexcept { return kinds_; }
    CovariateKind kind(int h) const { return kinds_.at(static_cast<std::size_t>(h)); }

    std::size_t index(int j, int m, int h) const noexcept {
        return (static_cast<std::size_t>(j) * waves_ + m) * covariates() + h;
    }

    bool is_missing(int j, int m, int h) const { return missing_[index(j, m, h)] != 0; }
    double value(int j, int m, int h) const { return values_[index(j, m, h)]; }

    void set(int j, int m, int h, double v) {
        if (!std::isfinite(v)) throw ValidationError("covariate values must be finite");
        if (kind(h) == CovariateKind::binary && v != 0.0 && v != 1.0) {
            throw ValidationError("binary covariate '" + names_[static_cast<std::size_t>(h)] + "' must be 0 or 1");
        }
        values_[index(j, m, h)] = v;
        missing_[index(j, m, h)] = 0;
    }

    void set_missing(int j, int m, int h) {
        values_[index(j, m, h)] = std::numeric_limits<double>::quiet_NaN();
        missing_[index(j, m, h)] = 1;
    }

    const std::vector<double>& values() const noexcept { return values_; }
    const std::vector<std::uint8_t>& missing_mask() const noexcept { return missing_; }

    const std::vector<double>& centering_offsets() const noexcept { return offsets_; }

    /// Recomputes offsets as the means of observed baseline values (0 when none observed).
    void recenter() {
        for (int h = 0; h < covariates(); ++h) {
            double sum = 0.0;
            int count = 0;
            for (int j = 0; j < individuals_; ++j) {
                if (!is_missing(j, 0, h)) {
                    sum += value(j, 0, h);
                    ++count;
                }
            }
            offsets_[static_cast<std::size_t>(h)] = count > 0 ? sum / count : 0.0;
        }
    }

    void set_offsets(std::vector<double> offsets) {
        if (offsets.size() != names_.size()) throw ValidationError("offset vector has wrong length");
        for (double o : offsets) {
            if (!std::isfinite(o)) throw ValidationError("centering offsets must be finite");
        }
        offsets_ = std::move(offsets);
    }

    bool same_cells(const CovariatePanel& other) const {
        if (missing_ != other.missing_ || names_ != other.names_ || kinds_ != other.kinds_) return false;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!missing_[i] && values_[i] != other.values_[i]) return false;
        }
        return true;
    }

private:
    int individuals_ = 0;
    int waves_ = 0;
    std::vector<std::string> names_;
    std::vector<CovariateKind> kinds_;
    std::vector<double> values_;
    std::vector<std::uint8_t> missing_;
    std::vector<double> offsets_;
};

/// One piece of the piecewise survival record: age interval (t_lo, t_hi] during wave-interval m.
struct IntervalRecord {
    int individual = 0;
    int wave = 0;
    double t_lo = 0.0;
    double t_hi = 0.0;
    int delta = 0;
};

struct SurvivalHistory {
    double baseline_age = 0.0; // days
    double exit_age = 0.0;     // days; event or censoring age
    int event = 0;
};

/**
 * A cohort: individuals, their covariate panel and survival histories under a
 * measurement schedule. Follow-up may be cut at an earlier wave (horizon) to
 * represent the information available just before a re-measurement.
 *
 * Ages are in days. An event exactly at a wave time belongs to the interval
 * ending there.
 */
class Cohort {
public:
    Cohort() = default;

    Cohort(MeasurementSchedule schedule, std::vector<std::string> ids, std::vector<SurvivalHistory> histories,
           CovariatePanel panel)
        : schedule_(std::move(schedule)), ids_(std::move(ids)), histories_(std::move(histories)),
          panel_(std::move(panel)) {
        horizon_ = schedule_.waves();
        validate();
        build_records();
    }

    const MeasurementSchedule& schedule() const noexcept { return schedule_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::string& id(int j) const { return ids_.at(static_cast<std::size_t>(j)); }
    const CovariatePanel& panel() const noexcept { return panel_; }
    const SurvivalHistory& history(int j) const { return histories_.at(static_cast<std::size_t>(j)); }
    const std::vector<SurvivalHistory>& histories() const noexcept { return histories_; }

    int size() const noexcept { return static_cast<int>(ids_.size()); }
    int covariates() const noexcept { return panel_.covariates(); }

    /// Follow-up ends at schedule index horizon_wave() (M+1 for the complete follow-up).
    int horizon_wave() const noexcept { return horizon_; }

    /// Age in days of individual j at schedule index k (0..M+1).
    double age_at(int j, int k) const { return history(j).baseline_age + schedule_.offset_days(k); }

    const std::vector<IntervalRecord>& intervals() const noexcept { return records_; }

    /// Interval records of individual j, ordered by wave: records()[m] covers wave-interval m.
    std::span<const IntervalRecord> records(int j) const {
        const auto b = record_begin_[static_cast<std::size_t>(j)];
        const auto e = record_begin_[static_cast<std::size_t>(j) + 1];
        return {records_.data() + b, e - b};
    }
    std::size_t record_offset(int j) const { return record_begin_[static_cast<std::size_t>(j)]; }

    /// m'_j: the last wave at which j was alive and under follow-up.
    int last_alive_wave(int j) const { return static_cast<int>(records(j).size()) - 1; }

    bool at_risk(int j, int m) const {
        if (m < horizon_) return static_cast<int>(records(j).size()) > m;
        // at the horizon: alive and still followed at the cut
        const auto& h = history(j);
        return !h.event && h.exit_age >= age_at(j, m);
    }

    /// Cohort as seen just before wave `wave`: survival cut at tau_wave, covariates of
    /// waves >= `wave` dropped.
    Cohort truncated(int wave) const {
        if (wave < 1 || wave > schedule_.waves()) throw std::out_of_range("truncation wave out of range");
        Cohort out = *this;
        out.horizon_ = std::min(wave, horizon_);
        for (int j = 0; j < size(); ++j) {
            auto& h = out.histories_[static_cast<std::size_t>(j)];
            const double cut = age_at(j, out.horizon_);
            if (h.exit_age > cut) {
                h.exit_age = cut;
                h.event = 0;
            }
            for (int m = out.horizon_; m < panel_.waves(); ++m) {
                for (int c = 0; c < covariates(); ++c) out.panel_.set_missing(j, m, c);
            }
        }
        out.build_records();
        return out;
    }

    /// The listed individuals, in the given order, with the same follow-up horizon.
    Cohort subset(const std::vector<int>& rows) const {
        std::vector<std::string> ids;
        std::vector<SurvivalHistory> histories;
        CovariatePanel panel(static_cast<int>(rows.size()), panel_.waves(), panel_.names(), panel_.kinds());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const int j = rows[r];
            ids.push_back(id(j));
            histories.push_back(history(j));
            for (int m = 0; m < panel_.waves(); ++m) {
                for (int c = 0; c < covariates(); ++c) {
                    if (panel_.is_missing(j, m, c)) {
                        panel.set_missing(static_cast<int>(r), m, c);
                    } else {
                        panel.set(static_cast<int>(r), m, c, panel_.value(j, m, c));
                    }
                }
            }
        }
        panel.set_offsets(panel_.centering_offsets());
        Cohort out = *this;
        out.ids_ = std::move(ids);
        out.histories_ = std::move(histories);
        out.panel_ = std::move(panel);
        out.build_records();
        return out;
    }

    /// Same individuals and follow-up with a replacement panel (shape must match).
    Cohort with_panel(CovariatePanel panel) const {
        if (panel.individuals() != panel_.individuals() || panel.waves() != panel_.waves() ||
            panel.covariates() != panel_.covariates()) {
            throw ValidationError("replacement panel has a different shape");
        }
        Cohort out = *this;
        out.panel_ = std::move(panel);
        return out;
    }

private:
    void validate() const {
        if (histories_.size() != ids_.size()) throw ValidationError("ids and histories differ in length");
        if (panel_.individuals() != size()) throw ValidationError("panel rows do not match cohort size");
        if (panel_.waves() != schedule_.waves()) throw ValidationError("panel waves do not match schedule");
        for (int j = 0; j < size(); ++j) {
            const auto& h = history(j);
            if (!std::isfinite(h.baseline_age) || h.baseline_age <= 0.0) {
                throw ValidationError("individual " + id(j) + ": baseline age must be positive");
            }
            if (!(h.exit_age > h.baseline_age)) {
                throw ValidationError("individual " + id(j) + ": event or censoring before baseline");
            }
            if (h.event != 0 && h.event != 1) throw ValidationError("individual " + id(j) + ": event must be 0/1");
            if (h.exit_age > age_at(j, schedule_.waves()) * (1.0 + 1e-15)) {
                throw ValidationError("individual " + id(j) + ": exit after end of follow-up");
            }
        }
    }

    void build_records() {
        records_.clear();
        record_begin_.assign(ids_.size() + 1, 0);
        for (int j = 0; j < size(); ++j) {
            record_begin_[static_cast<std::size_t>(j)] = records_.size();
            const auto& h = history(j);
            for (int m = 0; m < horizon_; ++m) {
                const double lo = age_at(j, m);
                if (h.exit_age <= lo) break;
                const double hi = age_at(j, m + 1);
                if (h.exit_age <= hi) {
                    records_.push_back({j, m, lo, h.exit_age, h.event});
                    break;
                }
                records_.push_back({j, m, lo, hi, 0});
            }
        }
        record_begin_.back() = records_.size();
    }

    MeasurementSchedule schedule_;
    std::vector<std::string> ids_;
    std::vector<SurvivalHistory> histories_;
    CovariatePanel panel_;
    int horizon_ = 0;
    std::vector<IntervalRecord> records_;
    std::vector<std::size_t> record_begin_;
};

/// Individuals under follow-up (no event, no censoring) at wave m.
inline std::vector<int> at_risk(const Cohort& cohort, int wave) {
    if (wave < 0 || wave > cohort.horizon_wave()) throw std::out_of_range("wave out of range");
    std::vector<int> out;
    for (int j = 0; j < cohort.size(); ++j) {
        if (cohort.at_risk(j, wave)) out.push_back(j);
    }
    return out;
}

/**
 * Measurement design: xi(j, m) = 1 when individual j is measured at wave m.
 * column_budgets()[m] is n_m; the baseline budget is the cohort size.
 */
class Design {
public:
    Design() = default;
    Design(int individuals, int waves)
        : individuals_(individuals), waves_(waves),
          xi_(static_cast<std::size_t>(individuals) * waves, 0), budgets_(static_cast<std::size_t>(waves), 0) {}

    /// Baseline wave measured for everyone, nothing else yet.
    static Design baseline(const Cohort& cohort) {
        Design d(cohort.size(), cohort.schedule().waves());
        for (int j = 0; j < cohort.size(); ++j) d.set(j, 0, true);
        d.budgets_[0] = cohort.size();
        return d;
    }

    /// Everyone at risk at every wave.
    static Design full(const Cohort& cohort) {
        Design d(cohort.size(), cohort.schedule().waves());
        for (int m = 0; m < d.waves_; ++m) {
            int count = 0;
            for (int j = 0; j < cohort.size(); ++j) {
                if (cohort.at_risk(j, m)) {
                    d.set(j, m, true);
                    ++count;
                }
            }
            d.budgets_[static_cast<std::size_t>(m)] = m == 0 ? cohort.size() : count;
        }
        return d;
    }

    int individuals() const noexcept { return individuals_; }
    int waves() const noexcept { return waves_; }

    bool operator()(int j, int m) const { return xi_[index(j, m)] != 0; }
    void set(int j, int m, bool on) { xi_[index(j, m)] = on ? 1 : 0; }

    int column_sum(int m) const {
        int s = 0;
        for (int j = 0; j < individuals_; ++j) s += (*this)(j, m) ? 1 : 0;
        return s;
    }

    const std::vector<int>& column_budgets() const noexcept { return budgets_; }
    void set_budget(int m, int n) { budgets_.at(static_cast<std::size_t>(m)) = n; }

    /// Checks xi against the cohort: measured individuals must be at risk, column sums within budget.
    void validate(const Cohort& cohort) const {
        if (individuals_ != cohort.size() || waves_ != cohort.schedule().waves()) {
            throw ValidationError("design shape does not match cohort");
        }
        for (int m = 0; m < waves_; ++m) {
            for (int j = 0; j < individuals_; ++j) {
                if ((*this)(j, m) && !cohort.at_risk(j, m)) {
                    throw ValidationError("design selects individual " + cohort.id(j) + " at wave " +
                                          std::to_string(m) + " where it is not at risk");
                }
            }
            if (m > 0 && column_sum(m) > budgets_[static_cast<std::size_t>(m)]) {
                throw ValidationError("design column " + std::to_string(m) + " exceeds its budget");
            }
        }
    }

    bool operator==(const Design&) const = default;

private:
    std::size_t index(int j, int m) const {
        if (j < 0 || j >= individuals_ || m < 0 || m >= waves_) throw std::out_of_range("design index out of range");
        return static_cast<std::size_t>(j) * waves_ + m;
    }

    int individuals_ = 0;
    int waves_ = 0;
    std::vector<std::uint8_t> xi_;
    std::vector<int> budgets_;
};

/// Flags covariates as missing wherever the design did not measure; survival is untouched.
inline Cohort apply_design(const Cohort& cohort, const Design& design) {
    if (design.individuals() != cohort.size() || design.waves() != cohort.schedule().waves()) {
        throw ValidationError("design shape does not match cohort");
    }
    CovariatePanel panel = cohort.panel();
    for (int j = 0; j < cohort.size(); ++j) {
        for (int m = 0; m < design.waves(); ++m) {
            if (design(j, m)) continue;
            for (int h = 0; h < panel.covariates(); ++h) panel.set_missing(j, m, h);
        }
    }
    return cohort.with_panel(std::move(panel));
}

} // namespace subcohort
