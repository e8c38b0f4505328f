#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace subcohort {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

inline constexpr double kDaysPerYear = 365.25;

/// Raised when input data or a schedule/design violates its invariants.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a CSV or config file cannot be parsed; carries the 1-based line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Raised by the design criterion when the information matrix cannot be inverted.
class SingularInformationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// splitmix64 finalizer; used to derive independent stream seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base) noexcept { return mix_seed(base); }

template <class... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t next, Rest... rest) noexcept {
    return derive_seed(mix_seed(base) ^ mix_seed(next + 0x632be59bd9b4e019ULL), static_cast<std::uint64_t>(rest)...);
}

inline double uniform01(Rng& rng) {
    // open interval (0, 1) so that log(u) is finite
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    return u;
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> norm(0.0, 1.0);
    return norm(rng);
}

} // namespace subcohort
