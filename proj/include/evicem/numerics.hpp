#pragma once

// Special functions and Beta-distribution algebra used by the evidential
// concept loss, plus the quadrature / finite-difference oracles that the test
// suites use to check every closed form.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "evicem/errors.hpp"

namespace evicem::numerics {

namespace detail {

// Shift threshold for the asymptotic expansions. At x >= 10 the first
// omitted digamma term is below 1e-16.
inline constexpr double kAsymptoticShift = 10.0;

// Integer offsets up to this size are summed term by term in
// digamma_difference.
inline constexpr double kMaxRecurrenceSteps = 64.0;

template <std::floating_point T>
void check_positive_finite(T x, const char* fn) {
    if (!std::isfinite(x) || !(x > T(0))) {
        throw DomainError(std::string(fn) + ": argument must be finite and > 0, got " +
                          std::to_string(static_cast<double>(x)));
    }
}

}  // namespace detail

/// Digamma function psi(x) for x > 0.
///
/// Uses psi(x) = psi(x+1) - 1/x to shift the argument to x >= 10 and then the
/// 7-term asymptotic series
///   psi(x) ~ ln x - 1/(2x) - sum_n B_2n / (2n x^2n).
/// Error is dominated by rounding in the recurrence sum.
template <std::floating_point T>
T digamma(T x) {
    detail::check_positive_finite(x, "digamma");
    T shift = 0;
    while (x < T(detail::kAsymptoticShift)) {
        shift -= T(1) / x;
        x += T(1);
    }
    const T inv = T(1) / x;
    const T inv2 = inv * inv;
    // Horner form of B_2n/(2n) for n = 1..7.
    const T series =
        inv2 * (T(1) / 12 -
                inv2 * (T(1) / 120 -
                        inv2 * (T(1) / 252 -
                                inv2 * (T(1) / 240 -
                                        inv2 * (T(1) / 132 -
                                                inv2 * (T(691) / 32760 - inv2 * (T(1) / 12)))))));
    return shift + std::log(x) - T(0.5) * inv - series;
}

/// psi(x + d) - psi(x) for x > 0, d >= 0. Small integer offsets use the
/// recurrence sum 1/x + ... + 1/(x + d - 1), so psi(x + 1) - psi(x) is 1/x
/// correctly rounded; other offsets subtract two digamma values.
template <std::floating_point T>
T digamma_difference(T x, T d) {
    detail::check_positive_finite(x, "digamma_difference");
    if (!std::isfinite(d) || d < T(0)) {
        throw DomainError("digamma_difference: offset must be finite and >= 0");
    }
    if (d == std::floor(d) && d <= T(detail::kMaxRecurrenceSteps)) {
        T acc = 0;
        for (T i = 0; i < d; i += T(1)) acc += T(1) / (x + i);
        return acc;
    }
    return digamma(x + d) - digamma(x);
}

/// Trigamma psi'(x) for x > 0, obtained by differentiating the digamma route
/// term by term: the recurrence contributes 1/x^2 per shift and the
/// asymptotic series becomes 1/x + 1/(2x^2) + sum_n B_2n / x^(2n+1).
template <std::floating_point T>
T trigamma(T x) {
    detail::check_positive_finite(x, "trigamma");
    T shift = 0;
    while (x < T(detail::kAsymptoticShift)) {
        shift += T(1) / (x * x);
        x += T(1);
    }
    const T inv = T(1) / x;
    const T inv2 = inv * inv;
    const T series =
        inv * (T(1) +
               inv * (T(0.5) +
                      inv * (T(1) / 6 -
                             inv2 * (T(1) / 30 -
                                     inv2 * (T(1) / 42 -
                                             inv2 * (T(1) / 30 -
                                                     inv2 * (T(5) / 66 -
                                                             inv2 * (T(691) / 2730 -
                                                                     inv2 * (T(7) / 6)))))))));
    return shift + series;
}

/// ln Gamma(x) for x > 0.
template <std::floating_point T>
T log_gamma(T x) {
    detail::check_positive_finite(x, "log_gamma");
    return std::lgamma(x);
}

/// ln B(a, b).
template <std::floating_point T>
T log_beta_fn(T a, T b) {
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

/// E[log p] under Beta(alpha, beta): psi(alpha) - psi(alpha + beta).
template <std::floating_point T>
T beta_expect_log(T alpha, T beta) {
    if (!std::isfinite(alpha) || !std::isfinite(beta)) {
        throw DomainError("beta_expect_log: non-finite evidence");
    }
    return -digamma_difference(alpha, beta);
}

/// E[log(1-p)] under Beta(alpha, beta).
template <std::floating_point T>
T beta_expect_log1m(T alpha, T beta) {
    return beta_expect_log(beta, alpha);
}

/// Closed-form KL( Beta(a1,b1) || Beta(a2,b2) ).
template <std::floating_point T>
T beta_kl(T a1, T b1, T a2, T b2) {
    return log_beta_fn(a2, b2) - log_beta_fn(a1, b1) + (a1 - a2) * digamma(a1) +
           (b1 - b2) * digamma(b1) + (a2 - a1 + b2 - b1) * digamma(a1 + b1);
}

/// Fixed quadrature rule on (0,1). Weights integrate dp, so integrating a
/// normalized density returns 1.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const noexcept { return nodes.size(); }
};

/// n-point Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration
/// on P_n from the Chebyshev initial guesses.
inline void gauss_legendre(std::size_t n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const std::size_t half = (n + 1) / 2;
    for (std::size_t i = 0; i < half; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                            (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                const double jj = static_cast<double>(j);
                p0 = ((2.0 * jj + 1.0) * z * p1 - jj * p2) / (jj + 1.0);
            }
            dp = static_cast<double>(n) * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

/// Gauss-Legendre rule on (0,1) composed with the smoothstep substitution
/// p = t^2 (3 - 2t), dp = 6 t (1 - t) dt. The substitution clusters nodes at
/// both endpoints, which tames the log p and log(1-p) singularities of the
/// Beta expectations at alpha = 1 or beta = 1.
inline QuadratureRule make_beta_rule(std::size_t n = 256) {
    if (n < 2) throw DomainError("make_beta_rule: need at least 2 nodes");
    std::vector<double> x;
    std::vector<double> w;
    gauss_legendre(n, x, w);
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = 0.5 * (x[i] + 1.0);
        const double wt = 0.5 * w[i];
        rule.nodes[i] = t * t * (3.0 - 2.0 * t);
        rule.weights[i] = wt * 6.0 * t * (1.0 - t);
    }
    return rule;
}

/// Quadrature estimate of E_{Beta(alpha,beta)}[f(p)].
inline double beta_quadrature_expect(double alpha, double beta,
                                     const std::function<double(double)>& integrand,
                                     const QuadratureRule& rule) {
    if (rule.size() < 2) throw DomainError("beta_quadrature_expect: rule has < 2 nodes");
    const double log_norm = log_beta_fn(alpha, beta);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const double p = rule.nodes[i];
        const double log_density =
            (alpha - 1.0) * std::log(p) + (beta - 1.0) * std::log1p(-p) - log_norm;
        acc += rule.weights[i] * std::exp(log_density) * integrand(p);
    }
    return acc;
}

/// Central-difference gradient of f at `at`.
template <class F>
std::vector<double> finite_diff_grad(F&& f, std::span<const double> at, double step) {
    if (!(step > 0.0)) throw DomainError("finite_diff_grad: step must be > 0");
    std::vector<double> x(at.begin(), at.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = f(std::span<const double>(x));
        x[i] = saved - step;
        const double down = f(std::span<const double>(x));
        x[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

}  // namespace evicem::numerics
