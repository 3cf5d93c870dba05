#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <gtest/gtest.h>

#include "evicem/errors.hpp"
#include "evicem/numerics.hpp"

using namespace evicem;
using namespace evicem::numerics;

namespace {

struct Ref {
    double x;
    double value;
};

// 30-digit mpmath values.
const Ref kDigamma[] = {
    {0.01, -100.5608854578686745},   {0.1, -10.423754940411076795},
    {0.5, -1.9635100260214234794},   {1, -0.57721566490153286061},
    {1.5, 0.036489973978576520559},  {2, 0.42278433509846713939},
    {2.5, 0.70315664064524318723},   {3.7, 1.1671535393615113859},
    {5, 1.5061176684318004727},      {6, 1.7061176684318004727},
    {7.25, 1.9104535268837360284},   {10, 2.2517525890667211076},
    {20, 2.9705239922421490509},     {55.5, 4.0073469585404439122},
    {100, 4.6001618527380874002},    {1000, 6.9072551956488120521},
};

const Ref kTrigamma[] = {
    {0.01, 10001.62121352831322},     {0.1, 101.43329915079275882},
    {0.5, 4.9348022005446793094},     {1, 1.6449340668482264365},
    {1.5, 0.93480220054467930942},    {2, 0.64493406684822643647},
    {2.5, 0.49035775610023486497},    {3.7, 0.3100378576700383191},
    {5, 0.22132295573711532536},      {6, 0.18132295573711532536},
    {7.25, 0.14787923315893216965},   {10, 0.10516633568168574612},
    {20, 0.051270822935203119832},    {55.5, 0.018181317363221761045},
    {100, 0.010050166663333571395},   {1000, 0.0010005001666666333334},
};

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace

TEST(Digamma, MatchesHighPrecisionTable) {
    for (const auto& r : kDigamma) {
        EXPECT_LT(rel_err(digamma(r.x), r.value), 1e-13) << "x=" << r.x;
    }
}

TEST(Digamma, AgreesWithBoostOverAGrid) {
    for (double x = 0.05; x < 200.0; x *= 1.07) {
        EXPECT_LT(rel_err(digamma(x), boost::math::digamma(x)), 1e-13) << "x=" << x;
    }
}

TEST(Digamma, RecurrenceAndKnownValues) {
    EXPECT_DOUBLE_EQ(digamma(1.0), -std::numbers::egamma);
    EXPECT_NEAR(digamma(2.0) - digamma(1.0), 1.0, 1e-15);
    EXPECT_EQ(digamma_difference(1.0, 1.0), 1.0);
    for (double x : {0.3, 1.0, 2.7, 9.0, 41.5}) {
        EXPECT_NEAR(digamma(x + 1.0) - digamma(x), 1.0 / x, 1e-13);
    }
    EXPECT_NEAR(digamma(0.5), -std::numbers::egamma - 2.0 * std::numbers::ln2, 1e-14);
}

TEST(Digamma, RejectsNonPositiveAndNonFinite) {
    EXPECT_THROW(digamma(0.0), DomainError);
    EXPECT_THROW(digamma(-1.5), DomainError);
    EXPECT_THROW(digamma(std::nan("")), DomainError);
    EXPECT_THROW(digamma(INFINITY), DomainError);
}

TEST(Digamma, FloatInstantiation) {
    EXPECT_NEAR(digamma(2.5f), 0.70315664f, 1e-6f);
}

TEST(Trigamma, MatchesHighPrecisionTable) {
    for (const auto& r : kTrigamma) {
        EXPECT_LT(std::abs(trigamma(r.x) - r.value) / r.value, 1e-12) << "x=" << r.x;
    }
}

TEST(Trigamma, AgreesWithBoostAndRecurrence) {
    for (double x = 0.05; x < 200.0; x *= 1.11) {
        EXPECT_LT(std::abs(trigamma(x) - boost::math::trigamma(x)) / trigamma(x), 1e-12);
        EXPECT_NEAR(trigamma(x) - trigamma(x + 1.0), 1.0 / (x * x), 1e-12 / (x * x) + 1e-15);
    }
    EXPECT_NEAR(trigamma(1.0), std::numbers::pi * std::numbers::pi / 6.0, 1e-14);
}

TEST(Trigamma, IsTheDerivativeOfDigamma) {
    for (double x : {0.7, 1.0, 3.3, 12.0}) {
        const double h = 1e-5;
        EXPECT_NEAR((digamma(x + h) - digamma(x - h)) / (2 * h), trigamma(x), 1e-8);
    }
}

TEST(LogGamma, AgreesWithBoost) {
    for (double x = 0.1; x < 300.0; x *= 1.3) {
        EXPECT_LT(rel_err(log_gamma(x), boost::math::lgamma(x)), 1e-13);
    }
    EXPECT_THROW(log_gamma(0.0), DomainError);
}

TEST(LogBeta, SymmetricAndKnownValues) {
    EXPECT_NEAR(log_beta_fn(1.0, 1.0), 0.0, 1e-15);
    EXPECT_NEAR(log_beta_fn(2.0, 3.0), std::log(1.0 / 12.0), 1e-14);
    EXPECT_DOUBLE_EQ(log_beta_fn(2.5, 7.0), log_beta_fn(7.0, 2.5));
}

TEST(GaussLegendre, IntegratesPolynomialsExactly) {
    std::vector<double> x, w;
    gauss_legendre(8, x, w);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    EXPECT_NEAR(wsum, 2.0, 1e-14);
    // Exact through degree 2n - 1 = 15.
    for (int deg = 0; deg <= 15; ++deg) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * std::pow(x[i], deg);
        const double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
        EXPECT_NEAR(acc, exact, 1e-13) << "degree " << deg;
    }
}

TEST(BetaRule, NodesIncreasingInsideUnitIntervalWithPositiveWeights) {
    const auto rule = make_beta_rule();
    ASSERT_EQ(rule.size(), 256u);
    for (std::size_t i = 0; i < rule.size(); ++i) {
        EXPECT_GT(rule.nodes[i], 0.0);
        EXPECT_LT(rule.nodes[i], 1.0);
        EXPECT_GT(rule.weights[i], 0.0);
        if (i) {
            EXPECT_GT(rule.nodes[i], rule.nodes[i - 1]);
        }
    }
    EXPECT_THROW(make_beta_rule(1), DomainError);
}

TEST(BetaRule, DensityIntegratesToOneAndMatchesMoments) {
    const auto rule = make_beta_rule();
    for (double a : {1.0, 1.5, 2.0, 5.0, 20.0}) {
        for (double b : {1.0, 3.0, 10.0}) {
            EXPECT_NEAR(beta_quadrature_expect(a, b, [](double) { return 1.0; }, rule), 1.0, 1e-10);
            EXPECT_NEAR(beta_quadrature_expect(a, b, [](double p) { return p; }, rule), a / (a + b),
                        1e-10);
        }
    }
}

TEST(BetaExpectations, ClosedFormsMatchQuadrature) {
    const auto rule = make_beta_rule();
    for (double a : {1.0, 1.5, 2.0, 5.0, 10.0, 20.0}) {
        for (double b : {1.0, 1.5, 2.0, 5.0, 10.0, 20.0}) {
            const double q_log =
                beta_quadrature_expect(a, b, [](double p) { return std::log(p); }, rule);
            const double q_log1m =
                beta_quadrature_expect(a, b, [](double p) { return std::log1p(-p); }, rule);
            EXPECT_NEAR(beta_expect_log(a, b), q_log, 1e-7) << a << "," << b;
            EXPECT_NEAR(beta_expect_log1m(a, b), q_log1m, 1e-7) << a << "," << b;
        }
    }
}

TEST(BetaKl, MatchesQuadratureOfLogDensityRatio) {
    const auto rule = make_beta_rule();
    const double pairs[][4] = {{2, 3, 1, 1}, {1, 5, 1, 1}, {4, 1.5, 2, 2}, {10, 20, 3, 7}};
    for (const auto& p : pairs) {
        const double a1 = p[0], b1 = p[1], a2 = p[2], b2 = p[3];
        const double q = beta_quadrature_expect(
            a1, b1,
            [&](double x) {
                return (a1 - a2) * std::log(x) + (b1 - b2) * std::log1p(-x) -
                       log_beta_fn(a1, b1) + log_beta_fn(a2, b2);
            },
            rule);
        EXPECT_NEAR(beta_kl(a1, b1, a2, b2), q, 1e-7);
    }
    EXPECT_NEAR(beta_kl(3.0, 4.0, 3.0, 4.0), 0.0, 1e-14);
    EXPECT_NEAR(beta_kl(1.0, 5.0, 1.0, 1.0), std::log(5.0) - 0.8, 1e-13);
}

TEST(FiniteDifference, QuadraticGradientIsExact) {
    auto f = [](std::span<const double> x) { return 3 * x[0] * x[0] + x[0] * x[1] - 2 * x[1]; };
    const std::vector<double> at = {1.5, -2.0};
    const auto g = finite_diff_grad(f, at, 1e-3);
    EXPECT_NEAR(g[0], 6 * 1.5 - 2.0, 1e-9);
    EXPECT_NEAR(g[1], 1.5 - 2.0, 1e-9);
    EXPECT_THROW(finite_diff_grad(f, at, 0.0), DomainError);
}

TEST(DigammaDifference, IntegerOffsetsUseTheRecurrence) {
    EXPECT_EQ(digamma_difference(5.0, 1.0), 0.2);
    EXPECT_EQ(digamma_difference(3.5, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(digamma_difference(1.0, 3.0), 1.0 + 0.5 + 1.0 / 3.0);
    for (double x : {0.2, 1.0, 4.5, 30.0}) {
        for (double d : {1.0, 7.0, 2.5, 100.0}) {
            EXPECT_NEAR(digamma_difference(x, d), boost::math::digamma(x + d) - boost::math::digamma(x),
                        1e-13 * std::max(1.0, std::abs(digamma_difference(x, d))));
        }
    }
    EXPECT_THROW(digamma_difference(1.0, -1.0), DomainError);
    EXPECT_THROW(digamma_difference(0.0, 1.0), DomainError);
}
