#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "evicem/errors.hpp"
#include "evicem/losses.hpp"
#include "evicem/numerics.hpp"
#include "test_util.hpp"

using namespace evicem;
using evicem::testing::random_vector;
using evicem::testing::small_dims;

TEST(BetaLoss, ExactSpotValues) {
    EXPECT_EQ(beta_variational_loss({1.0, 1.0}, 1.0), 1.0);
    EXPECT_EQ(beta_variational_loss({5.0, 1.0}, 1.0), 0.2);
}

TEST(BetaLoss, HighPrecisionReferenceValues) {
    // mpmath, 30 digits.
    const double ref[][4] = {{2, 3, 1, 1.5152789553347763581},
                             {2, 3, 0, 0.77648051389327864275},
                             {1.5, 10, 1, 3.7643342485512507768},
                             {20, 1, 0, 5.6434719306976729049},
                             {7, 7, 0.3, 1.8189010470462113395}};
    for (const auto& r : ref) {
        EXPECT_NEAR(beta_variational_loss({r[0], r[1]}, r[2]), r[3], 1e-13);
    }
}

TEST(BetaLoss, LabelSwapSymmetry) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ev(1.0, 30.0);
    for (int i = 0; i < 100; ++i) {
        const double a = ev(rng), b = ev(rng);
        EXPECT_EQ(beta_variational_loss({a, b}, 1.0), beta_variational_loss({b, a}, 0.0));
    }
}

TEST(BetaLoss, MatchesQuadratureBayesRiskPlusClosedFormKl) {
    const auto rule = numerics::make_beta_rule();
    const double grid[] = {1, 1.5, 2, 5, 10, 20};
    for (double a : grid) {
        for (double b : grid) {
            for (int c : {0, 1}) {
                const double risk = numerics::beta_quadrature_expect(
                    a, b,
                    [c](double p) { return c ? -std::log(p) : -std::log1p(-p); }, rule);
                const Evidence adj = adjusted_evidence({a, b}, c);
                const double kl = numerics::beta_kl(adj.alpha, adj.beta, 1.0, 1.0);
                EXPECT_NEAR(beta_variational_loss({a, b}, c), risk + kl, 1e-6)
                    << a << "," << b << "," << c;
            }
        }
    }
}

TEST(BetaLoss, DecompositionIdentity) {
    const double grid[] = {1, 1.5, 2, 5, 10, 20};
    for (double a : grid) {
        for (double b : grid) {
            for (int c : {0, 1}) {
                const auto parts = beta_loss_decomposed({a, b}, c);
                EXPECT_NEAR(parts.bayes_risk + parts.kl, beta_variational_loss({a, b}, c), 1e-12);
            }
        }
    }
}

TEST(BetaLoss, KlExampleAndAdjustedEvidence) {
    const auto parts = beta_loss_decomposed({1.0, 5.0}, 1);
    EXPECT_NEAR(parts.kl, std::log(5.0) - 0.8, 1e-15);
    const auto adj = adjusted_evidence({3.0, 4.0}, 0);
    EXPECT_EQ(adj.alpha, 3.0);
    EXPECT_EQ(adj.beta, 1.0);
}

TEST(BetaLoss, AffineInSoftLabel) {
    const Evidence e{3.5, 2.25};
    const double l0 = beta_variational_loss(e, 0.0), l1 = beta_variational_loss(e, 1.0);
    EXPECT_NEAR(beta_variational_loss(e, 0.3), 0.7 * l0 + 0.3 * l1, 1e-14);
}

TEST(BetaLoss, RejectsInvalidEvidence) {
    EXPECT_THROW(beta_variational_loss({0.5, 2.0}, 1.0), DomainError);
    EXPECT_THROW(beta_variational_loss({2.0, NAN}, 1.0), DomainError);
    EXPECT_THROW(beta_loss_decomposed({2.0, 2.0}, 2), DomainError);
}

TEST(BetaLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ev(1.2, 25.0);
    for (int i = 0; i < 50; ++i) {
        const double a = ev(rng), b = ev(rng), c = (i % 3) / 2.0;
        const auto [ga, gb] = beta_variational_loss_grad({a, b}, c);
        const std::vector<double> at = {a, b};
        const auto fd = numerics::finite_diff_grad(
            [c](std::span<const double> v) { return beta_variational_loss({v[0], v[1]}, c); }, at,
            1e-5);
        EXPECT_NEAR(ga, fd[0], 1e-7 * std::max(1.0, std::abs(ga)));
        EXPECT_NEAR(gb, fd[1], 1e-7 * std::max(1.0, std::abs(gb)));
    }
}

TEST(TaskLoss, CrossEntropyAndSoftmax) {
    const std::vector<double> logits = {1.0, 2.0, 3.0};
    const auto p = softmax(logits);
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
    EXPECT_NEAR(softmax_cross_entropy(logits, 2), -std::log(p[2]), 1e-14);
    const std::vector<double> big = {1000.0, 0.0};
    EXPECT_NEAR(softmax_cross_entropy(big, 0), 0.0, 1e-12);
    EXPECT_THROW(softmax_cross_entropy(logits, 3), DomainError);
}

TEST(TaskLoss, BinaryCrossEntropyFromLogit) {
    EXPECT_NEAR(binary_cross_entropy_logit(0.0, 1.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(binary_cross_entropy_logit(2.0, 1.0), std::log1p(std::exp(-2.0)), 1e-15);
    EXPECT_NEAR(binary_cross_entropy_logit(-800.0, 0.0), 0.0, 1e-12);
    EXPECT_TRUE(std::isfinite(binary_cross_entropy_logit(800.0, 0.0)));
}

TEST(TotalLoss, ModeGuardsAndComposition) {
    const auto p = init_params(small_dims(), 4);
    std::mt19937_64 rng(4);
    const auto x = random_vector(6, rng);
    const std::vector<double> labels = {1, 0, 1, 0.5};
    const auto te = model_forward(p, x, Mode::evidential);
    const auto tb = model_forward(p, x, Mode::sigmoid_baseline);
    double expect = softmax_cross_entropy(te.logits, 2);
    for (std::size_t k = 0; k < 4; ++k) expect += 0.5 * beta_variational_loss(te.concepts[k].evidence, labels[k]);
    EXPECT_NEAR(total_loss(te, labels, 2, 0.5), expect, 1e-12);
    EXPECT_THROW(total_loss(tb, labels, 2, 1.0), DomainError);
    EXPECT_THROW(sigmoid_baseline_loss(te, labels, 2, 1.0), DomainError);
    EXPECT_GT(sigmoid_baseline_loss(tb, labels, 2, 1.0), 0.0);
    const std::vector<double> short_labels = {1, 0};
    EXPECT_THROW(total_loss(te, short_labels, 2, 1.0), DimensionError);
}

TEST(Backward, FullModelGradientMatchesCentralDifferences) {
    for (unsigned seed = 0; seed < 10; ++seed) {
        const auto check = evicem::testing::gradient_check(seed);
        EXPECT_LE(check.max_rel_error, 1e-4) << "seed " << seed << " mode " << to_string(check.mode);
    }
}

TEST(Backward, OverriddenConceptsBlockTheMixtureWeightPath) {
    const auto p = init_params(small_dims(), 12);
    std::mt19937_64 rng(12);
    auto t = model_forward(p, random_vector(6, rng));
    for (auto& cs : t.concepts) {
        cs.weight = 1.0;
        cs.overridden = true;
        cs.mixed = mix_weighted(cs.pos_embedding, cs.neg_embedding, 1.0);
    }
    refresh_downstream(p, t);
    // With lambda = 0 the only route into the evidence heads is the mixture
    // weight, which an override turns into a constant.
    const std::vector<double> labels = {1, 0, 1, 0};
    ModelParams g = p.zeros_like();
    backward(p, t, labels, 0, {1.0, 0.0}, g);
    for (double v : g.tensor(p.layout.evidence_alpha().w)) EXPECT_EQ(v, 0.0);
    for (double v : g.tensor(p.layout.evidence_beta().w)) EXPECT_EQ(v, 0.0);
    double task_norm = 0.0;
    for (double v : g.tensor(p.layout.task().w)) task_norm += v * v;
    EXPECT_GT(task_norm, 0.0);
}

TEST(Backward, RequiresCachedActivations) {
    const auto p = init_params(small_dims(), 1);
    ForwardTrace empty;
    ModelParams g = p.zeros_like();
    const std::vector<double> labels(4, 0.0);
    EXPECT_THROW(backward(p, empty, labels, 0, {}, g), DimensionError);
}

TEST(BetaLoss, SpecExampleOneFive) {
    EXPECT_NEAR(beta_variational_loss({1.0, 5.0}, 1.0), 3.0928, 5e-5);
    const auto rule = numerics::make_beta_rule();
    const double risk = numerics::beta_quadrature_expect(
        3.0, 2.0, [](double p) { return -std::log1p(-p); }, rule);
    EXPECT_NEAR(beta_loss_decomposed({3.0, 2.0}, 0).bayes_risk, risk, 1e-6);
    const auto vacuous = beta_loss_decomposed({1.0, 1.0}, 1);
    EXPECT_EQ(vacuous.bayes_risk, 1.0);
    EXPECT_EQ(vacuous.kl, 0.0);
}

TEST(BetaLoss, DecreasingInCorrectEvidence) {
    double prev = beta_variational_loss({1.0, 1.0}, 1.0);
    for (double a = 1.25; a <= 50.0; a += 0.25) {
        const double l = beta_variational_loss({a, 1.0}, 1.0);
        EXPECT_LT(l, prev) << "alpha=" << a;
        prev = l;
    }
}

TEST(BetaLoss, KlNonNegativeAndZeroOnlyAtVacuousAdjustedEvidence) {
    for (double a = 1.0; a <= 50.0; a += 0.7) {
        for (double b = 1.0; b <= 50.0; b += 0.9) {
            for (int c : {0, 1}) {
                const auto parts = beta_loss_decomposed({a, b}, c);
                const auto adj = adjusted_evidence({a, b}, c);
                EXPECT_GE(parts.kl, 0.0);
                if (adj.alpha == 1.0 && adj.beta == 1.0) EXPECT_EQ(parts.kl, 0.0);
                else EXPECT_GT(parts.kl, 0.0);
                EXPECT_NEAR(parts.bayes_risk + parts.kl, beta_variational_loss({a, b}, c), 1e-12);
            }
        }
    }
}

TEST(BetaLoss, GradientAtTwoThreeMatchesCentralDifference) {
    const auto [ga, gb] = beta_variational_loss_grad({2.0, 3.0}, 1.0);
    const double h = 1e-5;
    EXPECT_NEAR(ga, (beta_variational_loss({2.0 + h, 3.0}, 1.0) -
                     beta_variational_loss({2.0 - h, 3.0}, 1.0)) / (2 * h), 1e-6);
    (void)gb;
}

TEST(TotalLoss, CompositionExamples) {
    ModelDims d{4, 4, 4, 2, 5, 3};
    ModelParams p(d);  // zero weights: uniform logits, Evidence(1,1) everywhere
    const std::vector<double> x = {1, 2, 3, 4};
    const auto t = model_forward(p, x);
    const std::vector<double> ones(5, 1.0);
    EXPECT_NEAR(total_loss(t, ones, 1, 0.0), std::log(3.0), 1e-15);
    EXPECT_NEAR(total_loss(t, ones, 1, 1.0), std::log(3.0) + 5.0, 1e-14);
    const auto tb = model_forward(p, x, Mode::sigmoid_baseline);
    EXPECT_NEAR(sigmoid_baseline_loss(tb, ones, 0, 0.0), std::log(3.0), 1e-15);
    EXPECT_NEAR(sigmoid_baseline_loss(tb, ones, 0, 1.0), std::log(3.0) + 5.0 * std::log(2.0),
                1e-14);
}

TEST(Backward, ConstantLossGivesZeroUpstreamGradient) {
    auto p = init_params(small_dims(), 5);
    for (std::size_t slot : {p.layout.task().w}) {
        for (auto& v : p.tensor(slot)) v = 0.0;
    }
    std::mt19937_64 rng(5);
    const auto t = model_forward(p, random_vector(6, rng));
    const std::vector<double> labels = {1, 0, 1, 1};
    ModelParams g = p.zeros_like();
    backward(p, t, labels, 1, {1.0, 0.0}, g);
    for (std::size_t i = 0; i < p.layout.task_begin(); ++i) EXPECT_EQ(g.values[i], 0.0);
}
