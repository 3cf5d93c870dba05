#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "evicem/errors.hpp"
#include "evicem/intervention.hpp"
#include "evicem/synth.hpp"
#include "evicem/training.hpp"
#include "test_util.hpp"

using namespace evicem;
using evicem::testing::random_vector;
using evicem::testing::small_dims;

namespace {

struct Trained {
    ModelParams params;
    Dataset test;
};

const Trained& trained_model() {
    static const Trained t = [] {
        SynthSpec spec;
        spec.K = 8;
        spec.num_samples = 2500;
        spec.seed = 5;
        const auto split = split_dataset(generate_synthetic(spec).dataset, 5);
        TrainConfig cfg;
        cfg.epochs = 10;
        cfg.seed = 5;
        return Trained{train(split.train, &split.val, cfg).params, split.test};
    }();
    return t;
}

}  // namespace

TEST(SelectConcept, ArgmaxWithLowestIndexTies) {
    const std::vector<double> u = {0.1, 0.9, 0.3};
    EXPECT_EQ(select_concept(u, {}), 1u);
    EXPECT_EQ(select_concept(u, {1}), 2u);
    const std::vector<double> flat = {0.4, 0.4, 0.4};
    EXPECT_EQ(select_concept(flat, {}), 0u);
    EXPECT_EQ(select_concept(flat, {0}), 1u);
    EXPECT_THROW(select_concept(u, {0, 1, 2}), DomainError);
}

TEST(ApplyIntervention, SetsMixtureToTheChosenEmbedding) {
    const auto p = init_params(small_dims(), 8);
    std::mt19937_64 rng(1);
    const auto x = random_vector(6, rng);
    auto s = start_intervention(p, x);
    apply_intervention(p, s, 0, 1);
    apply_intervention(p, s, 2, 0);
    EXPECT_EQ(s.trace.concepts[0].mixed, s.trace.concepts[0].pos_embedding);
    EXPECT_EQ(s.trace.concepts[2].mixed, s.trace.concepts[2].neg_embedding);
    EXPECT_TRUE(s.trace.concepts[0].overridden);
    EXPECT_FALSE(s.trace.concepts[1].overridden);
    EXPECT_THROW(apply_intervention(p, s, 0, 0), DomainError);
    EXPECT_THROW(apply_intervention(p, s, 9, 0), DomainError);
    EXPECT_THROW(apply_intervention(p, s, 1, 2), DomainError);
}

TEST(ApplyIntervention, OnlyTouchesTheTargetMixture) {
    const auto p = init_params(small_dims(), 12);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_vector(6, rng);
        for (std::size_t k = 0; k < 4; ++k) {
            auto s = start_intervention(p, x);
            const auto before = s.trace;
            apply_intervention(p, s, k, trial % 2);
            for (std::size_t j = 0; j < 4; ++j) {
                if (j == k) continue;
                EXPECT_EQ(s.trace.concepts[j].mixed, before.concepts[j].mixed);
                EXPECT_EQ(s.trace.concepts[j].weight, before.concepts[j].weight);
            }
            EXPECT_EQ(s.trace.concepts[k].evidence.alpha, before.concepts[k].evidence.alpha);
        }
    }
}

TEST(ApplyIntervention, FullInterventionMatchesGroundTruthRecomputation) {
    const auto p = init_params(small_dims(), 13);
    std::mt19937_64 rng(3);
    const auto x = random_vector(6, rng);
    const std::vector<int> truth = {1, 0, 0, 1};
    auto s = start_intervention(p, x);
    for (std::size_t k = 0; k < 4; ++k) apply_intervention(p, s, k, truth[k]);
    std::vector<double> c;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& cs = s.trace.concepts[k];
        const auto& e = truth[k] ? cs.pos_embedding : cs.neg_embedding;
        c.insert(c.end(), e.begin(), e.end());
    }
    EXPECT_EQ(task_forward(p, c), s.logits());
}

TEST(InterventionOrder, CoverageGrowsStrictlyAndIsAPermutation) {
    const auto p = init_params(small_dims(), 14);
    std::mt19937_64 rng(4);
    const auto t = model_forward(p, random_vector(6, rng));
    for (auto policy : {Policy::uncertainty, Policy::random}) {
        const auto order = intervention_order(t, policy, rng);
        std::set<std::size_t> seen;
        for (auto k : order) {
            const auto n = seen.size();
            seen.insert(k);
            EXPECT_EQ(seen.size(), n + 1);
        }
        EXPECT_EQ(seen.size(), 4u);
    }
    const auto u = concept_uncertainties(t);
    const auto order = intervention_order(t, Policy::uncertainty, rng);
    for (std::size_t i = 1; i < order.size(); ++i) EXPECT_GE(u[order[i - 1]], u[order[i]]);
}

TEST(Policy, ParseRoundTrip) {
    EXPECT_EQ(parse_policy("random"), Policy::random);
    EXPECT_EQ(parse_policy(to_string(Policy::uncertainty)), Policy::uncertainty);
    EXPECT_THROW(parse_policy("greedy"), UsageError);
}

TEST(InterventionCurve, EndpointsAgreeAcrossPolicies) {
    const auto& m = trained_model();
    const std::size_t K = m.test.K;
    for (unsigned long long seed : {0ull, 1ull}) {
        const auto u = intervention_curve(m.params, m.test, Policy::uncertainty, K, seed);
        const auto r = intervention_curve(m.params, m.test, Policy::random, K, seed);
        ASSERT_EQ(u.size(), K + 1);
        EXPECT_EQ(u.front().diag_auc, r.front().diag_auc);
        EXPECT_EQ(u.back().diag_auc, r.back().diag_auc);
        for (std::size_t t = 0; t <= K; ++t) EXPECT_EQ(u[t].t, t);
    }
    EXPECT_THROW(intervention_curve(m.params, m.test, Policy::random, K + 1, 0), UsageError);
}

TEST(InterventionCurve, RandomPolicyIsSeeded) {
    const auto& m = trained_model();
    const auto a = intervention_curve(m.params, m.test, Policy::random, 4, 7);
    const auto b = intervention_curve(m.params, m.test, Policy::random, 4, 7);
    for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].diag_auc, b[t].diag_auc);
}

TEST(InterventionCurve, SomeCaseIsCorrectedByOneIntervention) {
    const auto& m = trained_model();
    EXPECT_FALSE(cases_corrected_by_one_intervention(m.params, m.test).empty());
}
