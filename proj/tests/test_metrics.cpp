#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "evicem/errors.hpp"
#include "evicem/metrics.hpp"

using namespace evicem::metrics;

namespace {

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double won = 0, total = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            total += 1;
            won += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return won / total;
}

}  // namespace

TEST(RocAuc, KnownValues) {
    const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
    EXPECT_DOUBLE_EQ(roc_auc(s, std::vector<int>{0, 0, 1, 1}), 0.75);
    EXPECT_EQ(roc_auc(s, std::vector<int>{0, 1, 0, 1}), 1.0);
    EXPECT_EQ(roc_auc(s, std::vector<int>{1, 0, 1, 0}), 0.0);
    const std::vector<double> tied = {0.5, 0.5, 0.5};
    EXPECT_EQ(roc_auc(tied, std::vector<int>{1, 0, 1}), 0.5);
}

TEST(RocAuc, SingleClassIsHalf) {
    const std::vector<double> s = {0.2, 0.9};
    EXPECT_EQ(roc_auc(s, std::vector<int>{1, 1}), 0.5);
    EXPECT_EQ(roc_auc(s, std::vector<int>{0, 0}), 0.5);
}

TEST(RocAuc, MatchesBruteForcePairCountWithTies) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> level(0, 6), bit(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(40);
        std::vector<int> y(40);
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = level(rng) / 6.0;
            y[i] = bit(rng);
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_NEAR(roc_auc(s, y), pair_count_auc(s, y), 1e-15);
    }
}

TEST(RocAuc, LengthMismatchThrows) {
    const std::vector<double> s = {0.1};
    EXPECT_THROW(roc_auc(s, std::vector<int>{0, 1}), evicem::DimensionError);
}

TEST(Accuracy, ThresholdsAtOneHalf) {
    const std::vector<double> p = {0.5, 0.49, 0.9, 0.1};
    EXPECT_DOUBLE_EQ(binary_accuracy(p, std::vector<int>{1, 0, 1, 1}), 0.75);
}

TEST(F1, BinaryAndMacro) {
    const std::vector<double> p = {0.9, 0.8, 0.2, 0.6};
    // tp=2 fp=1 fn=1
    EXPECT_DOUBLE_EQ(binary_f1(p, std::vector<int>{1, 1, 1, 0}), 2.0 / 3.0);
    const std::vector<int> pred = {0, 1, 2, 2}, truth = {0, 1, 1, 2};
    // class 0: 1, class 1: 2/3, class 2: 2/3
    EXPECT_DOUBLE_EQ(macro_f1(pred, truth, 3), (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0);
    EXPECT_EQ(f1_for_class(pred, truth, 5), 0.0);
}

TEST(MacroAuc, PerfectProbabilitiesGiveOne) {
    const std::vector<double> probs = {0.8, 0.1, 0.1, 0.1, 0.7, 0.2, 0.2, 0.2, 0.6};
    EXPECT_EQ(macro_ovr_auc(probs, 3, std::vector<int>{0, 1, 2}), 1.0);
}
