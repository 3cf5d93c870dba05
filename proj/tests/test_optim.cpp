#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "evicem/errors.hpp"
#include "evicem/optim.hpp"

using namespace evicem;

TEST(AdamW, ZeroGradientAppliesOnlyDecay) {
    std::vector<double> p = {1.0};
    const std::vector<double> g = {0.0};
    AdamWState s(1);
    adamw_step(p, g, s, {.lr = 0.1, .weight_decay = 0.01});
    EXPECT_NEAR(p[0], 0.999, 1e-15);
}

TEST(AdamW, FirstStepWithoutDecayMovesByLearningRate) {
    for (double g0 : {3.0, -0.02, 1e-3, -250.0}) {
        std::vector<double> p = {0.5};
        const std::vector<double> g = {g0};
        AdamWState s(1);
        adamw_step(p, g, s, {.lr = 0.01, .weight_decay = 0.0});
        EXPECT_NEAR(p[0] - 0.5, -0.01 * std::copysign(1.0, g0), 1e-6) << g0;
    }
}

TEST(AdamW, TwoStepsMatchHandUnrolledReference) {
    const double lr = 0.05, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.7;
    std::vector<double> p = {2.0};
    const std::vector<double> grad = {g};
    AdamWState s(1);
    const AdamWConfig cfg{lr, wd, b1, b2, eps};
    adamw_step(p, grad, s, cfg);
    adamw_step(p, grad, s, cfg);

    double theta = 2.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        theta = theta - lr * wd * theta - lr * mh / (std::sqrt(vh) + eps);
    }
    EXPECT_NEAR(p[0], theta, 1e-14);
    EXPECT_EQ(s.step, 2);
}

TEST(AdamW, SizeMismatchThrows) {
    std::vector<double> p(3, 0.0);
    const std::vector<double> g(2, 0.0);
    AdamWState s(3);
    EXPECT_THROW(adamw_step(p, g, s, {}), DimensionError);
}
