#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "evicem/errors.hpp"

namespace evicem {

struct AdamWConfig {
    double lr = 5e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamWState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;

    explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW update with decoupled weight decay:
///   theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
inline void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                       const AdamWConfig& cfg) {
    require_dims(params.size() == grads.size() && state.m.size() == params.size() &&
                     state.v.size() == params.size(),
                 "adamw_step: parameter, gradient and state sizes differ");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] = params[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace evicem
