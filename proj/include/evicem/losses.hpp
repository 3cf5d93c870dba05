#pragma once

// Variational Beta concept loss, task cross-entropy, the total objective and
// analytic reverse-mode gradients through the whole model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evicem/errors.hpp"
#include "evicem/model.hpp"
#include "evicem/numerics.hpp"

namespace evicem {

namespace detail {

inline void check_evidence(const Evidence& e, const char* fn) {
    if (!std::isfinite(e.alpha) || !std::isfinite(e.beta) || e.alpha < 1.0 || e.beta < 1.0) {
        throw DomainError(std::string(fn) + ": evidence must satisfy alpha, beta >= 1 (got " +
                          std::to_string(e.alpha) + ", " + std::to_string(e.beta) + ")");
    }
}

// KL( Beta(x, 1) || Beta(1, 1) ) = log x + (1 - x)/x.
inline double kl_to_uniform_one_sided(double x) { return std::log(x) + (1.0 - x) / x; }

}  // namespace detail

/// L = psi(a+b) + c [log b + (1-b)/b - psi(a)] + (1-c) [log a + (1-a)/a - psi(b)].
/// Affine in c, so soft labels in [0,1] are accepted. Evaluated as
/// c [D(a, b) + kl(b)] + (1-c) [D(b, a) + kl(a)] with D(x, d) = psi(x+d) - psi(x).
inline double beta_variational_loss(const Evidence& e, double c) {
    detail::check_evidence(e, "beta_variational_loss");
    using numerics::digamma_difference;
    return c * (digamma_difference(e.alpha, e.beta) + detail::kl_to_uniform_one_sided(e.beta)) +
           (1.0 - c) *
               (digamma_difference(e.beta, e.alpha) + detail::kl_to_uniform_one_sided(e.alpha));
}

/// d L / d(alpha, beta). Differentiates the closed form directly; the
/// digamma derivatives are trigamma values from numerics::trigamma, which
/// differentiates the same recurrence + asymptotic route as digamma.
inline std::pair<double, double> beta_variational_loss_grad(const Evidence& e, double c) {
    detail::check_evidence(e, "beta_variational_loss_grad");
    using numerics::trigamma;
    const double t_sum = trigamma(e.alpha + e.beta);
    const double a = e.alpha;
    const double b = e.beta;
    const double d_alpha = t_sum - c * trigamma(a) + (1.0 - c) * (a - 1.0) / (a * a);
    const double d_beta = t_sum + c * (b - 1.0) / (b * b) - (1.0 - c) * trigamma(b);
    return {d_alpha, d_beta};
}

struct BetaLossParts {
    double bayes_risk = 0.0;
    double kl = 0.0;
};

/// Splits the loss for a binary label into the Bayes risk of binary
/// cross-entropy and the KL between the adjusted Beta and the uniform prior.
/// The adjusted evidence keeps only the evidence for the wrong outcome:
/// (1, beta) when c = 1 and (alpha, 1) when c = 0.
inline BetaLossParts beta_loss_decomposed(const Evidence& e, int c) {
    detail::check_evidence(e, "beta_loss_decomposed");
    if (c != 0 && c != 1) throw DomainError("beta_loss_decomposed: label must be 0 or 1");
    BetaLossParts parts;
    parts.bayes_risk = c == 1 ? numerics::digamma_difference(e.alpha, e.beta)
                              : numerics::digamma_difference(e.beta, e.alpha);
    parts.kl = c == 1 ? detail::kl_to_uniform_one_sided(e.beta)
                      : detail::kl_to_uniform_one_sided(e.alpha);
    return parts;
}

/// Adjusted evidence used by the KL term of beta_loss_decomposed.
inline Evidence adjusted_evidence(const Evidence& e, int c) {
    return c == 1 ? Evidence{1.0, e.beta} : Evidence{e.alpha, 1.0};
}

/// Numerically stable softmax cross-entropy.
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) {
        throw DomainError("softmax_cross_entropy: class index " + std::to_string(label) +
                          " out of range");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    return mx + std::log(sum) - logits[label];
}

inline std::vector<double> softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
    for (auto& v : p) v /= sum;
    return p;
}

/// -c log sigmoid(s) - (1-c) log(1 - sigmoid(s)), from the logit.
inline double binary_cross_entropy_logit(double s, double c) {
    const double softplus = s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    return softplus - c * s;
}

/// Which terms of the objective are active. Supervised training uses
/// {task = 1, lambda}; ECBL pretraining uses {task = 0, lambda = 1}.
struct LossWeights {
    double task = 1.0;
    double lambda = 1.0;
};

struct LossBreakdown {
    double total = 0.0;
    double task = 0.0;
    double concepts = 0.0;  // unweighted sum over concepts
};

namespace detail {

inline void check_labels(const ForwardTrace& trace, std::span<const double> labels,
                         std::size_t task_label) {
    require_dims(labels.size() == trace.concepts.size(),
                 "loss: expected " + std::to_string(trace.concepts.size()) + " concept labels");
    if (task_label >= trace.logits.size()) {
        throw DomainError("loss: class index " + std::to_string(task_label) + " out of range");
    }
}

}  // namespace detail

/// Loss of one sample under the trace's mode: task cross-entropy plus
/// lambda * sum_k (Beta loss | BCE on the sigmoid score).
inline LossBreakdown loss_terms(const ForwardTrace& trace, std::span<const double> labels,
                                std::size_t task_label, LossWeights w) {
    detail::check_labels(trace, labels, task_label);
    LossBreakdown out;
    out.task = softmax_cross_entropy(trace.logits, task_label);
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const auto& cs = trace.concepts[k];
        out.concepts += trace.mode == Mode::evidential
                           ? beta_variational_loss(cs.evidence, labels[k])
                           : binary_cross_entropy_logit(cs.score, labels[k]);
    }
    out.total = w.task * out.task + w.lambda * out.concepts;
    return out;
}

/// Cross-entropy + lambda * sum_k L_Beta.
inline double total_loss(const ForwardTrace& trace, std::span<const double> labels,
                         std::size_t task_label, double lambda) {
    if (trace.mode != Mode::evidential) {
        throw DomainError("total_loss: trace was produced in sigmoid_baseline mode");
    }
    return loss_terms(trace, labels, task_label, {1.0, lambda}).total;
}

/// Cross-entropy + lambda * sum_k BCE(sigmoid(s_k), c_k).
inline double sigmoid_baseline_loss(const ForwardTrace& trace, std::span<const double> labels,
                                    std::size_t task_label, double lambda) {
    if (trace.mode != Mode::sigmoid_baseline) {
        throw DomainError("sigmoid_baseline_loss: trace was produced in evidential mode");
    }
    return loss_terms(trace, labels, task_label, {1.0, lambda}).total;
}

/// Reverse-mode gradient of loss_terms(...).total, accumulated into `grads`
/// scaled by `scale` (batch averaging). ReLU subgradient at 0 is 0.
/// Overridden (intervened) concepts treat their mixture weight as a constant.
inline LossBreakdown backward(const ModelParams& params, const ForwardTrace& trace,
                              std::span<const double> labels, std::size_t task_label,
                              LossWeights w, ModelParams& grads, double scale = 1.0) {
    require_dims(!trace.pre0.empty() && !trace.input.empty(),
                 "backward: trace has no cached activations");
    require_dims(grads.values.size() == params.values.size(), "backward: gradient buffer size");
    const LossBreakdown loss = loss_terms(trace, labels, task_label, w);
    const auto& d = params.dims();
    const auto& L = params.layout;

    // Task head.
    std::vector<double> dlogits = softmax(trace.logits);
    dlogits[task_label] -= 1.0;
    for (auto& v : dlogits) v *= w.task * scale;
    std::vector<double> dbottleneck(d.K * d.m, 0.0);
    detail::affine_backward(params.tensor(L.task().w), trace.bottleneck, dlogits,
                            grads.tensor(L.task().w), grads.tensor(L.task().b), dbottleneck);

    std::vector<double> dh(d.h_dim, 0.0);
    std::vector<double> dz(2 * d.m);
    std::vector<double> dpos(d.m);
    std::vector<double> dneg(d.m);
    for (std::size_t k = 0; k < d.K; ++k) {
        const auto& cs = trace.concepts[k];
        const double* dmix = dbottleneck.data() + k * d.m;
        double dweight = 0.0;
        for (std::size_t i = 0; i < d.m; ++i) {
            dpos[i] = cs.weight * dmix[i];
            dneg[i] = (1.0 - cs.weight) * dmix[i];
            dweight += dmix[i] * (cs.pos_embedding[i] - cs.neg_embedding[i]);
        }
        if (cs.overridden) dweight = 0.0;

        double dalpha_pre = 0.0;
        double dbeta_pre = 0.0;
        if (trace.mode == Mode::evidential) {
            const double a = cs.evidence.alpha;
            const double b = cs.evidence.beta;
            const double s2 = (a + b) * (a + b);
            const auto [la, lb] = beta_variational_loss_grad(cs.evidence, labels[k]);
            const double dalpha = dweight * b / s2 + w.lambda * scale * la;
            const double dbeta = -dweight * a / s2 + w.lambda * scale * lb;
            dalpha_pre = cs.alpha_pre > 0.0 ? dalpha : 0.0;
            dbeta_pre = cs.beta_pre > 0.0 ? dbeta : 0.0;
        } else {
            const double sg = detail::sigmoid(cs.score);
            dalpha_pre = dweight * sg * (1.0 - sg) + w.lambda * scale * (sg - labels[k]);
        }

        const auto z = detail::concat(cs.pos_embedding, cs.neg_embedding);
        std::fill(dz.begin(), dz.end(), 0.0);
        const double da[1] = {dalpha_pre};
        const double db[1] = {dbeta_pre};
        detail::affine_backward(params.tensor(L.evidence_alpha().w), z, da,
                                grads.tensor(L.evidence_alpha().w),
                                grads.tensor(L.evidence_alpha().b), dz);
        detail::affine_backward(params.tensor(L.evidence_beta().w), z, db,
                                grads.tensor(L.evidence_beta().w),
                                grads.tensor(L.evidence_beta().b), dz);
        for (std::size_t i = 0; i < d.m; ++i) {
            dpos[i] += dz[i];
            dneg[i] += dz[d.m + i];
        }
        detail::affine_backward(params.tensor(L.concept_pos(k).w), trace.h, dpos,
                                grads.tensor(L.concept_pos(k).w),
                                grads.tensor(L.concept_pos(k).b), dh);
        detail::affine_backward(params.tensor(L.concept_neg(k).w), trace.h, dneg,
                                grads.tensor(L.concept_neg(k).w),
                                grads.tensor(L.concept_neg(k).b), dh);
    }

    // Backbone.
    std::vector<double> dact1(d.hidden, 0.0);
    detail::affine_backward(params.tensor(L.backbone(2).w), trace.act1, dh,
                            grads.tensor(L.backbone(2).w), grads.tensor(L.backbone(2).b), dact1);
    std::vector<double> dpre1(d.hidden);
    for (std::size_t i = 0; i < d.hidden; ++i) dpre1[i] = trace.pre1[i] > 0.0 ? dact1[i] : 0.0;
    std::vector<double> dact0(d.hidden, 0.0);
    detail::affine_backward(params.tensor(L.backbone(1).w), trace.act0, dpre1,
                            grads.tensor(L.backbone(1).w), grads.tensor(L.backbone(1).b), dact0);
    std::vector<double> dpre0(d.hidden);
    for (std::size_t i = 0; i < d.hidden; ++i) dpre0[i] = trace.pre0[i] > 0.0 ? dact0[i] : 0.0;
    detail::affine_backward(params.tensor(L.backbone(0).w), trace.input, dpre0,
                            grads.tensor(L.backbone(0).w), grads.tensor(L.backbone(0).b),
                            std::span<double>{});
    return loss;
}

}  // namespace evicem
