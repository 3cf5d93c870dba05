#pragma once

// Evidential concept embedding model: MLP backbone, per-concept positive and
// negative embedding heads, shared evidence heads, evidence-weighted concept
// mixtures and an affine task head.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evicem/errors.hpp"

namespace evicem {

/// Positive / negative evidence of one concept. Both are >= 1 when produced
/// by the evidence heads.
struct Evidence {
    double alpha = 1.0;
    double beta = 1.0;

    double strength() const noexcept { return alpha + beta; }
    double probability() const noexcept { return alpha / (alpha + beta); }
    double uncertainty() const noexcept { return 2.0 / (alpha + beta); }
};

/// Subjective-logic binomial opinion.
struct BinomialOpinion {
    double belief = 0.0;
    double disbelief = 0.0;
    double uncertainty = 1.0;
    double base_rate = 0.5;

    double projected_probability() const noexcept { return belief + base_rate * uncertainty; }
};

inline BinomialOpinion opinion_from_evidence(const Evidence& e, double base_rate = 0.5) {
    if (!(base_rate >= 0.0 && base_rate <= 1.0)) {
        throw DomainError("opinion_from_evidence: base rate must lie in [0,1]");
    }
    const double s = e.strength();
    return BinomialOpinion{(e.alpha - 1.0) / s, (e.beta - 1.0) / s, 2.0 / s, base_rate};
}

enum class Mode { evidential, sigmoid_baseline };

inline const char* to_string(Mode mode) {
    return mode == Mode::evidential ? "evidential" : "sigmoid_baseline";
}

inline Mode parse_mode(const std::string& s) {
    if (s == "evidential" || s == "evi") return Mode::evidential;
    if (s == "sigmoid_baseline" || s == "sigmoid") return Mode::sigmoid_baseline;
    throw UsageError("unknown mode '" + s + "' (expected evidential | sigmoid_baseline)");
}

struct ModelDims {
    std::size_t feature_dim = 32;
    std::size_t hidden = 64;
    std::size_t h_dim = 64;
    std::size_t m = 16;
    std::size_t K = 8;
    std::size_t num_classes = 3;

    bool operator==(const ModelDims&) const = default;
};

/// One named tensor inside the flat parameter buffer. Matrices are row-major
/// (rows = outputs, cols = inputs); vectors have cols == 1.
struct TensorSlot {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;

    std::size_t size() const noexcept { return rows * cols; }
};

/// Offsets of every tensor in the flat buffer. Laid out in the order
/// backbone, concept heads (k = 0..K-1, pos then neg), evidence heads, task head.
class ParamLayout {
public:
    struct Affine {
        std::size_t w = 0;  // index into slots()
        std::size_t b = 0;
    };

    ParamLayout() = default;

    explicit ParamLayout(const ModelDims& dims) : dims_(dims) {
        backbone_[0] = add_affine("backbone.0", dims.hidden, dims.feature_dim);
        backbone_[1] = add_affine("backbone.1", dims.hidden, dims.hidden);
        backbone_[2] = add_affine("backbone.2", dims.h_dim, dims.hidden);
        pos_.reserve(dims.K);
        neg_.reserve(dims.K);
        for (std::size_t k = 0; k < dims.K; ++k) {
            pos_.push_back(add_affine("concept." + std::to_string(k) + ".pos", dims.m, dims.h_dim));
            neg_.push_back(add_affine("concept." + std::to_string(k) + ".neg", dims.m, dims.h_dim));
        }
        alpha_ = add_affine("evidence.alpha", 1, 2 * dims.m);
        beta_ = add_affine("evidence.beta", 1, 2 * dims.m);
        task_ = add_affine("task", dims.num_classes, dims.K * dims.m);
    }

    const ModelDims& dims() const noexcept { return dims_; }
    std::size_t total_size() const noexcept { return total_; }
    const std::vector<TensorSlot>& slots() const noexcept { return slots_; }

    const Affine& backbone(std::size_t layer) const { return backbone_.at(layer); }
    const Affine& concept_pos(std::size_t k) const { return pos_.at(k); }
    const Affine& concept_neg(std::size_t k) const { return neg_.at(k); }
    const Affine& evidence_alpha() const noexcept { return alpha_; }
    const Affine& evidence_beta() const noexcept { return beta_; }
    const Affine& task() const noexcept { return task_; }

    /// Range of the flat buffer holding the task head (weights then bias).
    std::size_t task_begin() const { return slots_[task_.w].offset; }
    std::size_t task_end() const { return slots_[task_.b].offset + slots_[task_.b].size(); }

private:
    Affine add_affine(const std::string& name, std::size_t out, std::size_t in) {
        Affine a;
        a.w = add(name + ".weight", out, in);
        a.b = add(name + ".bias", out, 1);
        return a;
    }

    std::size_t add(const std::string& name, std::size_t rows, std::size_t cols) {
        slots_.push_back(TensorSlot{name, rows, cols, total_});
        total_ += rows * cols;
        return slots_.size() - 1;
    }

    ModelDims dims_{};
    std::vector<TensorSlot> slots_;
    std::size_t total_ = 0;
    std::array<Affine, 3> backbone_{};
    std::vector<Affine> pos_;
    std::vector<Affine> neg_;
    Affine alpha_;
    Affine beta_;
    Affine task_;
};

/// All learnable weights in one contiguous buffer. Gradients use the same type.
struct ModelParams {
    ParamLayout layout;
    std::vector<double> values;

    ModelParams() = default;
    explicit ModelParams(const ModelDims& dims) : layout(dims), values(layout.total_size(), 0.0) {}

    const ModelDims& dims() const noexcept { return layout.dims(); }

    std::span<double> tensor(std::size_t slot) {
        const auto& s = layout.slots()[slot];
        return {values.data() + s.offset, s.size()};
    }
    std::span<const double> tensor(std::size_t slot) const {
        const auto& s = layout.slots()[slot];
        return {values.data() + s.offset, s.size()};
    }

    ModelParams zeros_like() const {
        ModelParams g;
        g.layout = layout;
        g.values.assign(values.size(), 0.0);
        return g;
    }
};

namespace detail {

// y = W x + b with W row-major (out x in).
inline void affine(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> y) {
    const std::size_t out = y.size();
    const std::size_t in = x.size();
    for (std::size_t r = 0; r < out; ++r) {
        double acc = b[r];
        const double* row = w.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

// dx += W^T dy ; dW += dy x^T ; db += dy
inline void affine_backward(std::span<const double> w, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> db, std::span<double> dx) {
    const std::size_t out = dy.size();
    const std::size_t in = x.size();
    for (std::size_t r = 0; r < out; ++r) {
        const double g = dy[r];
        db[r] += g;
        if (g == 0.0) continue;
        double* drow = dw.data() + r * in;
        const double* row = w.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) {
            drow[c] += g * x[c];
            if (!dx.empty()) dx[c] += g * row[c];
        }
    }
}

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

inline double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

}  // namespace detail

/// Per-concept forward state. `weight` is the mixture weight on the positive
/// embedding: alpha/(alpha+beta) in evidential mode, sigmoid(score) in the
/// baseline mode, or the ground-truth value once intervened.
struct ConceptState {
    std::vector<double> pos_embedding;
    std::vector<double> neg_embedding;
    Evidence evidence;
    double alpha_pre = 0.0;  // evidence-head pre-activations
    double beta_pre = 0.0;
    double score = 0.0;      // baseline score (alpha head without ReLU)
    double weight = 0.5;
    bool overridden = false;
    std::vector<double> mixed;
};

struct ForwardTrace {
    Mode mode = Mode::evidential;
    std::vector<double> input;
    std::vector<double> pre0, act0, pre1, act1;
    std::vector<double> h;
    std::vector<ConceptState> concepts;
    std::vector<double> bottleneck;  // concatenated mixed embeddings
    std::vector<double> logits;
};

/// h = W2 ReLU(W1 ReLU(W0 x + b0) + b1) + b2. The output layer is linear.
inline std::vector<double> backbone_forward(const ModelParams& params, std::span<const double> x,
                                            ForwardTrace* cache = nullptr) {
    const auto& d = params.dims();
    require_dims(x.size() == d.feature_dim,
                 "backbone_forward: input has " + std::to_string(x.size()) +
                     " features, expected " + std::to_string(d.feature_dim));
    const auto& L = params.layout;
    std::vector<double> pre0(d.hidden), act0(d.hidden), pre1(d.hidden), act1(d.hidden),
        h(d.h_dim);
    detail::affine(params.tensor(L.backbone(0).w), params.tensor(L.backbone(0).b), x, pre0);
    std::transform(pre0.begin(), pre0.end(), act0.begin(), detail::relu);
    detail::affine(params.tensor(L.backbone(1).w), params.tensor(L.backbone(1).b), act0, pre1);
    std::transform(pre1.begin(), pre1.end(), act1.begin(), detail::relu);
    detail::affine(params.tensor(L.backbone(2).w), params.tensor(L.backbone(2).b), act1, h);
    if (cache) {
        cache->input.assign(x.begin(), x.end());
        cache->pre0 = std::move(pre0);
        cache->act0 = std::move(act0);
        cache->pre1 = std::move(pre1);
        cache->act1 = std::move(act1);
    }
    return h;
}

namespace detail {

inline std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
    std::vector<double> z(a.begin(), a.end());
    z.insert(z.end(), b.begin(), b.end());
    return z;
}

inline double dot_affine1(std::span<const double> w, std::span<const double> b,
                          std::span<const double> z) {
    double acc = b[0];
    for (std::size_t i = 0; i < z.size(); ++i) acc += w[i] * z[i];
    return acc;
}

}  // namespace detail

/// Shared evidence heads: alpha = ReLU(W_a [c+, c-] + b_a) + 1, beta likewise.
inline Evidence evidence_heads(const ModelParams& params, std::span<const double> c_pos,
                               std::span<const double> c_neg, double* alpha_pre = nullptr,
                               double* beta_pre = nullptr) {
    const std::size_t m = params.dims().m;
    require_dims(c_pos.size() == m && c_neg.size() == m,
                 "evidence_heads: embeddings must have length m = " + std::to_string(m));
    const auto z = detail::concat(c_pos, c_neg);
    const auto& L = params.layout;
    const double a = detail::dot_affine1(params.tensor(L.evidence_alpha().w),
                                         params.tensor(L.evidence_alpha().b), z);
    const double b = detail::dot_affine1(params.tensor(L.evidence_beta().w),
                                         params.tensor(L.evidence_beta().b), z);
    if (alpha_pre) *alpha_pre = a;
    if (beta_pre) *beta_pre = b;
    return Evidence{detail::relu(a) + 1.0, detail::relu(b) + 1.0};
}

/// Convex combination w c+ + (1-w) c- with an explicit weight.
inline std::vector<double> mix_weighted(std::span<const double> c_pos,
                                        std::span<const double> c_neg, double weight) {
    require_dims(c_pos.size() == c_neg.size(), "mix: embedding lengths differ");
    std::vector<double> out(c_pos.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = weight * c_pos[i] + (1.0 - weight) * c_neg[i];
    }
    return out;
}

/// c = alpha/(alpha+beta) c+ + beta/(alpha+beta) c-.
inline std::vector<double> mix_embedding(std::span<const double> c_pos,
                                         std::span<const double> c_neg, const Evidence& e) {
    return mix_weighted(c_pos, c_neg, e.probability());
}

/// Task logits from the concatenated mixed embeddings.
inline std::vector<double> task_forward(const ModelParams& params,
                                        std::span<const double> bottleneck) {
    const auto& d = params.dims();
    require_dims(bottleneck.size() == d.K * d.m, "task_forward: bottleneck size mismatch");
    std::vector<double> logits(d.num_classes);
    detail::affine(params.tensor(params.layout.task().w), params.tensor(params.layout.task().b),
                   bottleneck, logits);
    return logits;
}

/// Rebuilds the bottleneck and logits from the concept states (used after an
/// intervention changes a mixture).
inline void refresh_downstream(const ModelParams& params, ForwardTrace& trace) {
    const std::size_t m = params.dims().m;
    trace.bottleneck.assign(trace.concepts.size() * m, 0.0);
    for (std::size_t k = 0; k < trace.concepts.size(); ++k) {
        std::copy(trace.concepts[k].mixed.begin(), trace.concepts[k].mixed.end(),
                  trace.bottleneck.begin() + static_cast<std::ptrdiff_t>(k * m));
    }
    trace.logits = task_forward(params, trace.bottleneck);
}

/// Concept layer on top of a backbone feature vector.
inline void concept_forward(const ModelParams& params, std::span<const double> h,
                            ForwardTrace& trace) {
    const auto& d = params.dims();
    const auto& L = params.layout;
    trace.concepts.assign(d.K, ConceptState{});
    for (std::size_t k = 0; k < d.K; ++k) {
        auto& cs = trace.concepts[k];
        cs.pos_embedding.resize(d.m);
        cs.neg_embedding.resize(d.m);
        detail::affine(params.tensor(L.concept_pos(k).w), params.tensor(L.concept_pos(k).b), h,
                       cs.pos_embedding);
        detail::affine(params.tensor(L.concept_neg(k).w), params.tensor(L.concept_neg(k).b), h,
                       cs.neg_embedding);
        cs.evidence = evidence_heads(params, cs.pos_embedding, cs.neg_embedding, &cs.alpha_pre,
                                     &cs.beta_pre);
        cs.score = cs.alpha_pre;
        cs.weight = trace.mode == Mode::evidential ? cs.evidence.probability()
                                                   : detail::sigmoid(cs.score);
        cs.mixed = mix_weighted(cs.pos_embedding, cs.neg_embedding, cs.weight);
    }
    refresh_downstream(params, trace);
}

/// Full forward pass; the trace caches every activation needed by backward().
///
/// In sigmoid-baseline mode the alpha head (without ReLU) doubles as the
/// scalar concept score s_k and the mixture weight is sigmoid(s_k).
inline ForwardTrace model_forward(const ModelParams& params, std::span<const double> x,
                                  Mode mode = Mode::evidential) {
    ForwardTrace trace;
    trace.mode = mode;
    trace.h = backbone_forward(params, x, &trace);
    concept_forward(params, trace.h, trace);
    return trace;
}

/// Per-concept probability: alpha/(alpha+beta) (evidential) or sigmoid(s)
/// (baseline). Intervened concepts still report the model's prediction.
inline std::vector<double> concept_probabilities(const ForwardTrace& trace) {
    std::vector<double> p(trace.concepts.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        const auto& cs = trace.concepts[k];
        p[k] = trace.mode == Mode::evidential ? cs.evidence.probability()
                                              : detail::sigmoid(cs.score);
    }
    return p;
}

inline std::vector<double> concept_uncertainties(const ForwardTrace& trace) {
    std::vector<double> u(trace.concepts.size());
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = trace.concepts[k].evidence.uncertainty();
    return u;
}

/// Seeded initialisation: He-uniform for ReLU layers, Glorot-uniform for the
/// linear heads, zero biases except the evidence heads which start slightly
/// positive so their ReLUs are active at step 0.
inline ModelParams init_params(const ModelDims& dims, unsigned long long seed) {
    ModelParams p(dims);
    std::mt19937_64 rng(seed);
    const auto& L = p.layout;
    auto fill = [&](std::size_t slot, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : p.tensor(slot)) v = u(rng);
    };
    auto he = [](std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); };
    auto glorot = [](std::size_t fan_in, std::size_t fan_out) {
        return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    };
    fill(L.backbone(0).w, he(dims.feature_dim));
    fill(L.backbone(1).w, he(dims.hidden));
    fill(L.backbone(2).w, he(dims.hidden));
    for (std::size_t k = 0; k < dims.K; ++k) {
        fill(L.concept_pos(k).w, glorot(dims.h_dim, dims.m));
        fill(L.concept_neg(k).w, glorot(dims.h_dim, dims.m));
    }
    fill(L.evidence_alpha().w, glorot(2 * dims.m, 1));
    fill(L.evidence_beta().w, glorot(2 * dims.m, 1));
    p.tensor(L.evidence_alpha().b)[0] = 0.5;
    p.tensor(L.evidence_beta().b)[0] = 0.5;
    fill(L.task().w, glorot(dims.K * dims.m, dims.num_classes));
    return p;
}

}  // namespace evicem
