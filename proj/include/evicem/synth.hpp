#pragma once

// Synthetic concept/diagnosis data with a matching embedding bank. Clean
// concepts are visible to the bank's prompts; planted-misaligned concepts
// have prompts that point at a direction unrelated to the concept, so their
// soft-label estimates carry no information about the truth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/vlm.hpp"

namespace evicem {

struct SynthSpec {
    std::size_t K = 22;
    std::size_t feature_dim = 32;
    std::size_t num_classes = 3;
    std::size_t num_samples = 5000;
    std::set<std::size_t> planted_misaligned;
    double noise = 0.4;        // feature noise; bank noise scales with it
    double label_noise = 0.03; // probability of a uniformly re-drawn class
    std::size_t bank_dim = 0;  // 0: max(64, 2K + 8)
    std::size_t terms = 2;     // T_k for every concept
    std::size_t templates = 3; // R
    double tau = 0.01;
    unsigned long long seed = 0;

    void validate() const {
        if (K == 0 || feature_dim == 0 || num_samples == 0) {
            throw UsageError("synthetic spec: K, feature_dim and num_samples must be >= 1");
        }
        if (num_classes < 2) throw UsageError("synthetic spec: need at least 2 classes");
        for (auto k : planted_misaligned) {
            if (k >= K) throw UsageError("synthetic spec: planted concept index out of range");
        }
        if (noise < 0.0 || label_noise < 0.0 || label_noise > 1.0) {
            throw UsageError("synthetic spec: noise levels must be non-negative");
        }
        if (bank_dim != 0 && bank_dim < 2 * K + 2) {
            throw UsageError("synthetic spec: bank_dim must be >= 2K + 2");
        }
        if (terms == 0 || templates == 0 || !(tau > 0.0)) {
            throw UsageError("synthetic spec: terms, templates and tau must be positive");
        }
    }

    std::size_t resolved_bank_dim() const {
        return bank_dim != 0 ? bank_dim : std::max<std::size_t>(64, 2 * K + 8);
    }
};

struct SyntheticData {
    Dataset dataset;  // ground-truth concept labels
    EmbeddingBank bank;
};

namespace detail {

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void normalize_f32(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& x : v) x = round_f32(x * inv);
}

// Orthonormal rows from Gram-Schmidt over Gaussian draws.
inline std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t d,
                                                           std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        std::vector<double> v(d);
        for (auto& x : v) x = n01(rng);
        for (const auto& b : basis) {
            double proj = 0.0;
            for (std::size_t i = 0; i < d; ++i) proj += v[i] * b[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= proj * b[i];
        }
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 < 1e-12) continue;
        for (auto& x : v) x /= std::sqrt(n2);
        basis.push_back(std::move(v));
    }
    return basis;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t K = spec.K;
    const std::size_t F = spec.feature_dim;

    // Concept rates depend on a per-sample latent factor.
    std::vector<double> rate_bias(K), rate_slope(K);
    for (std::size_t k = 0; k < K; ++k) {
        rate_bias[k] = -0.5 + unif(rng);
        rate_slope[k] = -1.0 + 2.0 * unif(rng);
    }
    // Feature loadings, one column per concept, unit norm.
    std::vector<std::vector<double>> loading(K, std::vector<double>(F));
    for (auto& col : loading) {
        double n2 = 0.0;
        for (auto& v : col) {
            v = n01(rng);
            n2 += v * v;
        }
        for (auto& v : col) v /= std::sqrt(n2);
    }
    // Diagnosis score weights.
    std::vector<double> task_weight(K);
    for (auto& w : task_weight) w = (unif(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + unif(rng));

    Dataset ds;
    ds.feature_dim = F;
    ds.K = K;
    ds.num_classes = spec.num_classes;
    ds.concept_names = default_concept_names(K);
    ds.samples.resize(spec.num_samples);
    std::vector<double> score(spec.num_samples);
    for (std::size_t i = 0; i < spec.num_samples; ++i) {
        auto& s = ds.samples[i];
        char id[32];
        std::snprintf(id, sizeof(id), "s%06zu", i);
        s.id = id;
        const double latent = n01(rng);
        s.concepts.resize(K);
        for (std::size_t k = 0; k < K; ++k) {
            const double p = 1.0 / (1.0 + std::exp(-(rate_bias[k] + rate_slope[k] * latent)));
            s.concepts[k] = unif(rng) < p ? 1.0 : 0.0;
        }
        s.x.assign(F, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            const double sign = 2.0 * s.concepts[k] - 1.0;
            for (std::size_t j = 0; j < F; ++j) s.x[j] += sign * loading[k][j];
        }
        for (auto& v : s.x) v = detail::round_f32(v + spec.noise * n01(rng));
        double sc = 0.0;
        for (std::size_t k = 0; k < K; ++k) sc += task_weight[k] * s.concepts[k];
        score[i] = sc;
    }
    // Class = bucket of the score at its empirical quantiles.
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (std::size_t c = 1; c < spec.num_classes; ++c) {
        cuts.push_back(sorted[c * sorted.size() / spec.num_classes]);
    }
    std::uniform_int_distribution<std::size_t> any_class(0, spec.num_classes - 1);
    for (std::size_t i = 0; i < spec.num_samples; ++i) {
        std::size_t cls = 0;
        while (cls < cuts.size() && score[i] >= cuts[cls]) ++cls;
        const bool flip = unif(rng) < spec.label_noise;
        const std::size_t drawn = any_class(rng);
        ds.samples[i].label = flip ? drawn : cls;
    }

    // Embedding bank. Basis: anchor, reference offset, K concept directions,
    // K decoy directions used by planted concepts.
    const std::size_t d = spec.resolved_bank_dim();
    const auto basis = detail::random_orthonormal(2 * K + 2, d, rng);
    const auto& anchor = basis[0];
    const auto& ref_dir = basis[1];
    auto concept_dir = [&](std::size_t k) -> const std::vector<double>& { return basis[2 + k]; };
    auto decoy_dir = [&](std::size_t k) -> const std::vector<double>& {
        return basis[2 + K + k];
    };
    constexpr double kAnchor = 1.0;
    constexpr double kConceptScale = 0.1;
    constexpr double kPromptOffset = 0.5;
    constexpr double kPromptNoise = 0.02;
    const double bank_noise = 0.6 * spec.noise;
    const double image_noise = 0.05 * spec.noise;

    std::vector<double> image(spec.num_samples * d);
    std::vector<std::string> ids(spec.num_samples);
    for (std::size_t i = 0; i < spec.num_samples; ++i) {
        const auto& s = ds.samples[i];
        ids[i] = s.id;
        std::vector<double> v(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) v[j] = kAnchor * anchor[j];
        for (std::size_t k = 0; k < K; ++k) {
            const double signal = (2.0 * s.concepts[k] - 1.0) + bank_noise * n01(rng);
            const double decoy = spec.planted_misaligned.count(k) ? n01(rng) : 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                v[j] += kConceptScale * (signal * concept_dir(k)[j] + decoy * decoy_dir(k)[j]);
            }
        }
        for (std::size_t j = 0; j < d; ++j) v[j] += image_noise * n01(rng) / std::sqrt(double(d));
        detail::normalize_f32(v);
        std::copy(v.begin(), v.end(), image.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    auto prompt = [&](const std::vector<double>& dir) {
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) {
            v[j] = anchor[j] + kPromptOffset * dir[j] + kPromptNoise * n01(rng) / std::sqrt(double(d));
        }
        detail::normalize_f32(v);
        return v;
    };
    std::vector<double> reference;
    for (std::size_t r = 0; r < spec.templates; ++r) {
        const auto v = prompt(ref_dir);
        reference.insert(reference.end(), v.begin(), v.end());
    }
    std::vector<std::vector<double>> prompts(K);
    std::vector<std::size_t> terms(K, spec.terms);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& dir = spec.planted_misaligned.count(k) ? decoy_dir(k) : concept_dir(k);
        for (std::size_t t = 0; t < spec.terms; ++t) {
            for (std::size_t r = 0; r < spec.templates; ++r) {
                const auto v = prompt(dir);
                prompts[k].insert(prompts[k].end(), v.begin(), v.end());
            }
        }
    }
    EmbeddingBank bank(d, spec.tau, std::move(ids), std::move(image), std::move(terms),
                       spec.templates, std::move(prompts), std::move(reference));
    return SyntheticData{std::move(ds), std::move(bank)};
}

}  // namespace evicem
