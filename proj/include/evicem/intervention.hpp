#pragma once

// Test-time concept intervention: overwrite a concept's mixture weight with
// its ground-truth value and recompute the diagnosis. The uncertainty-aware
// policy intervenes on argmax_k u_k first.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/losses.hpp"
#include "evicem/metrics.hpp"
#include "evicem/model.hpp"

namespace evicem {

struct InterventionState {
    ForwardTrace trace;                  // concepts[k].mixed reflects interventions
    std::map<std::size_t, int> intervened;  // concept -> ground-truth value

    const std::vector<double>& logits() const noexcept { return trace.logits; }
};

inline InterventionState start_intervention(const ModelParams& params, std::span<const double> x,
                                            Mode mode = Mode::evidential) {
    return InterventionState{model_forward(params, x, mode), {}};
}

/// argmax_k u_k over concepts not yet intervened; ties go to the lowest index.
inline std::size_t select_concept(std::span<const double> uncertainties,
                                  const std::set<std::size_t>& already) {
    std::size_t best = uncertainties.size();
    for (std::size_t k = 0; k < uncertainties.size(); ++k) {
        if (already.count(k)) continue;
        if (best == uncertainties.size() || uncertainties[k] > uncertainties[best]) best = k;
    }
    if (best == uncertainties.size()) {
        throw DomainError("select_concept: every concept has already been intervened");
    }
    return best;
}

inline std::set<std::size_t> intervened_set(const InterventionState& state) {
    std::set<std::size_t> s;
    for (const auto& kv : state.intervened) s.insert(kv.first);
    return s;
}

/// Sets concept k's mixture to truth c+ + (1 - truth) c- and recomputes the
/// logits. Evidence is left as predicted; the concept is flagged overridden.
inline void apply_intervention(const ModelParams& params, InterventionState& state, std::size_t k,
                               int truth) {
    if (k >= state.trace.concepts.size()) {
        throw DomainError("apply_intervention: concept index " + std::to_string(k) +
                          " out of range");
    }
    if (truth != 0 && truth != 1) throw DomainError("apply_intervention: value must be 0 or 1");
    if (state.intervened.count(k)) {
        throw DomainError("apply_intervention: concept " + std::to_string(k) +
                          " is already intervened");
    }
    auto& cs = state.trace.concepts[k];
    cs.weight = static_cast<double>(truth);
    cs.overridden = true;
    cs.mixed = mix_weighted(cs.pos_embedding, cs.neg_embedding, cs.weight);
    state.intervened.emplace(k, truth);
    refresh_downstream(params, state.trace);
}

enum class Policy { uncertainty, random };

inline const char* to_string(Policy p) { return p == Policy::uncertainty ? "uncertainty" : "random"; }

inline Policy parse_policy(const std::string& s) {
    if (s == "uncertainty") return Policy::uncertainty;
    if (s == "random") return Policy::random;
    throw UsageError("unknown policy '" + s + "' (expected uncertainty | random)");
}

/// Full intervention order for one case under a policy.
inline std::vector<std::size_t> intervention_order(const ForwardTrace& trace, Policy policy,
                                                   std::mt19937_64& rng) {
    const std::size_t K = trace.concepts.size();
    std::vector<std::size_t> order;
    if (policy == Policy::uncertainty) {
        const auto u = concept_uncertainties(trace);
        std::set<std::size_t> done;
        for (std::size_t i = 0; i < K; ++i) {
            const auto k = select_concept(u, done);
            order.push_back(k);
            done.insert(k);
        }
    } else {
        order.resize(K);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

struct CurvePoint {
    Policy policy = Policy::uncertainty;
    unsigned long long seed = 0;
    std::size_t t = 0;
    double diag_auc = 0.0;

    nlohmann::json to_json() const {
        return {{"policy", to_string(policy)}, {"seed", seed}, {"t", t}, {"diag_auc", diag_auc}};
    }
};

/// Diagnosis AUC after intervening t = 0..max_interventions concepts per
/// sample with ground truth (binarised at 0.5). The random policy draws one
/// seeded permutation per sample.
inline std::vector<CurvePoint> intervention_curve(const ModelParams& params, const Dataset& ds,
                                                  Policy policy, std::size_t max_interventions,
                                                  unsigned long long seed,
                                                  Mode mode = Mode::evidential) {
    if (max_interventions > ds.K) {
        throw UsageError("intervention_curve: max_interventions exceeds K");
    }
    if (ds.empty()) throw DataError("intervention_curve: empty dataset");
    const std::size_t C = ds.num_classes;
    std::vector<std::vector<double>> probs(max_interventions + 1,
                                           std::vector<double>(ds.size() * C));
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        auto state = start_intervention(params, s.x, mode);
        const auto order = intervention_order(state.trace, policy, rng);
        for (std::size_t t = 0; t <= max_interventions; ++t) {
            if (t > 0) {
                const std::size_t k = order[t - 1];
                apply_intervention(params, state, k, metrics::binarize(s.concepts[k]));
            }
            const auto p = softmax(state.logits());
            std::copy(p.begin(), p.end(), probs[t].begin() + static_cast<std::ptrdiff_t>(i * C));
        }
    }
    std::vector<int> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = static_cast<int>(ds.samples[i].label);
    std::vector<CurvePoint> curve;
    for (std::size_t t = 0; t <= max_interventions; ++t) {
        curve.push_back({policy, seed, t, metrics::macro_ovr_auc(probs[t], C, labels)});
    }
    return curve;
}

/// Ids of cases whose diagnosis is wrong before and right after a single
/// intervention on the argmax-u concept.
inline std::vector<std::string> cases_corrected_by_one_intervention(const ModelParams& params,
                                                                    const Dataset& ds) {
    std::vector<std::string> ids;
    for (const auto& s : ds.samples) {
        auto state = start_intervention(params, s.x);
        auto argmax = [](const std::vector<double>& v) {
            return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
        };
        if (argmax(state.logits()) == s.label) continue;
        const auto k = select_concept(concept_uncertainties(state.trace), {});
        apply_intervention(params, state, k, metrics::binarize(s.concepts[k]));
        if (argmax(state.logits()) == s.label) ids.push_back(s.id);
    }
    return ids;
}

}  // namespace evicem
