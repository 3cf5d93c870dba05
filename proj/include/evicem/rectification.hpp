#pragma once

// Concept rectification for label-efficient training:
//   1. pretrain the ECBL on embedding-bank soft labels,
//   2. flag concepts whose mean validation uncertainty reaches gamma,
//   3. learn a CAV per flagged concept from N positive + N negative samples,
//   4. gate the flagged soft labels with the CAV's unit step and retrain.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/model.hpp"
#include "evicem/tensor_archive.hpp"
#include "evicem/training.hpp"
#include "evicem/vlm.hpp"

namespace evicem {

/// Linear concept classifier in backbone feature space; positive side means
/// the concept is present.
struct CAV {
    std::size_t concept_index = 0;
    std::vector<double> weight;
    double bias = 0.0;

    double score(std::span<const double> h) const {
        require_dims(h.size() == weight.size(), "CAV: feature dimension mismatch");
        double acc = bias;
        for (std::size_t i = 0; i < h.size(); ++i) acc += weight[i] * h[i];
        return acc;
    }
};

struct MisalignmentReport {
    std::vector<double> mean_uncertainty;
    double gamma = 0.6;
    std::vector<std::size_t> misaligned;

    bool contains(std::size_t k) const {
        return std::find(misaligned.begin(), misaligned.end(), k) != misaligned.end();
    }

    nlohmann::json to_json() const {
        return {{"mean_uncertainty", mean_uncertainty},
                {"gamma", gamma},
                {"misaligned", misaligned}};
    }
};

/// C_m = { k : mean validation uncertainty of k >= gamma }.
inline MisalignmentReport misalignment_from_uncertainty(std::vector<double> mean_u, double gamma) {
    if (!(gamma > 0.0)) throw UsageError("gamma must be > 0");
    MisalignmentReport r;
    r.gamma = gamma;
    r.mean_uncertainty = std::move(mean_u);
    for (std::size_t k = 0; k < r.mean_uncertainty.size(); ++k) {
        if (r.mean_uncertainty[k] >= gamma) r.misaligned.push_back(k);
    }
    return r;
}

inline MisalignmentReport detect_misaligned(const ModelParams& pretrained, const Dataset& val,
                                            double gamma) {
    if (val.empty()) throw DataError("detect_misaligned: empty validation set");
    return misalignment_from_uncertainty(mean_uncertainty_per_concept(pretrained, val), gamma);
}

struct SvmConfig {
    double reg = 1e-2;          // L2 weight on ||w||^2 / 2
    std::size_t iterations = 2000;
};

/// Soft-margin linear SVM by full-batch Pegasos subgradient descent on
///   reg/2 ||w||^2 + 1/n sum_i max(0, 1 - y_i (w.x_i + b)),
/// step 1/(reg t), bias unregularised. Returns the average of the iterates
/// over the second half of the run. Deterministic: no sampling.
inline CAV learn_cav(std::span<const std::vector<double>> positives,
                     std::span<const std::vector<double>> negatives, const SvmConfig& cfg = {},
                     std::size_t concept_index = 0) {
    if (positives.size() < 2 || negatives.size() < 2) {
        throw DataError("learn_cav: need at least 2 samples per side");
    }
    if (!(cfg.reg > 0.0) || cfg.iterations < 2) throw UsageError("learn_cav: bad SVM config");
    const std::size_t dim = positives.front().size();
    for (const auto* side : {&positives, &negatives}) {
        for (const auto& v : *side) require_dims(v.size() == dim, "learn_cav: mixed dimensions");
    }
    {
        bool all_same = true;
        const auto& ref = positives.front();
        for (const auto* side : {&positives, &negatives}) {
            for (const auto& v : *side) all_same = all_same && v == ref;
        }
        if (all_same) throw DataError("learn_cav: degenerate input (all points identical)");
    }
    struct Point {
        const std::vector<double>* x;
        double y;
    };
    std::vector<Point> pts;
    for (const auto& v : positives) pts.push_back({&v, 1.0});
    for (const auto& v : negatives) pts.push_back({&v, -1.0});
    const double n = static_cast<double>(pts.size());

    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    std::vector<double> w_avg(dim, 0.0);
    double b_avg = 0.0;
    std::size_t averaged = 0;
    std::vector<double> sub(dim);
    for (std::size_t t = 1; t <= cfg.iterations; ++t) {
        std::fill(sub.begin(), sub.end(), 0.0);
        double sub_b = 0.0;
        for (const auto& p : pts) {
            double margin = b;
            for (std::size_t i = 0; i < dim; ++i) margin += w[i] * (*p.x)[i];
            if (p.y * margin < 1.0) {
                for (std::size_t i = 0; i < dim; ++i) sub[i] += p.y * (*p.x)[i];
                sub_b += p.y;
            }
        }
        const double eta = 1.0 / (cfg.reg * static_cast<double>(t));
        for (std::size_t i = 0; i < dim; ++i) {
            w[i] = (1.0 - eta * cfg.reg) * w[i] + eta * sub[i] / n;
        }
        b += eta * sub_b / n;
        if (t > cfg.iterations / 2) {
            for (std::size_t i = 0; i < dim; ++i) w_avg[i] += w[i];
            b_avg += b;
            ++averaged;
        }
    }
    for (auto& v : w_avg) v /= static_cast<double>(averaged);
    b_avg /= static_cast<double>(averaged);
    double norm2 = 0.0;
    for (double v : w_avg) norm2 += v * v;
    if (!(norm2 > 0.0)) throw DataError("learn_cav: classifier collapsed to a zero normal vector");
    return CAV{concept_index, std::move(w_avg), b_avg};
}

/// Unit step with H(0) = 1.
inline double unit_step(double t) { return t >= 0.0 ? 1.0 : 0.0; }

/// c_k = c~_k H(w_k . h + b_k) for k in C_m, c~_k otherwise.
inline std::vector<double> rectify_labels(std::span<const double> soft,
                                          std::span<const std::size_t> misaligned,
                                          const std::map<std::size_t, CAV>& cavs,
                                          std::span<const double> h_star) {
    std::vector<double> out(soft.begin(), soft.end());
    for (std::size_t k : misaligned) {
        const auto it = cavs.find(k);
        if (it == cavs.end()) {
            throw DataError("rectify_labels: no CAV for misaligned concept " + std::to_string(k));
        }
        require_dims(k < out.size(), "rectify_labels: concept index out of range");
        out[k] = soft[k] * unit_step(it->second.score(h_star));
    }
    return out;
}

struct RectifyConfig {
    double gamma = 0.6;
    std::size_t n_cav = 50;  // N per side
    SvmConfig svm{};
};

/// Draws N positives and N negatives for concept k from a labeled pool in a
/// seeded order and returns their backbone features. Only 2N pool entries
/// are ever read for a concept.
inline std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>>
gather_cav_samples(const ModelParams& pretrained, const Dataset& pool, std::size_t k,
                   std::size_t n_per_side, unsigned long long seed) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed * 1000003ULL + k);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<double>> pos, neg;
    for (auto i : order) {
        const auto& s = pool.samples[i];
        auto& side = metrics::binarize(s.concepts[k]) ? pos : neg;
        if (side.size() < n_per_side) side.push_back(backbone_forward(pretrained, s.x));
        if (pos.size() == n_per_side && neg.size() == n_per_side) break;
    }
    if (pos.size() < n_per_side || neg.size() < n_per_side) {
        throw DataError("insufficient labeled samples for misaligned concept " +
                        std::to_string(k) + ": need " + std::to_string(n_per_side) +
                        " per side, found " + std::to_string(pos.size()) + " positive / " +
                        std::to_string(neg.size()) + " negative");
    }
    return {std::move(pos), std::move(neg)};
}

/// Applies rectify_labels to every sample of a soft-labeled dataset, using
/// features from the pretrained backbone.
inline Dataset rectify_dataset(const Dataset& soft, const ModelParams& pretrained,
                               const MisalignmentReport& report,
                               const std::map<std::size_t, CAV>& cavs) {
    Dataset out = soft;
    if (report.misaligned.empty()) return out;
    for (auto& s : out.samples) {
        const auto h = backbone_forward(pretrained, s.x);
        s.concepts = rectify_labels(s.concepts, report.misaligned, cavs, h);
    }
    return out;
}

struct RectificationResult {
    PretrainResult pretrain;
    MisalignmentReport report;
    std::map<std::size_t, CAV> cavs;
    TrainResult rectified;
    std::optional<TrainResult> unrectified;
    std::optional<MetricsReport> metrics_unrectified;
    MetricsReport metrics_rectified;
};

/// Full label-efficient pipeline. `train_set` supplies inputs and task labels
/// (its concept labels are ignored and replaced by bank estimates);
/// `cav_pool` supplies ground-truth concept labels for at most 2N samples per
/// misaligned concept; `val` drives misalignment detection and model
/// selection; `test` is scored. With `with_baseline`, also trains the same
/// model on the unrectified soft labels for comparison.
inline RectificationResult rectified_training_pipeline(const Dataset& train_set,
                                                       const Dataset& val, const Dataset& test,
                                                       const EmbeddingBank& bank,
                                                       const Dataset& cav_pool,
                                                       const TrainConfig& cfg,
                                                       const RectifyConfig& rcfg,
                                                       bool with_baseline = true) {
    cfg.validate();
    RectificationResult out;
    const ModelParams init = init_params(cfg.dims_for(train_set), cfg.seed);
    out.pretrain = pretrain_ecbl(init, train_set, val, bank, cfg);
    out.report = misalignment_from_uncertainty(out.pretrain.val_mean_uncertainty, rcfg.gamma);
    for (std::size_t k : out.report.misaligned) {
        auto [pos, neg] = gather_cav_samples(out.pretrain.params, cav_pool, k, rcfg.n_cav, cfg.seed);
        out.cavs.emplace(k, learn_cav(pos, neg, rcfg.svm, k));
    }
    const Dataset soft = with_estimated_concepts(train_set, bank);
    const Dataset rectified = rectify_dataset(soft, out.pretrain.params, out.report, out.cavs);

    TrainConfig c = cfg;
    c.mode = Mode::evidential;
    out.rectified = train(rectified, &val, c, out.pretrain.params);
    out.metrics_rectified = evaluate(out.rectified.params, test);
    if (with_baseline) {
        out.unrectified = train(soft, &val, c, out.pretrain.params);
        out.metrics_unrectified = evaluate(out.unrectified->params, test);
    }
    return out;
}

inline void save_cavs(const std::filesystem::path& stem, const MisalignmentReport& report,
                      const std::map<std::size_t, CAV>& cavs) {
    io::TensorArchive a;
    a.set("kind", "cavs");
    char g[32];
    std::snprintf(g, sizeof(g), "%.17g", report.gamma);
    a.set("gamma", g);
    std::vector<std::string> ids;
    for (auto k : report.misaligned) ids.push_back(std::to_string(k));
    a.set("misaligned", io::join(ids));
    a.tensors.push_back({"mean_uncertainty", {report.mean_uncertainty.size()},
                         {report.mean_uncertainty.begin(), report.mean_uncertainty.end()}});
    for (const auto& [k, cav] : cavs) {
        a.tensors.push_back({"cav." + std::to_string(k) + ".weight", {cav.weight.size()},
                             {cav.weight.begin(), cav.weight.end()}});
        a.tensors.push_back({"cav." + std::to_string(k) + ".bias", {1},
                             {static_cast<float>(cav.bias)}});
    }
    io::write_archive(stem, a);
}

inline std::pair<MisalignmentReport, std::map<std::size_t, CAV>> load_cavs(
    const std::filesystem::path& stem) {
    const auto a = io::read_archive(stem);
    if (a.get("kind") != "cavs") throw DataError(stem.string() + " is not a CAV archive");
    MisalignmentReport r;
    std::map<std::size_t, CAV> cavs;
    try {
        r.gamma = std::stod(a.get("gamma"));
        for (const auto& s : io::split_list(a.get("misaligned"))) r.misaligned.push_back(std::stoul(s));
    } catch (const std::logic_error& e) {
        throw DataError(std::string("malformed CAV manifest: ") + e.what());
    }
    const auto& mu = a.tensor("mean_uncertainty").data;
    r.mean_uncertainty.assign(mu.begin(), mu.end());
    for (auto k : r.misaligned) {
        const auto& w = a.tensor("cav." + std::to_string(k) + ".weight").data;
        const auto& b = a.tensor("cav." + std::to_string(k) + ".bias").data;
        cavs.emplace(k, CAV{k, {w.begin(), w.end()}, b.at(0)});
    }
    return {r, cavs};
}

}  // namespace evicem
