#pragma once

// Mini-batch AdamW training of the concept embedding model, evaluation
// metrics, and stage-1 ECBL pretraining on embedding-bank soft labels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evicem/data.hpp"
#include "evicem/errors.hpp"
#include "evicem/losses.hpp"
#include "evicem/metrics.hpp"
#include "evicem/model.hpp"
#include "evicem/optim.hpp"
#include "evicem/vlm.hpp"

namespace evicem {

struct TrainConfig {
    double lambda = 1.0;
    double lr = 5e-4;
    double weight_decay = 0.01;
    std::size_t batch_size = 128;
    std::size_t epochs = 30;
    unsigned long long seed = 0;
    Mode mode = Mode::evidential;
    double base_rate = 0.5;
    std::size_t hidden = 64;
    std::size_t h_dim = 64;
    std::size_t m = 16;

    void validate() const {
        if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
        if (!(lr > 0.0)) throw UsageError("lr must be > 0");
        if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be >= 0");
        if (batch_size == 0) throw UsageError("batch_size must be >= 1");
        if (epochs == 0) throw UsageError("epochs must be >= 1");
        if (!(base_rate >= 0.0 && base_rate <= 1.0)) throw UsageError("base_rate must be in [0,1]");
        if (hidden == 0 || h_dim == 0 || m == 0) throw UsageError("model widths must be >= 1");
    }

    ModelDims dims_for(const Dataset& ds) const {
        return ModelDims{ds.feature_dim, hidden, h_dim, m, ds.K, ds.num_classes};
    }

    AdamWConfig optimizer() const { return AdamWConfig{lr, weight_decay}; }
};

struct MetricsReport {
    std::vector<double> concept_auc;
    std::vector<double> concept_acc;
    std::vector<double> concept_f1;
    double mean_concept_auc = 0.0;
    double mean_concept_acc = 0.0;
    double mean_concept_f1 = 0.0;
    double diag_auc = 0.0;
    double diag_acc = 0.0;
    double diag_f1 = 0.0;

    nlohmann::json to_json() const {
        return {{"concept_auc", concept_auc},
                {"concept_acc", concept_acc},
                {"concept_f1", concept_f1},
                {"mean_concept_auc", mean_concept_auc},
                {"mean_concept_acc", mean_concept_acc},
                {"mean_concept_f1", mean_concept_f1},
                {"diag_auc", diag_auc},
                {"diag_acc", diag_acc},
                {"diag_f1", diag_f1}};
    }
};

/// Row-major per-sample model outputs over a dataset.
struct Predictions {
    std::size_t n = 0;
    std::size_t K = 0;
    std::size_t C = 0;
    std::vector<double> concept_prob;  // n x K
    std::vector<double> uncertainty;   // n x K
    std::vector<double> class_prob;    // n x C
    std::vector<int> predicted_class;
};

inline Predictions predict(const ModelParams& params, const Dataset& ds, Mode mode) {
    Predictions p;
    p.n = ds.size();
    p.K = ds.K;
    p.C = ds.num_classes;
    p.concept_prob.reserve(p.n * p.K);
    p.uncertainty.reserve(p.n * p.K);
    p.class_prob.reserve(p.n * p.C);
    for (const auto& s : ds.samples) {
        const auto trace = model_forward(params, s.x, mode);
        const auto cp = concept_probabilities(trace);
        const auto cu = concept_uncertainties(trace);
        const auto sp = softmax(trace.logits);
        p.concept_prob.insert(p.concept_prob.end(), cp.begin(), cp.end());
        p.uncertainty.insert(p.uncertainty.end(), cu.begin(), cu.end());
        p.class_prob.insert(p.class_prob.end(), sp.begin(), sp.end());
        p.predicted_class.push_back(
            static_cast<int>(std::max_element(sp.begin(), sp.end()) - sp.begin()));
    }
    return p;
}

inline MetricsReport metrics_from_predictions(const Predictions& p, const Dataset& ds) {
    if (ds.empty()) throw DataError("evaluate: empty dataset");
    MetricsReport r;
    std::vector<double> col(p.n);
    std::vector<int> truth(p.n);
    for (std::size_t k = 0; k < p.K; ++k) {
        for (std::size_t i = 0; i < p.n; ++i) {
            col[i] = p.concept_prob[i * p.K + k];
            truth[i] = metrics::binarize(ds.samples[i].concepts[k]);
        }
        r.concept_auc.push_back(metrics::roc_auc(col, truth));
        r.concept_acc.push_back(metrics::binary_accuracy(col, truth));
        r.concept_f1.push_back(metrics::binary_f1(col, truth));
    }
    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    };
    r.mean_concept_auc = mean(r.concept_auc);
    r.mean_concept_acc = mean(r.concept_acc);
    r.mean_concept_f1 = mean(r.concept_f1);
    std::vector<int> labels(p.n);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.n; ++i) {
        labels[i] = static_cast<int>(ds.samples[i].label);
        hit += labels[i] == p.predicted_class[i];
    }
    r.diag_auc = metrics::macro_ovr_auc(p.class_prob, p.C, labels);
    r.diag_acc = static_cast<double>(hit) / static_cast<double>(p.n);
    r.diag_f1 = metrics::macro_f1(p.predicted_class, labels, p.C);
    return r;
}

inline MetricsReport evaluate(const ModelParams& params, const Dataset& ds,
                              Mode mode = Mode::evidential) {
    if (ds.empty()) throw DataError("evaluate: empty dataset");
    return metrics_from_predictions(predict(params, ds, mode), ds);
}

/// Mean uncertainty over concept predictions that are wrong / right
/// (threshold 0.5 on both prediction and label).
struct UncertaintySplit {
    double mean_wrong = 0.0;
    double mean_correct = 0.0;
    std::size_t wrong = 0;
    std::size_t correct = 0;
};

inline UncertaintySplit uncertainty_by_correctness(const Predictions& p, const Dataset& ds) {
    UncertaintySplit s;
    for (std::size_t i = 0; i < p.n; ++i) {
        for (std::size_t k = 0; k < p.K; ++k) {
            const bool ok = metrics::binarize(p.concept_prob[i * p.K + k]) ==
                            metrics::binarize(ds.samples[i].concepts[k]);
            (ok ? s.mean_correct : s.mean_wrong) += p.uncertainty[i * p.K + k];
            ++(ok ? s.correct : s.wrong);
        }
    }
    if (s.wrong) s.mean_wrong /= double(s.wrong);
    if (s.correct) s.mean_correct /= double(s.correct);
    return s;
}

/// Mean confidence on wrong concept predictions. Sigmoid baseline:
/// max(p, 1-p). Evidential: (1 - u) max(p, 1-p).
inline double wrong_prediction_confidence(const Predictions& p, const Dataset& ds, Mode mode) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.n; ++i) {
        for (std::size_t k = 0; k < p.K; ++k) {
            const double prob = p.concept_prob[i * p.K + k];
            if (metrics::binarize(prob) == metrics::binarize(ds.samples[i].concepts[k])) continue;
            double conf = std::max(prob, 1.0 - prob);
            if (mode == Mode::evidential) conf *= 1.0 - p.uncertainty[i * p.K + k];
            acc += conf;
            ++n;
        }
    }
    return n ? acc / double(n) : 0.0;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double total_loss = 0.0;
    double task_loss = 0.0;
    double concept_loss = 0.0;
    double mean_concept_auc = 0.0;
    double diag_acc = 0.0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},
                {"total_loss", total_loss},
                {"task_loss", task_loss},
                {"concept_loss", concept_loss},
                {"mean_concept_auc", mean_concept_auc},
                {"diag_acc", diag_acc}};
    }
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> log;
    std::size_t selected_epoch = 0;
};

struct TrainOptions {
    LossWeights weights{1.0, 1.0};
    bool train_task_head = true;
    // Keep the epoch with the best validation mean concept AUC; otherwise the last.
    bool select_best = true;
};

/// Trains `init` on `train`. Shuffle order, batching and gradient reduction
/// are all sequential and seeded, so results are reproducible bit-for-bit.
inline TrainResult train_model(ModelParams init, const Dataset& train, const Dataset* val,
                               const TrainConfig& cfg, const TrainOptions& opt) {
    cfg.validate();
    if (train.empty()) throw DataError("train: empty dataset");
    if (cfg.batch_size > train.size()) {
        throw UsageError("train: batch_size " + std::to_string(cfg.batch_size) +
                         " exceeds dataset size " + std::to_string(train.size()));
    }
    require_dims(init.dims().feature_dim == train.feature_dim && init.dims().K == train.K &&
                     init.dims().num_classes == train.num_classes,
                 "train: model dims do not match the dataset");
    TrainResult result;
    result.params = std::move(init);
    ModelParams& params = result.params;
    const std::size_t trainable =
        opt.train_task_head ? params.values.size() : params.layout.task_begin();
    AdamWState state(trainable);
    const AdamWConfig adam = cfg.optimizer();
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    ModelParams grads = params.zeros_like();
    std::optional<ModelParams> best;
    double best_auc = -1.0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);
            std::fill(grads.values.begin(), grads.values.end(), 0.0);
            double batch_total = 0.0;
            for (std::size_t j = start; j < end; ++j) {
                const auto& s = train.samples[order[j]];
                const auto trace = model_forward(params, s.x, cfg.mode);
                const auto lb = backward(params, trace, s.concepts, s.label, opt.weights, grads, scale);
                batch_total += lb.total;
                rec.total_loss += lb.total;
                rec.task_loss += lb.task;
                rec.concept_loss += lb.concepts;
            }
            if (!std::isfinite(batch_total)) {
                throw NumericAbort("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index),
                                   static_cast<long>(epoch), static_cast<long>(batch_index));
            }
            adamw_step(std::span<double>(params.values.data(), trainable),
                       std::span<const double>(grads.values.data(), trainable), state, adam);
        }
        const double n = static_cast<double>(train.size());
        rec.total_loss /= n;
        rec.task_loss /= n;
        rec.concept_loss /= n;
        if (val && !val->empty()) {
            const auto report = evaluate(params, *val, cfg.mode);
            rec.mean_concept_auc = report.mean_concept_auc;
            rec.diag_acc = report.diag_acc;
            if (opt.select_best && report.mean_concept_auc > best_auc) {
                best_auc = report.mean_concept_auc;
                best = params;
                result.selected_epoch = epoch;
            }
        }
        result.log.push_back(rec);
    }
    if (best) {
        params = std::move(*best);
    } else {
        result.selected_epoch = cfg.epochs;
    }
    return result;
}

/// Supervised training under Eq.-(1)-style objective: CE + lambda sum_k L_Beta
/// (or BCE in sigmoid-baseline mode).
inline TrainResult train(const Dataset& train_set, const Dataset* val, const TrainConfig& cfg,
                         std::optional<ModelParams> init = std::nullopt) {
    cfg.validate();
    ModelParams p = init ? std::move(*init) : init_params(cfg.dims_for(train_set), cfg.seed);
    return train_model(std::move(p), train_set, val, cfg, TrainOptions{{1.0, cfg.lambda}, true, true});
}

struct PretrainResult {
    ModelParams params;
    std::vector<EpochRecord> log;
    std::vector<double> val_mean_uncertainty;  // per concept
};

inline std::vector<double> mean_uncertainty_per_concept(const ModelParams& params,
                                                        const Dataset& ds) {
    if (ds.empty()) throw DataError("mean uncertainty: empty dataset");
    std::vector<double> mean(ds.K, 0.0);
    for (const auto& s : ds.samples) {
        const auto u = concept_uncertainties(model_forward(params, s.x, Mode::evidential));
        for (std::size_t k = 0; k < ds.K; ++k) mean[k] += u[k];
    }
    for (auto& v : mean) v /= static_cast<double>(ds.size());
    return mean;
}

/// Stage-1 pretraining: backbone + concept layer minimise sum_k L_Beta against
/// the bank's soft labels. No task term; the task head is not updated. The
/// last epoch is kept (no concept ground truth is assumed for selection).
inline PretrainResult pretrain_ecbl(ModelParams init, const Dataset& train_set,
                                    const Dataset& val, const EmbeddingBank& bank,
                                    const TrainConfig& cfg) {
    const Dataset soft = with_estimated_concepts(train_set, bank);
    TrainConfig c = cfg;
    c.mode = Mode::evidential;
    auto r = train_model(std::move(init), soft, nullptr, c, TrainOptions{{0.0, 1.0}, false, false});
    PretrainResult out;
    out.val_mean_uncertainty = mean_uncertainty_per_concept(r.params, val);
    out.params = std::move(r.params);
    out.log = std::move(r.log);
    return out;
}

}  // namespace evicem
