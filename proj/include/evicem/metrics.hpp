#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "evicem/errors.hpp"

namespace evicem::metrics {

/// ROC AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counted 1/2. Computed from a sort with tie groups, which is exactly
/// the pair count. Returns 0.5 when one class is absent.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    require_dims(scores.size() == labels.size(), "roc_auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pairs_won = 0.0;
    double negatives_below = 0.0;
    double positives = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double pos_in_group = 0.0;
        double neg_in_group = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] != 0 ? pos_in_group : neg_in_group) += 1.0;
            ++j;
        }
        pairs_won += pos_in_group * (negatives_below + 0.5 * neg_in_group);
        negatives_below += neg_in_group;
        positives += pos_in_group;
        i = j;
    }
    const double negatives = static_cast<double>(scores.size()) - positives;
    if (positives == 0.0 || negatives == 0.0) return 0.5;
    return pairs_won / (positives * negatives);
}

inline int binarize(double v) { return v >= 0.5 ? 1 : 0; }

/// Accuracy of p >= 0.5 against binary labels.
inline double binary_accuracy(std::span<const double> probs, std::span<const int> labels) {
    require_dims(probs.size() == labels.size() && !probs.empty(), "binary_accuracy: sizes");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) hit += binarize(probs[i]) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(probs.size());
}

/// F1 of one class given predicted and true class ids. 0 when the class is
/// never predicted nor present.
inline double f1_for_class(std::span<const int> predicted, std::span<const int> truth, int cls) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] == cls;
        const bool t = truth[i] == cls;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    const double denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2 * tp / denom;
}

inline double binary_f1(std::span<const double> probs, std::span<const int> labels) {
    std::vector<int> pred(probs.size());
    std::transform(probs.begin(), probs.end(), pred.begin(), binarize);
    return f1_for_class(pred, labels, 1);
}

/// Macro one-vs-rest AUC over class probability columns (row-major n x C).
inline double macro_ovr_auc(std::span<const double> probs, std::size_t num_classes,
                            std::span<const int> labels) {
    require_dims(probs.size() == labels.size() * num_classes, "macro_ovr_auc: sizes");
    double acc = 0.0;
    std::vector<double> col(labels.size());
    std::vector<int> bin(labels.size());
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            col[i] = probs[i * num_classes + c];
            bin[i] = labels[i] == static_cast<int>(c);
        }
        acc += roc_auc(col, bin);
    }
    return acc / static_cast<double>(num_classes);
}

inline double macro_f1(std::span<const int> predicted, std::span<const int> truth,
                       std::size_t num_classes) {
    double acc = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        acc += f1_for_class(predicted, truth, static_cast<int>(c));
    }
    return acc / static_cast<double>(num_classes);
}

}  // namespace evicem::metrics
