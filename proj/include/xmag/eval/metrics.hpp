#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "xmag/common.hpp"

// Classification metrics: AUC in the Mann–Whitney rank formulation (ties at
// ½; multiclass macro one-vs-rest), accuracy, and macro F1.

namespace xmag::eval {

// Binary AUC via mid-ranks: (R_pos − n_pos(n_pos+1)/2) / (n_pos·n_neg),
// algebraically equal to pairwise counting with ties worth ½.
inline double auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw InvariantError("auc: scores/labels length mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw InvariantError("auc: binary labels must be 0/1");
        n_pos += static_cast<size_t>(y);
    }
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InvariantError("auc: needs at least one positive and one negative label");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
        for (size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += mid_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Macro one-vs-rest AUC over per-class score columns. Classes absent from
// the labels are skipped; at least one class must be scorable.
inline double auc_macro_ovr(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels,
                            int n_classes) {
    if (probs.size() != labels.size()) throw InvariantError("auc: probs/labels length mismatch");
    if (probs.empty()) throw InvariantError("auc: empty input");
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<double> s(probs.size());
        std::vector<int> y(labels.size());
        size_t pos = 0;
        for (size_t i = 0; i < probs.size(); ++i) {
            if (static_cast<int>(probs[i].size()) != n_classes)
                throw InvariantError("auc: per-sample score vector length != n_classes");
            s[i] = probs[i][static_cast<size_t>(c)];
            y[i] = labels[i] == c ? 1 : 0;
            pos += static_cast<size_t>(y[i]);
        }
        if (pos == 0 || pos == probs.size()) continue;  // class not represented on both sides
        sum += auc_binary(s, y);
        ++counted;
    }
    if (counted == 0) throw InvariantError("auc: single-class labels");
    return sum / static_cast<double>(counted);
}

// Convenience: binary when n_classes == 2 (positive-class column), macro OVR
// otherwise.
inline double auc(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, int n_classes) {
    if (n_classes < 2) throw InvariantError("auc: need >= 2 classes");
    if (n_classes == 2) {
        std::vector<double> s(probs.size());
        for (size_t i = 0; i < probs.size(); ++i) {
            if (probs[i].size() != 2) throw InvariantError("auc: expected 2 score columns");
            s[i] = probs[i][1];
        }
        return auc_binary(s, labels);
    }
    return auc_macro_ovr(probs, labels, n_classes);
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

// Accuracy and macro F1. Classes with no predictions and no true members
// still count toward the macro average with F1 = 0 when inside [0, n_classes);
// n_classes = 0 derives the class count from the data.
inline ClassificationMetrics classification_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                                    int n_classes = 0) {
    if (preds.size() != labels.size()) throw InvariantError("classification_metrics: length mismatch");
    if (preds.empty()) throw InvariantError("classification_metrics: empty input");
    int c_max = 0;
    for (size_t i = 0; i < preds.size(); ++i) c_max = std::max({c_max, preds[i] + 1, labels[i] + 1});
    if (n_classes == 0) n_classes = c_max;
    if (c_max > n_classes) throw InvariantError("classification_metrics: label outside [0, n_classes)");

    size_t correct = 0;
    std::vector<size_t> tp(static_cast<size_t>(n_classes), 0), fp(static_cast<size_t>(n_classes), 0),
        fn(static_cast<size_t>(n_classes), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[i]) {
            ++correct;
            ++tp[static_cast<size_t>(labels[i])];
        } else {
            ++fp[static_cast<size_t>(preds[i])];
            ++fn[static_cast<size_t>(labels[i])];
        }
    }
    double f1_sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
        f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    return {static_cast<double>(correct) / static_cast<double>(preds.size()),
            f1_sum / static_cast<double>(n_classes)};
}

}  // namespace xmag::eval
