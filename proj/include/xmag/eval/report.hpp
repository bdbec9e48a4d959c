#pragma once

#include "xmag/eval/stat_tests.hpp"
#include "xmag/mil/bags.hpp"

// Report assembly: point metrics with bootstrap confidence intervals, the
// fixed-column CSV formats for metric reports and paired tests, and the
// embedding export entry point.

namespace xmag::eval {

struct MetricReport {
    double auc = 0.0, accuracy = 0.0, f1 = 0.0;
    double auc_lo = 0.0, auc_hi = 0.0;
    double acc_lo = 0.0, acc_hi = 0.0;
    double f1_lo = 0.0, f1_hi = 0.0;
    size_t n = 0;
    int ci_redraws = 0;  // bootstrap resamples redrawn (metric undefined)
};

// Point metrics plus 95% bootstrap CIs (n_boot resamples per metric, one
// deterministic stream per metric derived from `seed`).
inline MetricReport make_metric_report(const std::vector<std::vector<double>>& probs, const std::vector<int>& preds,
                                       const std::vector<int>& labels, int n_classes, int n_boot, uint64_t seed) {
    if (probs.size() != labels.size() || preds.size() != labels.size())
        throw InvariantError("make_metric_report: length mismatch");
    MetricReport r;
    r.n = labels.size();
    r.auc = auc(probs, labels, n_classes);
    const ClassificationMetrics cm = classification_metrics(preds, labels, n_classes);
    r.accuracy = cm.accuracy;
    r.f1 = cm.macro_f1;

    const auto resampled = [&](const std::vector<size_t>& idx, auto&& fn) {
        std::vector<std::vector<double>> p(idx.size());
        std::vector<int> pr(idx.size()), y(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            p[i] = probs[idx[i]];
            pr[i] = preds[idx[i]];
            y[i] = labels[idx[i]];
        }
        return fn(p, pr, y);
    };
    const BootstrapCi auc_ci = bootstrap_ci(
        [&](const std::vector<size_t>& idx) {
            return resampled(idx, [&](const auto& p, const auto&, const auto& y) { return auc(p, y, n_classes); });
        },
        labels.size(), r.auc, n_boot, hash_mix(seed, 0x61756363ULL));
    const BootstrapCi acc_ci = bootstrap_ci(
        [&](const std::vector<size_t>& idx) {
            return resampled(idx, [&](const auto&, const auto& pr, const auto& y) {
                return classification_metrics(pr, y, n_classes).accuracy;
            });
        },
        labels.size(), r.accuracy, n_boot, hash_mix(seed, 0x61636363ULL));
    const BootstrapCi f1_ci = bootstrap_ci(
        [&](const std::vector<size_t>& idx) {
            return resampled(idx, [&](const auto&, const auto& pr, const auto& y) {
                return classification_metrics(pr, y, n_classes).macro_f1;
            });
        },
        labels.size(), r.f1, n_boot, hash_mix(seed, 0x66316363ULL));
    r.auc_lo = auc_ci.lo;
    r.auc_hi = auc_ci.hi;
    r.acc_lo = acc_ci.lo;
    r.acc_hi = acc_ci.hi;
    r.f1_lo = f1_ci.lo;
    r.f1_hi = f1_ci.hi;
    r.ci_redraws = auc_ci.redraws + acc_ci.redraws + f1_ci.redraws;
    return r;
}

struct ReportRow {
    std::string task, model;
    int fold = 0;
    MetricReport metrics;
};

inline void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
    std::string out = "task,model,fold,auc,auc_lo,auc_hi,acc,f1,f1_lo,f1_hi\n";
    for (const auto& r : rows) {
        out += r.task + ',' + r.model + ',' + std::to_string(r.fold) + ',' + fmt_g17(r.metrics.auc) + ',' +
               fmt_g17(r.metrics.auc_lo) + ',' + fmt_g17(r.metrics.auc_hi) + ',' + fmt_g17(r.metrics.accuracy) +
               ',' + fmt_g17(r.metrics.f1) + ',' + fmt_g17(r.metrics.f1_lo) + ',' + fmt_g17(r.metrics.f1_hi) + '\n';
    }
    write_file(path, out);
}

struct TestRow {
    std::string task, model_a, model_b;
    PairedTestResult result;
};

inline void write_tests_csv(const std::filesystem::path& path, const std::vector<TestRow>& rows) {
    std::string out = "task,model_a,model_b,test,statistic,p\n";
    for (const auto& r : rows)
        out += r.task + ',' + r.model_a + ',' + r.model_b + ',' + r.result.test + ',' + fmt_g17(r.result.statistic) +
               ',' + fmt_g17(r.result.p_value) + '\n';
    write_file(path, out);
}

// Embedding export: binary f32 matrix plus JSON sidecar (see mil/bags.hpp).
inline void export_embeddings(const Tensor<float>& matrix, const std::filesystem::path& stem,
                              const std::string& slide_id, const std::string& encoder_checkpoint_hash) {
    mil::save_embedding_matrix(stem, matrix, slide_id, encoder_checkpoint_hash);
}

}  // namespace xmag::eval
