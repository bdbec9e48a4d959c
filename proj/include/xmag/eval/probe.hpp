#pragma once

#include "xmag/eval/report.hpp"

// Linear probe: multinomial logistic regression on frozen embeddings,
// minimized by full-batch gradient descent with Armijo backtracking line
// search to gradient-infinity-norm tolerance 1e-5 (the objective is convex,
// so any convergent first-order method suffices at this scale).

namespace xmag::eval {

struct ProbeConfig {
    int max_epochs = 2000;
    double tol = 1e-5;
    double holdout_frac = 0.25;
    double l2 = 0.0;  // ridge on weights (never on the bias row)
    int n_boot = 1000;
};

struct LinearProbe {
    Tensor<double> w;  // [d+1, C]: last row is the bias
    int n_classes = 0;
    int epochs_run = 0;
    double final_grad_norm = 0.0;

    std::vector<double> predict_probs(const float* x, size_t d) const {
        std::vector<double> logits(static_cast<size_t>(n_classes), 0.0);
        for (int c = 0; c < n_classes; ++c) {
            double s = w.data()[d * static_cast<size_t>(n_classes) + static_cast<size_t>(c)];  // bias
            for (size_t j = 0; j < d; ++j)
                s += static_cast<double>(x[j]) * w.data()[j * static_cast<size_t>(n_classes) + static_cast<size_t>(c)];
            logits[static_cast<size_t>(c)] = s;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (auto& v : logits) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : logits) v /= sum;
        return logits;
    }
};

namespace detail {

// Mean negative log-likelihood and gradient of the multinomial objective.
inline double probe_objective(const Tensor<float>& x, const std::vector<int>& y, const Tensor<double>& w,
                              int n_classes, double l2, Tensor<double>* grad) {
    const size_t n = x.shape[0], d = x.shape[1];
    const size_t c = static_cast<size_t>(n_classes);
    if (grad) grad->zero();
    double nll = 0.0;
    std::vector<double> logits(c);
    for (size_t i = 0; i < n; ++i) {
        const float* xi = x.data() + i * d;
        for (size_t k = 0; k < c; ++k) {
            double s = w.data()[d * c + k];
            for (size_t j = 0; j < d; ++j) s += static_cast<double>(xi[j]) * w.data()[j * c + k];
            logits[k] = s;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (size_t k = 0; k < c; ++k) sum += std::exp(logits[k] - mx);
        const double log_z = std::log(sum) + mx;
        nll += log_z - logits[static_cast<size_t>(y[i])];
        if (grad) {
            for (size_t k = 0; k < c; ++k) {
                const double p = std::exp(logits[k] - log_z);
                const double err = (p - (static_cast<size_t>(y[i]) == k ? 1.0 : 0.0)) / static_cast<double>(n);
                for (size_t j = 0; j < d; ++j) grad->data()[j * c + k] += static_cast<double>(xi[j]) * err;
                grad->data()[d * c + k] += err;
            }
        }
    }
    nll /= static_cast<double>(n);
    if (l2 > 0.0) {
        double reg = 0.0;
        for (size_t j = 0; j < d * c; ++j) {  // bias row excluded
            reg += w.v[j] * w.v[j];
            if (grad) grad->v[j] += l2 * w.v[j];
        }
        nll += 0.5 * l2 * reg;
    }
    return nll;
}

}  // namespace detail

// Fit the probe on (x, y) by full-batch line-searched gradient descent.
inline LinearProbe fit_linear_probe(const Tensor<float>& x, const std::vector<int>& y, int n_classes,
                                    const ProbeConfig& cfg) {
    if (x.shape.size() != 2 || x.shape[0] != y.size()) throw InvariantError("linear_probe: bad embedding shape");
    std::vector<size_t> counts(static_cast<size_t>(n_classes), 0);
    for (int v : y) {
        if (v < 0 || v >= n_classes) throw InvariantError("linear_probe: label out of range");
        ++counts[static_cast<size_t>(v)];
    }
    size_t present = 0;
    for (size_t c : counts) present += c > 0 ? 1 : 0;
    if (present < 2) throw InvariantError("linear_probe: training labels contain a single class");

    const size_t d = x.shape[1], c = static_cast<size_t>(n_classes);
    LinearProbe probe;
    probe.n_classes = n_classes;
    probe.w = Tensor<double>::zeros({d + 1, c});

    Tensor<double> grad({d + 1, c}), trial({d + 1, c});
    double step = 1.0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double f0 = detail::probe_objective(x, y, probe.w, n_classes, cfg.l2, &grad);
        double gnorm = 0.0, gsq = 0.0;
        for (double g : grad.v) {
            gnorm = std::max(gnorm, std::abs(g));
            gsq += g * g;
        }
        probe.final_grad_norm = gnorm;
        probe.epochs_run = epoch;
        if (gnorm <= cfg.tol) return probe;

        // Armijo backtracking from the last accepted step (allowed to grow).
        step = std::min(step * 2.0, 1e4);
        bool accepted = false;
        for (int half = 0; half < 60; ++half) {
            for (size_t j = 0; j < trial.numel(); ++j) trial.v[j] = probe.w.v[j] - step * grad.v[j];
            const double f1 = detail::probe_objective(x, y, trial, n_classes, cfg.l2, nullptr);
            if (f1 <= f0 - 1e-4 * step * gsq) {
                probe.w.v = trial.v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) return probe;  // step underflow: converged numerically
    }
    return probe;
}

struct ProbeResult {
    LinearProbe probe;
    MetricReport report;  // held-out metrics
    size_t n_train = 0, n_test = 0;
};

// Shuffle, split, fit on train, report on holdout.
inline ProbeResult linear_probe(const Tensor<float>& embeddings, const std::vector<int>& labels, int n_classes,
                                const ProbeConfig& cfg, uint64_t seed) {
    if (embeddings.shape.size() != 2 || embeddings.shape[0] != labels.size())
        throw InvariantError("linear_probe: embeddings/labels mismatch");
    const size_t n = labels.size(), d = embeddings.shape[1];
    const size_t n_test = std::max<size_t>(1, static_cast<size_t>(std::llround(cfg.holdout_frac * n)));
    if (n_test >= n) throw InvariantError("linear_probe: holdout fraction leaves no training data");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    Rng rng(hash_mix(seed, 0x70726f62ULL));
    rng.shuffle(order);

    const size_t n_train = n - n_test;
    Tensor<float> xtr({n_train, d}), xte({n_test, d});
    std::vector<int> ytr(n_train), yte(n_test);
    for (size_t i = 0; i < n_train; ++i) {
        std::copy(embeddings.data() + order[i] * d, embeddings.data() + (order[i] + 1) * d, xtr.data() + i * d);
        ytr[i] = labels[order[i]];
    }
    for (size_t i = 0; i < n_test; ++i) {
        const size_t src = order[n_train + i];
        std::copy(embeddings.data() + src * d, embeddings.data() + (src + 1) * d, xte.data() + i * d);
        yte[i] = labels[src];
    }

    ProbeResult res;
    res.n_train = n_train;
    res.n_test = n_test;
    res.probe = fit_linear_probe(xtr, ytr, n_classes, cfg);
    std::vector<std::vector<double>> probs(n_test);
    std::vector<int> preds(n_test);
    for (size_t i = 0; i < n_test; ++i) {
        probs[i] = res.probe.predict_probs(xte.data() + i * d, d);
        preds[i] = static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
    }
    res.report = make_metric_report(probs, preds, yte, n_classes, cfg.n_boot, hash_mix(seed, 0x7270ULL));
    return res;
}

}  // namespace xmag::eval
