#pragma once

#include "xmag/nn/module.hpp"

// Decoupled-weight-decay adaptive-moment optimizer (AdamW). Frozen parameters
// are skipped entirely — no moment update, no gradient read — which makes
// freeze isolation bit-exact by construction.

namespace xmag::nn {

template <typename T>
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.04;
    int64_t t = 0;
    std::vector<Tensor<T>> m, v;  // indexed like the ref list
    std::vector<size_t> sizes;    // shape guard

    AdamW() = default;
    AdamW(const std::vector<TensorRef<T>>& refs, double wd) : weight_decay(wd) { init(refs); }

    void init(const std::vector<TensorRef<T>>& refs) {
        m.clear();
        v.clear();
        sizes.clear();
        for (const auto& r : refs) {
            m.push_back(Tensor<T>::zeros(r.value->shape));
            v.push_back(Tensor<T>::zeros(r.value->shape));
            sizes.push_back(r.value->numel());
        }
        t = 0;
    }

    void step(const std::vector<TensorRef<T>>& refs, double lr) {
        if (refs.size() != m.size()) throw InvariantError("AdamW: ref list changed length");
        ++t;
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
        const T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
        const T lrT = static_cast<T>(lr), wdT = static_cast<T>(weight_decay), epsT = static_cast<T>(eps);
        for (size_t i = 0; i < refs.size(); ++i) {
            if (!refs[i].trainable || refs[i].grad == nullptr) continue;
            if (refs[i].value->numel() != sizes[i]) throw InvariantError("AdamW: tensor shape changed");
            T* w = refs[i].value->data();
            const T* g = refs[i].grad->data();
            T* mi = m[i].data();
            T* vi = v[i].data();
            const size_t n = sizes[i];
            for (size_t j = 0; j < n; ++j) {
                mi[j] = b1 * mi[j] + (T(1) - b1) * g[j];
                vi[j] = b2 * vi[j] + (T(1) - b2) * g[j] * g[j];
                const T mhat = mi[j] / bc1;
                const T vhat = vi[j] / bc2;
                w[j] -= lrT * (mhat / (std::sqrt(vhat) + epsT) + wdT * w[j]);
            }
        }
    }
};

}  // namespace xmag::nn
