#pragma once

#include "xmag/nn/layers.hpp"

// Attention-based MIL aggregator: a_i = softmax_i(wᵀ tanh(V h_i)), bag vector
// z = Σ a_i h_i, class scores = classifier(z). An optional gated variant
// multiplies the tanh branch by sigmoid(U h_i). Attention weights form a
// simplex over the bag by construction.

namespace xmag::mil {

template <typename T>
struct AbmilOutput {
    Tensor<T> scores;     // [n_classes]
    Tensor<T> attention;  // [M], nonnegative, sums to 1
};

template <typename T>
struct AbmilHead {
    size_t d_s = 0, d_a = 0, n_classes = 0;
    bool gated = false;
    Tensor<T> V, gV;      // [d_S, d_a]
    Tensor<T> U, gU;      // [d_S, d_a], gated variant only
    Tensor<T> w, gw;      // [d_a]
    nn::Linear<T> classifier;  // [d_S, n_classes]

    struct Cache {
        Tensor<T> h;     // [M, d_S]
        Tensor<T> u;     // [M, d_a] tanh branch
        Tensor<T> s;     // [M, d_a] sigmoid branch (gated only)
        Tensor<T> attn;  // [M]
        Tensor<T> z;     // [1, d_S]
    };

    AbmilHead() = default;
    AbmilHead(size_t d_s_, size_t n_classes_, Rng& rng, size_t d_a_ = 64, bool gated_ = false)
        : d_s(d_s_), d_a(d_a_), n_classes(n_classes_), gated(gated_),
          V(Tensor<T>::randn({d_s_, d_a_}, rng, 0.1)), gV(Tensor<T>::zeros({d_s_, d_a_})),
          w(Tensor<T>::randn({d_a_}, rng, 0.1)), gw(Tensor<T>::zeros({d_a_})),
          classifier(d_s_, n_classes_, rng, 0.1) {
        if (gated) {
            U = Tensor<T>::randn({d_s_, d_a_}, rng, 0.1);
            gU = Tensor<T>::zeros({d_s_, d_a_});
        }
    }

    void refs(const std::string& p, std::vector<nn::TensorRef<T>>& r) {
        r.push_back({p + ".V", &V, &gV, true});
        if (gated) r.push_back({p + ".U", &U, &gU, true});
        r.push_back({p + ".w", &w, &gw, true});
        classifier.refs(p + ".classifier", r);
    }
    std::vector<nn::TensorRef<T>> refs(const std::string& p) {
        std::vector<nn::TensorRef<T>> r;
        refs(p, r);
        return r;
    }

    // h: [M, d_S] bag of patch embeddings.
    AbmilOutput<T> forward(const Tensor<T>& h, Cache* c = nullptr) {
        if (h.numel() == 0 || h.shape.size() != 2 || h.shape[1] != d_s)
            throw InvariantError("abmil_forward: bag must be non-empty with embedding dim " + std::to_string(d_s));
        const size_t m = h.shape[0];

        Tensor<T> u({m, d_a});
        matmul(h.data(), V.data(), u.data(), m, d_s, d_a);
        for (auto& x : u.v) x = std::tanh(x);
        Tensor<T> sgate;
        if (gated) {
            sgate = Tensor<T>({m, d_a});
            matmul(h.data(), U.data(), sgate.data(), m, d_s, d_a);
            for (auto& x : sgate.v) x = T(1) / (T(1) + std::exp(-x));
        }

        Tensor<T> attn({m});
        for (size_t i = 0; i < m; ++i) {
            T e = T(0);
            for (size_t j = 0; j < d_a; ++j) {
                const T branch = gated ? u.data()[i * d_a + j] * sgate.data()[i * d_a + j] : u.data()[i * d_a + j];
                e += w.v[j] * branch;
            }
            attn.v[i] = e;
        }
        nn::softmax_rows(attn.data(), 1, m);

        Tensor<T> z({size_t(1), d_s});
        for (size_t i = 0; i < m; ++i) axpy(attn.v[i], h.data() + i * d_s, z.data(), d_s);

        AbmilOutput<T> out;
        Tensor<T> scores2 = classifier.forward(z);  // [1, n_classes]
        out.scores = Tensor<T>({n_classes});
        std::copy(scores2.v.begin(), scores2.v.end(), out.scores.v.begin());
        out.attention = attn;
        if (c) {
            c->h = h;
            c->u = std::move(u);
            c->s = std::move(sgate);
            c->attn = std::move(attn);
            c->z = std::move(z);
        }
        return out;
    }

    // d_scores: [n_classes]. Accumulates parameter grads, returns dH [M, d_S]
    // for end-to-end backpropagation into the encoder.
    Tensor<T> backward(const Tensor<T>& d_scores, const Cache& c) {
        const size_t m = c.h.shape[0];
        Tensor<T> ds2({size_t(1), n_classes});
        std::copy(d_scores.v.begin(), d_scores.v.end(), ds2.v.begin());
        Tensor<T> dz = classifier.backward(c.z, ds2);  // [1, d_S]

        // z = Σ a_i h_i
        Tensor<T> dh({m, d_s});
        Tensor<T> da({m});
        for (size_t i = 0; i < m; ++i) {
            da.v[i] = dot(dz.data(), c.h.data() + i * d_s, d_s);
            axpy(c.attn.v[i], dz.data(), dh.data() + i * d_s, d_s);
        }

        // softmax over the bag
        T dot_da_a = T(0);
        for (size_t i = 0; i < m; ++i) dot_da_a += da.v[i] * c.attn.v[i];
        Tensor<T> de({m});
        for (size_t i = 0; i < m; ++i) de.v[i] = c.attn.v[i] * (da.v[i] - dot_da_a);

        // e_i = wᵀ branch_i with branch = tanh(Vh) [⊙ sigm(Uh)]
        Tensor<T> dbranch({m, d_a});
        for (size_t i = 0; i < m; ++i) {
            const T* ui = c.u.data() + i * d_a;
            for (size_t j = 0; j < d_a; ++j) {
                const T branch = gated ? ui[j] * c.s.data()[i * d_a + j] : ui[j];
                gw.v[j] += de.v[i] * branch;
                dbranch.data()[i * d_a + j] = de.v[i] * w.v[j];
            }
        }

        Tensor<T> dpre_v({m, d_a});  // grad at V·h (pre-tanh)
        for (size_t i = 0; i < m * d_a; ++i) {
            const T ui = c.u.v[i];
            const T g = gated ? c.s.v[i] : T(1);
            dpre_v.v[i] = dbranch.v[i] * g * (T(1) - ui * ui);
        }
        matmul_tn_acc(c.h.data(), dpre_v.data(), gV.data(), m, d_s, d_a);
        Tensor<T> vt({d_a, d_s});
        transpose(V.data(), vt.data(), d_s, d_a);
        matmul_acc(dpre_v.data(), vt.data(), dh.data(), m, d_a, d_s);

        if (gated) {
            Tensor<T> dpre_u({m, d_a});
            for (size_t i = 0; i < m * d_a; ++i) {
                const T s = c.s.v[i];
                dpre_u.v[i] = dbranch.v[i] * c.u.v[i] * s * (T(1) - s);
            }
            matmul_tn_acc(c.h.data(), dpre_u.data(), gU.data(), m, d_s, d_a);
            Tensor<T> ut({d_a, d_s});
            transpose(U.data(), ut.data(), d_s, d_a);
            matmul_acc(dpre_u.data(), ut.data(), dh.data(), m, d_a, d_s);
        }
        return dh;
    }
};

// Softmax cross-entropy on a single logit vector. Returns the loss and, if
// d_logits is non-null, writes p − onehot(label) scaled by `weight`.
template <typename T>
double cross_entropy_with_logits(const Tensor<T>& logits, int label, Tensor<T>* d_logits = nullptr,
                                 double weight = 1.0) {
    const size_t n = logits.numel();
    if (label < 0 || static_cast<size_t>(label) >= n) throw InvariantError("cross_entropy: label out of range");
    T mx = logits.v[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits.v[i]);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits.v[i] - mx));
    const double log_z = std::log(sum) + static_cast<double>(mx);
    const double loss = weight * (log_z - static_cast<double>(logits.v[label]));
    if (d_logits) {
        *d_logits = Tensor<T>({n});
        for (size_t i = 0; i < n; ++i) {
            const double p = std::exp(static_cast<double>(logits.v[i]) - log_z);
            d_logits->v[i] = static_cast<T>(weight * (p - (static_cast<size_t>(label) == i ? 1.0 : 0.0)));
        }
    }
    return loss;
}

// Class probabilities from logits (for scoring/AUC).
template <typename T>
std::vector<double> softmax_probs(const Tensor<T>& logits) {
    const size_t n = logits.numel();
    T mx = logits.v[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits.v[i]);
    std::vector<double> p(n);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        p[i] = std::exp(static_cast<double>(logits.v[i] - mx));
        sum += p[i];
    }
    for (auto& x : p) x /= sum;
    return p;
}

}  // namespace xmag::mil
