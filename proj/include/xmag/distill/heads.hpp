#pragma once

#include "xmag/nn/layers.hpp"

// Projection head g(x) = W₂·GELU(BN(W₁x + b₁)) + b₂ mapping student features
// (d_S) into the teacher space (d_T). Batch norm uses batch statistics in
// training and running statistics in evaluation.

namespace xmag::distill {

template <typename T>
struct ProjectionHead {
    size_t d_in = 0, d_out = 0;
    nn::Linear<T> fc1;        // [d_S, d_T]
    nn::BatchNorm1d<T> bn;    // over d_T
    nn::Linear<T> fc2;        // [d_T, d_T]

    struct Cache {
        Tensor<T> x;        // [B, d_S] forward input
        Tensor<T> h1;       // [B, d_T] fc1 output
        typename nn::BatchNorm1d<T>::Cache bn_cache;
        Tensor<T> bn_out;   // [B, d_T] pre-GELU
        Tensor<T> act;      // [B, d_T] post-GELU
    };

    ProjectionHead() = default;
    ProjectionHead(size_t d_s, size_t d_t, Rng& rng)
        : d_in(d_s), d_out(d_t), fc1(d_s, d_t, rng), bn(d_t), fc2(d_t, d_t, rng) {}

    void refs(const std::string& p, std::vector<nn::TensorRef<T>>& r) {
        fc1.refs(p + ".fc1", r);
        bn.refs(p + ".bn", r);
        fc2.refs(p + ".fc2", r);
    }
    std::vector<nn::TensorRef<T>> refs(const std::string& p) {
        std::vector<nn::TensorRef<T>> r;
        refs(p, r);
        return r;
    }

    // x: [B, d_S] -> [B, d_T]. Training mode requires B >= 2 (batch norm).
    Tensor<T> forward(const Tensor<T>& x, bool train, Cache* c = nullptr) {
        if (x.numel() % d_in != 0) throw InvariantError("projection head: input dimension mismatch");
        Tensor<T> h1 = fc1.forward(x);
        typename nn::BatchNorm1d<T>::Cache bn_local;
        Tensor<T> bn_out = bn.forward(h1, train, c ? &bn_local : nullptr);
        Tensor<T> act({bn_out.shape[0], d_out});
        for (size_t i = 0; i < bn_out.numel(); ++i) act.v[i] = nn::gelu_scalar(bn_out.v[i]);
        Tensor<T> y = fc2.forward(act);
        if (c) {
            c->x = x;
            c->h1 = std::move(h1);
            c->bn_cache = std::move(bn_local);
            c->bn_out = std::move(bn_out);
            c->act = std::move(act);
        }
        return y;
    }

    // Train-mode backward; returns gradient w.r.t. the input batch.
    Tensor<T> backward(const Tensor<T>& dy, const Cache& c) {
        Tensor<T> d_act = fc2.backward(c.act, dy);
        for (size_t i = 0; i < d_act.numel(); ++i) d_act.v[i] *= nn::gelu_grad_scalar(c.bn_out.v[i]);
        Tensor<T> d_h1 = bn.backward(d_act, c.bn_cache);
        return fc1.backward(c.x, d_h1);
    }
};

}  // namespace xmag::distill
