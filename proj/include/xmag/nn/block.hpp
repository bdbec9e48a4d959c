#pragma once

#include "xmag/nn/layers.hpp"

// Pre-norm transformer block: x + Attn(LN1(x)), then x + MLP(LN2(x)).
// forward() populates an explicit Cache when requested; backward() consumes
// one. Gradient checkpointing re-runs forward() on the saved block input to
// rebuild the cache, which executes the identical arithmetic and therefore
// reproduces bitwise-identical gradients.

namespace xmag::nn {

template <typename T>
struct TransformerBlock {
    size_t dim = 0, n_heads = 0, head_dim = 0, mlp_hidden = 0;
    LayerNorm<T> ln1, ln2;
    Linear<T> qkv;    // [d, 3d]
    Linear<T> proj;   // [d, d]
    Linear<T> fc1;    // [d, 4d]
    Linear<T> fc2;    // [4d, d]

    struct Cache {
        Tensor<T> ln1_out;                       // [N, d]
        typename LayerNorm<T>::Cache ln1_cache;
        Tensor<T> q, k, v;                       // each [H, N, hd] head-contiguous
        Tensor<T> attn;                          // [H, N, N] softmax rows
        Tensor<T> attn_out;                      // [N, d] concat of heads, pre-proj
        Tensor<T> x2;                            // [N, d] after first residual
        Tensor<T> ln2_out;                       // [N, d]
        typename LayerNorm<T>::Cache ln2_cache;
        Tensor<T> mlp_pre;                       // [N, 4d] before GELU
        Tensor<T> mlp_act;                       // [N, 4d] after GELU

        size_t floats() const {
            return ln1_out.numel() + ln1_cache.xhat.numel() + ln1_cache.inv_std.size() + q.numel() + k.numel() +
                   v.numel() + attn.numel() + attn_out.numel() + x2.numel() + ln2_out.numel() +
                   ln2_cache.xhat.numel() + ln2_cache.inv_std.size() + mlp_pre.numel() + mlp_act.numel();
        }
    };

    TransformerBlock() = default;
    TransformerBlock(size_t d, size_t heads, Rng& rng)
        : dim(d), n_heads(heads), head_dim(d / heads), mlp_hidden(4 * d),
          ln1(d), ln2(d),
          qkv(d, 3 * d, rng), proj(d, d, rng), fc1(d, 4 * d, rng), fc2(4 * d, d, rng) {
        if (d % heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
    }

    void refs(const std::string& p, std::vector<TensorRef<T>>& r) {
        ln1.refs(p + ".ln1", r);
        qkv.refs(p + ".qkv", r);
        proj.refs(p + ".proj", r);
        ln2.refs(p + ".ln2", r);
        fc1.refs(p + ".fc1", r);
        fc2.refs(p + ".fc2", r);
    }

    // x: [N, d]. When cache is null only the output is produced.
    Tensor<T> forward(const Tensor<T>& x, Cache* c) const {
        const size_t n = x.numel() / dim;
        const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

        typename LayerNorm<T>::Cache ln1_local;
        Tensor<T> ln1_out = ln1.forward(x, c ? &ln1_local : nullptr);
        Tensor<T> qkv_out = qkv.forward(ln1_out);  // [N, 3d]

        Tensor<T> q({n_heads, n, head_dim}), k({n_heads, n, head_dim}), v({n_heads, n, head_dim});
        for (size_t h = 0; h < n_heads; ++h)
            for (size_t i = 0; i < n; ++i) {
                const T* row = qkv_out.data() + i * 3 * dim;
                std::copy(row + h * head_dim, row + (h + 1) * head_dim, q.data() + (h * n + i) * head_dim);
                std::copy(row + dim + h * head_dim, row + dim + (h + 1) * head_dim,
                          k.data() + (h * n + i) * head_dim);
                std::copy(row + 2 * dim + h * head_dim, row + 2 * dim + (h + 1) * head_dim,
                          v.data() + (h * n + i) * head_dim);
            }

        Tensor<T> attn({n_heads, n, n});
        Tensor<T> attn_out({n, dim});
        Tensor<T> kt({head_dim, n});
        for (size_t h = 0; h < n_heads; ++h) {
            const T* qh = q.data() + h * n * head_dim;
            const T* kh = k.data() + h * n * head_dim;
            const T* vh = v.data() + h * n * head_dim;
            T* ah = attn.data() + h * n * n;
            transpose(kh, kt.data(), n, head_dim);
            matmul(qh, kt.data(), ah, n, head_dim, n);
            for (size_t i = 0; i < n * n; ++i) ah[i] *= scale;
            softmax_rows(ah, n, n);
            Tensor<T> oh({n, head_dim});
            matmul(ah, vh, oh.data(), n, n, head_dim);
            for (size_t i = 0; i < n; ++i)
                std::copy(oh.data() + i * head_dim, oh.data() + (i + 1) * head_dim,
                          attn_out.data() + i * dim + h * head_dim);
        }

        Tensor<T> x2 = proj.forward(attn_out);
        for (size_t i = 0; i < x2.numel(); ++i) x2.v[i] += x.v[i];  // residual 1

        typename LayerNorm<T>::Cache ln2_local;
        Tensor<T> ln2_out = ln2.forward(x2, c ? &ln2_local : nullptr);
        Tensor<T> mlp_pre = fc1.forward(ln2_out);
        Tensor<T> mlp_act({n, mlp_hidden});
        for (size_t i = 0; i < mlp_pre.numel(); ++i) mlp_act.v[i] = gelu_scalar(mlp_pre.v[i]);
        Tensor<T> out = fc2.forward(mlp_act);
        for (size_t i = 0; i < out.numel(); ++i) out.v[i] += x2.v[i];  // residual 2

        if (c) {
            c->ln1_out = std::move(ln1_out);
            c->ln1_cache = std::move(ln1_local);
            c->q = std::move(q);
            c->k = std::move(k);
            c->v = std::move(v);
            c->attn = std::move(attn);
            c->attn_out = std::move(attn_out);
            c->x2 = std::move(x2);
            c->ln2_out = std::move(ln2_out);
            c->ln2_cache = std::move(ln2_local);
            c->mlp_pre = std::move(mlp_pre);
            c->mlp_act = std::move(mlp_act);
        }
        return out;
    }

    // dy: [N, d] gradient w.r.t. block output. Accumulates parameter grads,
    // returns gradient w.r.t. block input.
    Tensor<T> backward(const Tensor<T>& dy, const Cache& c) {
        const size_t n = dy.numel() / dim;
        const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

        // MLP half: out = x2 + fc2(gelu(fc1(ln2(x2))))
        Tensor<T> d_act = fc2.backward(c.mlp_act, dy);
        for (size_t i = 0; i < d_act.numel(); ++i) d_act.v[i] *= gelu_grad_scalar(c.mlp_pre.v[i]);
        Tensor<T> d_ln2out = fc1.backward(c.ln2_out, d_act);
        Tensor<T> dx2 = ln2.backward(d_ln2out, c.ln2_cache);
        for (size_t i = 0; i < dx2.numel(); ++i) dx2.v[i] += dy.v[i];  // residual 2

        // Attention half: x2 = x + proj(attn_out)
        Tensor<T> d_attn_out = proj.backward(c.attn_out, dx2);

        Tensor<T> d_qkv({n, 3 * dim});
        Tensor<T> d_oh({n, head_dim}), d_a({n, n}), d_s({n, n});
        Tensor<T> vt({head_dim, n});
        for (size_t h = 0; h < n_heads; ++h) {
            const T* qh = c.q.data() + h * n * head_dim;
            const T* kh = c.k.data() + h * n * head_dim;
            const T* vh = c.v.data() + h * n * head_dim;
            const T* ah = c.attn.data() + h * n * n;
            for (size_t i = 0; i < n; ++i)
                std::copy(d_attn_out.data() + i * dim + h * head_dim,
                          d_attn_out.data() + i * dim + (h + 1) * head_dim, d_oh.data() + i * head_dim);
            // dA = dOh · Vᵀ ; dV = Aᵀ · dOh
            transpose(vh, vt.data(), n, head_dim);
            matmul(d_oh.data(), vt.data(), d_a.data(), n, head_dim, n);
            Tensor<T> d_v({n, head_dim});
            matmul_tn_acc(ah, d_oh.data(), d_v.data(), n, n, head_dim);
            // softmax backward: dS = A ⊙ (dA − rowsum(dA ⊙ A)), then scale
            for (size_t i = 0; i < n; ++i) {
                const T* arow = ah + i * n;
                const T* darow = d_a.data() + i * n;
                T dot_da_a = T(0);
                for (size_t j = 0; j < n; ++j) dot_da_a += darow[j] * arow[j];
                T* dsrow = d_s.data() + i * n;
                for (size_t j = 0; j < n; ++j) dsrow[j] = arow[j] * (darow[j] - dot_da_a) * scale;
            }
            // dQ = dS · K ; dK = dSᵀ · Q
            Tensor<T> d_q({n, head_dim}), d_k({n, head_dim});
            matmul(d_s.data(), kh, d_q.data(), n, n, head_dim);
            matmul_tn_acc(d_s.data(), qh, d_k.data(), n, n, head_dim);
            for (size_t i = 0; i < n; ++i) {
                T* row = d_qkv.data() + i * 3 * dim;
                std::copy(d_q.data() + i * head_dim, d_q.data() + (i + 1) * head_dim, row + h * head_dim);
                std::copy(d_k.data() + i * head_dim, d_k.data() + (i + 1) * head_dim, row + dim + h * head_dim);
                std::copy(d_v.data() + i * head_dim, d_v.data() + (i + 1) * head_dim,
                          row + 2 * dim + h * head_dim);
            }
        }

        Tensor<T> d_ln1out = qkv.backward(c.ln1_out, d_qkv);
        Tensor<T> dx = ln1.backward(d_ln1out, c.ln1_cache);
        for (size_t i = 0; i < dx.numel(); ++i) dx.v[i] += dx2.v[i];  // residual 1
        return dx;
    }
};

}  // namespace xmag::nn
