#pragma once

#include <cmath>

#include "xmag/nn/module.hpp"

// Dense layers with hand-written backward passes. Weight layout for Linear is
// [in, out] so that forward is y = x·W + b with row-major x, which keeps every
// GEMM in the vectorizable forms of tensor.hpp.

namespace xmag::nn {

template <typename T>
T gelu_scalar(T x) {
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(0.7071067811865475)));
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(0.7071067811865475)));
    const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.3989422804014327);
    return cdf + x * pdf;
}

// Numerically stable softmax over each row in place.
template <typename T>
void softmax_rows(T* X, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        T* x = X + i * cols;
        T mx = x[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        T sum = T(0);
        for (size_t j = 0; j < cols; ++j) {
            x[j] = std::exp(x[j] - mx);
            sum += x[j];
        }
        const T inv = T(1) / sum;
        for (size_t j = 0; j < cols; ++j) x[j] *= inv;
    }
}

template <typename T>
struct Linear {
    size_t in = 0, out = 0;
    Tensor<T> w, b;    // w: [in, out]
    Tensor<T> gw, gb;

    Linear() = default;
    Linear(size_t in_, size_t out_, Rng& rng, double w_std = 0.02)
        : in(in_), out(out_),
          w(Tensor<T>::randn({in_, out_}, rng, w_std)), b(Tensor<T>::zeros({out_})),
          gw(Tensor<T>::zeros({in_, out_})), gb(Tensor<T>::zeros({out_})) {}

    void refs(const std::string& p, std::vector<TensorRef<T>>& r) {
        r.push_back({p + ".w", &w, &gw, true});
        r.push_back({p + ".b", &b, &gb, true});
    }

    // X: [n, in] -> [n, out]
    Tensor<T> forward(const Tensor<T>& x) const {
        const size_t n = x.numel() / in;
        Tensor<T> y({n, out});
        matmul(x.data(), w.data(), y.data(), n, in, out);
        add_row_bias(y.data(), b.data(), n, out);
        return y;
    }

    // Accumulates parameter grads; returns dX. `x` must be the forward input.
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        const size_t n = x.numel() / in;
        matmul_tn_acc(x.data(), dy.data(), gw.data(), n, in, out);
        accumulate_row_sums(dy.data(), gb.data(), n, out);
        Tensor<T> wt({out, in});
        transpose(w.data(), wt.data(), in, out);
        Tensor<T> dx({n, in});
        matmul(dy.data(), wt.data(), dx.data(), n, out, in);
        return dx;
    }
};

template <typename T>
struct LayerNorm {
    size_t dim = 0;
    T eps = static_cast<T>(1e-6);
    Tensor<T> gamma, beta;
    Tensor<T> ggamma, gbeta;

    struct Cache {
        Tensor<T> xhat;       // [n, dim]
        std::vector<T> inv_std;  // [n]
    };

    LayerNorm() = default;
    explicit LayerNorm(size_t d) : dim(d), gamma(Tensor<T>::zeros({d})), beta(Tensor<T>::zeros({d})),
                                   ggamma(Tensor<T>::zeros({d})), gbeta(Tensor<T>::zeros({d})) {
        gamma.fill(T(1));
    }

    void refs(const std::string& p, std::vector<TensorRef<T>>& r) {
        r.push_back({p + ".gamma", &gamma, &ggamma, true});
        r.push_back({p + ".beta", &beta, &gbeta, true});
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
        const size_t n = x.numel() / dim;
        Tensor<T> y({n, dim});
        if (cache) {
            cache->xhat = Tensor<T>({n, dim});
            cache->inv_std.assign(n, T(0));
        }
        for (size_t i = 0; i < n; ++i) {
            const T* xi = x.data() + i * dim;
            T* yi = y.data() + i * dim;
            T mu = T(0);
            for (size_t j = 0; j < dim; ++j) mu += xi[j];
            mu /= static_cast<T>(dim);
            T var = T(0);
            for (size_t j = 0; j < dim; ++j) {
                const T d = xi[j] - mu;
                var += d * d;
            }
            var /= static_cast<T>(dim);
            const T inv = T(1) / std::sqrt(var + eps);
            for (size_t j = 0; j < dim; ++j) {
                const T xh = (xi[j] - mu) * inv;
                if (cache) cache->xhat.data()[i * dim + j] = xh;
                yi[j] = gamma.v[j] * xh + beta.v[j];
            }
            if (cache) cache->inv_std[i] = inv;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
        const size_t n = dy.numel() / dim;
        Tensor<T> dx({n, dim});
        for (size_t i = 0; i < n; ++i) {
            const T* dyi = dy.data() + i * dim;
            const T* xh = cache.xhat.data() + i * dim;
            T* dxi = dx.data() + i * dim;
            T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
            for (size_t j = 0; j < dim; ++j) {
                gbeta.v[j] += dyi[j];
                ggamma.v[j] += dyi[j] * xh[j];
                const T dxhat = dyi[j] * gamma.v[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh[j];
            }
            const T inv_n = T(1) / static_cast<T>(dim);
            for (size_t j = 0; j < dim; ++j) {
                const T dxhat = dyi[j] * gamma.v[j];
                dxi[j] = cache.inv_std[i] * (dxhat - inv_n * sum_dxhat - xh[j] * inv_n * sum_dxhat_xhat);
            }
        }
        return dx;
    }
};

// 1-D batch normalization over the batch dimension of a [B, dim] input.
// Training mode normalizes with biased batch statistics and updates running
// stats with the unbiased variance (momentum 0.1); evaluation mode uses the
// running statistics. eps = 1e-5.
template <typename T>
struct BatchNorm1d {
    size_t dim = 0;
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);
    Tensor<T> gamma, beta;
    Tensor<T> ggamma, gbeta;
    Tensor<T> running_mean, running_var;  // buffers

    struct Cache {
        Tensor<T> xhat;        // [B, dim]
        std::vector<T> inv_std;  // [dim]
        size_t batch = 0;
    };

    BatchNorm1d() = default;
    explicit BatchNorm1d(size_t d)
        : dim(d), gamma(Tensor<T>::zeros({d})), beta(Tensor<T>::zeros({d})),
          ggamma(Tensor<T>::zeros({d})), gbeta(Tensor<T>::zeros({d})),
          running_mean(Tensor<T>::zeros({d})), running_var(Tensor<T>::zeros({d})) {
        gamma.fill(T(1));
        running_var.fill(T(1));
    }

    void refs(const std::string& p, std::vector<TensorRef<T>>& r) {
        r.push_back({p + ".gamma", &gamma, &ggamma, true});
        r.push_back({p + ".beta", &beta, &gbeta, true});
        r.push_back({p + ".running_mean", &running_mean, nullptr, false});
        r.push_back({p + ".running_var", &running_var, nullptr, false});
    }

    Tensor<T> forward(const Tensor<T>& x, bool train, Cache* cache = nullptr) {
        const size_t b = x.numel() / dim;
        Tensor<T> y({b, dim});
        if (train) {
            if (b < 2) throw InvariantError("BatchNorm1d training requires batch >= 2");
            if (cache) {
                cache->xhat = Tensor<T>({b, dim});
                cache->inv_std.assign(dim, T(0));
                cache->batch = b;
            }
            for (size_t j = 0; j < dim; ++j) {
                T mu = T(0);
                for (size_t i = 0; i < b; ++i) mu += x.data()[i * dim + j];
                mu /= static_cast<T>(b);
                T var = T(0);
                for (size_t i = 0; i < b; ++i) {
                    const T d = x.data()[i * dim + j] - mu;
                    var += d * d;
                }
                const T var_biased = var / static_cast<T>(b);
                const T var_unbiased = var / static_cast<T>(b - 1);
                const T inv = T(1) / std::sqrt(var_biased + eps);
                for (size_t i = 0; i < b; ++i) {
                    const T xh = (x.data()[i * dim + j] - mu) * inv;
                    if (cache) cache->xhat.data()[i * dim + j] = xh;
                    y.data()[i * dim + j] = gamma.v[j] * xh + beta.v[j];
                }
                if (cache) cache->inv_std[j] = inv;
                running_mean.v[j] = (T(1) - momentum) * running_mean.v[j] + momentum * mu;
                running_var.v[j] = (T(1) - momentum) * running_var.v[j] + momentum * var_unbiased;
            }
        } else {
            for (size_t j = 0; j < dim; ++j) {
                const T inv = T(1) / std::sqrt(running_var.v[j] + eps);
                for (size_t i = 0; i < b; ++i)
                    y.data()[i * dim + j] = gamma.v[j] * (x.data()[i * dim + j] - running_mean.v[j]) * inv + beta.v[j];
            }
        }
        return y;
    }

    // Train-mode backward through the batch statistics.
    Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
        const size_t b = cache.batch;
        Tensor<T> dx({b, dim});
        for (size_t j = 0; j < dim; ++j) {
            T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
            for (size_t i = 0; i < b; ++i) {
                const T d = dy.data()[i * dim + j];
                const T xh = cache.xhat.data()[i * dim + j];
                gbeta.v[j] += d;
                ggamma.v[j] += d * xh;
                const T dxhat = d * gamma.v[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh;
            }
            const T inv_b = T(1) / static_cast<T>(b);
            for (size_t i = 0; i < b; ++i) {
                const T dxhat = dy.data()[i * dim + j] * gamma.v[j];
                dx.data()[i * dim + j] =
                    cache.inv_std[j] *
                    (dxhat - inv_b * sum_dxhat - cache.xhat.data()[i * dim + j] * inv_b * sum_dxhat_xhat);
            }
        }
        return dx;
    }
};

}  // namespace xmag::nn
