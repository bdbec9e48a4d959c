#pragma once

#include "xmag/nn/module.hpp"

// Distillation losses: spatial pooling of the student token grid into 16
// teacher-aligned regions, the teacher global mean, and the dual negative
// cosine similarity objectives.

namespace xmag::distill {

constexpr double kCosineNormEps = 1e-12;

// tokens: [G², d] row-major (equivalently the [G, G, d] grid — the reshape is
// a memory identity). Output: [16, d]; region i = (i_r, i_c) with i_r = ⌊i/4⌋,
// i_c = i mod 4 averages the (G/4)×(G/4) token window of that region, matching
// the teacher's child order from decompose_parent.
template <typename T>
Tensor<T> spatial_pool(const Tensor<T>& tokens, int g) {
    if (g <= 0 || g % 4 != 0) throw InvariantError("spatial_pool: G must be positive and divisible by 4");
    const size_t d = tokens.numel() / (static_cast<size_t>(g) * g);
    if (tokens.numel() != static_cast<size_t>(g) * g * d) throw InvariantError("spatial_pool: bad token count");
    const int r = g / 4;  // region side in tokens
    Tensor<T> out({16, d});
    const T inv = T(1) / static_cast<T>(r * r);
    for (int ir = 0; ir < 4; ++ir)
        for (int ic = 0; ic < 4; ++ic) {
            T* o = out.data() + static_cast<size_t>(ir * 4 + ic) * d;
            for (int ty = ir * r; ty < (ir + 1) * r; ++ty)
                for (int tx = ic * r; tx < (ic + 1) * r; ++tx) {
                    const T* t = tokens.data() + (static_cast<size_t>(ty) * g + tx) * d;
                    for (size_t j = 0; j < d; ++j) o[j] += t[j];
                }
            for (size_t j = 0; j < d; ++j) o[j] *= inv;
        }
    return out;
}

// Adjoint of spatial_pool: each token in region i receives d_pooled[i]/(G/4)².
template <typename T>
Tensor<T> spatial_pool_backward(const Tensor<T>& d_pooled, int g) {
    const size_t d = d_pooled.numel() / 16;
    const int r = g / 4;
    const T inv = T(1) / static_cast<T>(r * r);
    Tensor<T> out({static_cast<size_t>(g) * g, d});
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            const int region = (ty / r) * 4 + tx / r;
            const T* src = d_pooled.data() + static_cast<size_t>(region) * d;
            T* dst = out.data() + (static_cast<size_t>(ty) * g + tx) * d;
            for (size_t j = 0; j < d; ++j) dst[j] = src[j] * inv;
        }
    return out;
}

// h_global^T = (1/16) Σ h_i^T over the 16 region features.
template <typename T>
Tensor<T> teacher_global(const Tensor<T>& h_t) {
    if (h_t.shape.size() != 2 || h_t.shape[0] != 16) throw InvariantError("teacher_global expects [16, d_T]");
    const size_t d = h_t.shape[1];
    Tensor<T> out({d});
    for (size_t i = 0; i < 16; ++i)
        for (size_t j = 0; j < d; ++j) out.v[j] += h_t.data()[i * d + j];
    for (size_t j = 0; j < d; ++j) out.v[j] /= T(16);
    return out;
}

// Negative cosine similarity −(a·b)/(‖a‖‖b‖) ∈ [−1, 1]. Near-zero norms are a
// defined error, never a silent NaN.
template <typename T>
T cosine_loss(const T* a, const T* b, size_t n) {
    const T na = std::sqrt(dot(a, a, n)), nb = std::sqrt(dot(b, b, n));
    if (!(na > static_cast<T>(kCosineNormEps)) || !(nb > static_cast<T>(kCosineNormEps)))
        throw InvariantError("cosine_loss: input norm below 1e-12");
    return -dot(a, b, n) / (na * nb);
}

// Accumulates upstream · ∂/∂a [−a·b/(‖a‖‖b‖)] into da. The b side (teacher)
// is constant in this project, so no db is produced.
template <typename T>
void cosine_loss_backward(const T* a, const T* b, size_t n, T upstream, T* da) {
    const T na = std::sqrt(dot(a, a, n)), nb = std::sqrt(dot(b, b, n));
    if (!(na > static_cast<T>(kCosineNormEps)) || !(nb > static_cast<T>(kCosineNormEps)))
        throw InvariantError("cosine_loss: input norm below 1e-12");
    const T ab = dot(a, b, n);
    const T inv = T(1) / (na * nb);
    const T coef_a = ab / (na * na);
    for (size_t i = 0; i < n; ++i) da[i] += upstream * (-(b[i] - coef_a * a[i]) * inv);
}

// L_local = (1/16) Σ_i cosine_loss(z_i, h_i^T); both sides [16, d_T].
template <typename T>
T local_loss(const Tensor<T>& h_t, const Tensor<T>& z_s) {
    if (!h_t.same_shape(z_s) || h_t.shape.size() != 2 || h_t.shape[0] != 16)
        throw InvariantError("local_loss expects matching [16, d_T] inputs");
    const size_t d = h_t.shape[1];
    T sum = T(0);
    for (size_t i = 0; i < 16; ++i) sum += cosine_loss(z_s.data() + i * d, h_t.data() + i * d, d);
    return sum / T(16);
}

struct DistillLossBreakdown {
    double l_global = 0.0;
    double l_local = 0.0;
    double l = 0.0;
};

inline DistillLossBreakdown total_loss(double l_global, double l_local, double lambda_global, double lambda_local) {
    if (!(lambda_global >= 0.0) || !(lambda_local >= 0.0)) throw ConfigError("loss weights must be nonnegative");
    return {l_global, l_local, lambda_global * l_global + lambda_local * l_local};
}

}  // namespace xmag::distill
