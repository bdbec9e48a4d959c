#pragma once

#include <string>
#include <vector>

#include "xmag/tensor.hpp"

// Parameter bookkeeping shared by every network component. Modules expose
// their state as a flat list of named TensorRefs: parameters carry a gradient
// tensor, buffers (e.g. batch-norm running statistics) do not. Optimizers
// touch only refs with trainable=true; serialization and EMA walk everything.

namespace xmag::nn {

template <typename T>
struct TensorRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;  // nullptr for buffers
    bool trainable = false;     // buffers and frozen params: false

    bool is_buffer() const { return grad == nullptr; }
};

template <typename T>
size_t count_scalars(const std::vector<TensorRef<T>>& refs, bool trainable_only) {
    size_t n = 0;
    for (const auto& r : refs)
        if (!trainable_only || r.trainable) n += r.value->numel();
    return n;
}

template <typename T>
void zero_grads(const std::vector<TensorRef<T>>& refs) {
    for (const auto& r : refs)
        if (r.grad) r.grad->zero();
}

// θ_ema ← m·θ_ema + (1−m)·θ, elementwise over parameters and buffers alike.
// m=1 leaves the EMA untouched; m=0 copies the source exactly.
template <typename T>
void ema_update(const std::vector<TensorRef<T>>& ema, const std::vector<TensorRef<T>>& src, double decay) {
    if (decay < 0.0 || decay > 1.0) throw ConfigError("ema decay must lie in [0, 1]");
    if (ema.size() != src.size()) throw InvariantError("ema_update: parameter trees differ in length");
    for (size_t i = 0; i < ema.size(); ++i) {
        if (ema[i].name != src[i].name || !ema[i].value->same_shape(*src[i].value))
            throw InvariantError("ema_update: mismatched tensor " + ema[i].name + " vs " + src[i].name);
        if (decay == 1.0) continue;
        T* e = ema[i].value->data();
        const T* s = src[i].value->data();
        const size_t n = ema[i].value->numel();
        if (decay == 0.0) {
            std::copy(s, s + n, e);
        } else {
            const T m = static_cast<T>(decay), om = static_cast<T>(1.0 - decay);
            for (size_t j = 0; j < n; ++j) e[j] = m * e[j] + om * s[j];
        }
    }
}

// Copy parameter values between two models of identical architecture.
template <typename T>
void copy_values(const std::vector<TensorRef<T>>& dst, const std::vector<TensorRef<T>>& src) {
    if (dst.size() != src.size()) throw InvariantError("copy_values: parameter trees differ in length");
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || !dst[i].value->same_shape(*src[i].value))
            throw InvariantError("copy_values: mismatched tensor " + dst[i].name);
        dst[i].value->v = src[i].value->v;
    }
}

// Cross-precision copy (e.g. float-trained weights into a double model for
// finite-difference checks).
template <typename T, typename U>
void copy_values_cast(const std::vector<TensorRef<T>>& dst, const std::vector<TensorRef<U>>& src) {
    if (dst.size() != src.size()) throw InvariantError("copy_values_cast: parameter trees differ in length");
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || dst[i].value->numel() != src[i].value->numel())
            throw InvariantError("copy_values_cast: mismatched tensor " + dst[i].name);
        for (size_t j = 0; j < dst[i].value->numel(); ++j)
            dst[i].value->v[j] = static_cast<T>(src[i].value->v[j]);
    }
}

}  // namespace xmag::nn
