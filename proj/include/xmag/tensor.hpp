#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "xmag/common.hpp"

namespace xmag {

// Dense row-major tensor. The network code is templated on T so the same
// graph runs in float for training and double for finite-difference checks.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)), v(numel_of(shape), T(0)) {}

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    size_t numel() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(T(0)); }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

    static Tensor randn(std::vector<size_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& x : t.v) x = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T& at2(size_t i, size_t j) { return v[i * shape[1] + j]; }
    const T& at2(size_t i, size_t j) const { return v[i * shape[1] + j]; }
};

// C[m,n] += A[m,k] * B[k,n]. Inner loop runs over independent output columns
// so it vectorizes without relaxing IEEE ordering (each C element is a serial
// accumulation over k). All GEMM variants below follow the same pattern.
template <typename T>
void matmul_acc(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T ap = a[p];
            const T* b = B + p * n;
            for (size_t j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

template <typename T>
void matmul(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
    std::fill(C, C + m * n, T(0));
    matmul_acc(A, B, C, m, k, n);
}

// C[r,c] += A[n,r]^T * B[n,c]  (rank-n update; used for weight gradients)
template <typename T>
void matmul_tn_acc(const T* A, const T* B, T* C, size_t n, size_t r, size_t c) {
    for (size_t s = 0; s < n; ++s) {
        const T* a = A + s * r;
        const T* b = B + s * c;
        for (size_t i = 0; i < r; ++i) {
            const T ai = a[i];
            T* crow = C + i * c;
            for (size_t j = 0; j < c; ++j) crow[j] += ai * b[j];
        }
    }
}

template <typename T>
void transpose(const T* src, T* dst, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

template <typename T>
void add_row_bias(T* X, const T* b, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        T* x = X + i * cols;
        for (size_t j = 0; j < cols; ++j) x[j] += b[j];
    }
}

template <typename T>
void accumulate_row_sums(const T* X, T* out, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i) {
        const T* x = X + i * cols;
        for (size_t j = 0; j < cols; ++j) out[j] += x[j];
    }
}

template <typename T>
T dot(const T* a, const T* b, size_t n) {
    T s = T(0);
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace xmag
