#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lrc/util.hpp"

namespace lrc {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += fmt_int(static_cast<long long>(s[i]));
    }
    return out + "]";
}

// Dense row-major tensor. Storage precision is the template parameter; the
// library instantiates float for training and checkpoints, double for
// gradient checking and analysis oracles.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {
        check_dims();
    }
    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check_dims();
        if (data.size() != shape_numel(shape)) {
            throw ValidationError("tensor: data length " + fmt_int((long long)data.size()) +
                                  " does not match shape " + shape_str(shape));
        }
    }

    size_t numel() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    // 2-D accessors; rows/cols collapse leading dims against the last one.
    size_t cols() const { return shape.empty() ? 1 : shape.back(); }
    size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }
    T& at(size_t r, size_t c) { return data[r * cols() + c]; }
    T at(size_t r, size_t c) const { return data[r * cols() + c]; }

    bool all_finite() const {
        for (T x : data) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

private:
    void check_dims() const {
        for (size_t dim : shape) {
            if (dim == 0) {
                throw ValidationError("tensor: zero dimension in shape " + shape_str(shape));
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Matrix kernels. Everything is expressed in broadcast/axpy form (no inner
// dot-product reductions) so the compiler vectorizes without reassociation
// flags and results stay bit-reproducible run to run.
// ---------------------------------------------------------------------------

// c (m x n) = a (m x k) * b (k x n)
template <typename T>
inline void gemm_nn(size_t m, size_t k, size_t n, const T* a, const T* b, T* c) {
    std::fill(c, c + m * n, T(0));
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c (m x n) += a (m x k) * b (k x n)
template <typename T>
inline void gemm_nn_acc(size_t m, size_t k, size_t n, const T* a, const T* b, T* c) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c (k x n) += a^T * g, with a (m x k), g (m x n)
template <typename T>
inline void gemm_tn_acc(size_t m, size_t k, size_t n, const T* a, const T* g, T* c) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* grow = g + i * n;
        for (size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            T* crow = c + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

// out (c x r) = transpose of a (r x c)
template <typename T>
inline void transpose(size_t r, size_t c, const T* a, T* out) {
    for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    }
}

// c (m x n) = a (m x k) * b^T, with b (n x k); goes through an explicit
// transpose so the hot loop stays in axpy form.
template <typename T>
inline void gemm_nt(size_t m, size_t k, size_t n, const T* a, const T* b, T* c,
                    std::vector<T>& scratch) {
    scratch.resize(k * n);
    transpose(n, k, b, scratch.data());
    gemm_nn(m, k, n, a, scratch.data(), c);
}

}  // namespace lrc
