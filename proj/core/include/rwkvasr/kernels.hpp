#ifndef RWKVASR_KERNELS_HPP
#define RWKVASR_KERNELS_HPP

#include <cmath>
#include <cstdint>

#include "rwkvasr/tensor.hpp"

// Raw dense kernels shared by the tape ops and the recurrent step path.
// The parallel and streaming evaluation modes go through the same dot()
// accumulation order, which keeps their outputs bit-identical.

namespace rwkvasr {

template <class T>
T dot(const T* a, const T* b, std::int64_t n) {
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// y (+)= W x, W is [m x n] row-major.
template <class T>
void matvec_into(const Tensor<T>& w, const T* x, T* y, bool accumulate = false) {
    const std::int64_t m = w.shape[0], n = w.shape[1];
    for (std::int64_t i = 0; i < m; ++i) {
        T v = dot(w.row_ptr(i), x, n);
        y[i] = accumulate ? y[i] + v : v;
    }
}

// General small GEMM: out (+)= op(a) * op(b). Row-major throughout.
// The nt case (a * b^T) reduces to contiguous row dots and is the hot path.
template <class T>
void gemm(bool ta, bool tb, const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, bool accumulate) {
    const std::int64_t m = ta ? a.shape[1] : a.shape[0];
    const std::int64_t k = ta ? a.shape[0] : a.shape[1];
    const std::int64_t kb = tb ? b.shape[1] : b.shape[0];
    const std::int64_t n = tb ? b.shape[0] : b.shape[1];
    if (k != kb) throw ShapeError("gemm: inner extents differ");
    if (out.shape[0] != m || out.shape[1] != n) throw ShapeError("gemm: bad output shape");
    if (!accumulate) std::fill(out.data.begin(), out.data.end(), T(0));

    if (!ta && tb) {
        for (std::int64_t i = 0; i < m; ++i) {
            const T* arow = a.row_ptr(i);
            T* orow = out.row_ptr(i);
            for (std::int64_t j = 0; j < n; ++j) orow[j] += dot(arow, b.row_ptr(j), k);
        }
    } else if (!ta && !tb) {
        for (std::int64_t i = 0; i < m; ++i) {
            const T* arow = a.row_ptr(i);
            T* orow = out.row_ptr(i);
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = arow[p];
                const T* brow = b.row_ptr(p);
                for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else if (ta && !tb) {
        for (std::int64_t p = 0; p < k; ++p) {
            const T* arow = a.row_ptr(p);
            const T* brow = b.row_ptr(p);
            for (std::int64_t i = 0; i < m; ++i) {
                const T av = arow[i];
                T* orow = out.row_ptr(i);
                for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else {  // ta && tb: rare, index directly
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                T acc = 0;
                for (std::int64_t p = 0; p < k; ++p) acc += a.at(p, i) * b.at(j, p);
                out.at(i, j) += acc;
            }
    }
}

// 3x3 stride-2 valid convolution, x [Cin x H x W] -> out [Cout x Ho x Wo].
// Single forward routine shared by the tape op and the streaming recompute
// path, so both produce bit-identical frames.
template <class T>
void conv3x3s2_into(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& out) {
    const std::int64_t cin = x.shape[0];
    const std::int64_t cout = out.shape[0], ho = out.shape[1], wo = out.shape[2];
    for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t i = 0; i < ho; ++i)
            for (std::int64_t j = 0; j < wo; ++j) {
                T acc = b[co];
                for (std::int64_t ci = 0; ci < cin; ++ci) {
                    const T* krn = &w.at(co, ci, 0);
                    for (std::int64_t di = 0; di < 3; ++di) {
                        const T* xr = &x.at(ci, 2 * i + di, 2 * j);
                        acc += krn[di * 3 + 0] * xr[0] + krn[di * 3 + 1] * xr[1] + krn[di * 3 + 2] * xr[2];
                    }
                }
                out.at(co, i, j) = acc;
            }
}

template <class T>
T squared_relu_scalar(T x) {
    const T r = x > T(0) ? x : T(0);
    return r * r;
}

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Per-row layer norm, epsilon inside the sqrt. out may alias x.
template <class T>
void layer_norm_row(const T* x, const T* gain, const T* bias, std::int64_t n, T eps, T* out) {
    T mean = 0;
    for (std::int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

// Stable log(sum_i exp(x_i)) with the most-negative-finite value absorbing.
template <class T>
T logsumexp_raw(const T* x, std::int64_t n) {
    const T sentinel = neg_inf_sentinel<T>();
    T m = sentinel;
    std::int64_t arg = -1;
    for (std::int64_t i = 0; i < n; ++i)
        if (x[i] > m) { m = x[i]; arg = i; }
    if (arg < 0 || m == sentinel) return sentinel;
    T sum = 0;
    for (std::int64_t i = 0; i < n; ++i)
        if (i != arg) sum += std::exp(x[i] - m);
    return m + std::log1p(sum);
}

template <class T>
T logadd_raw(T a, T b) {
    const T sentinel = neg_inf_sentinel<T>();
    if (a == sentinel && b == sentinel) return sentinel;
    const T m = a > b ? a : b;
    const T d = (a > b ? b : a) - m;
    return m + std::log1p(std::exp(d));
}

template <class T>
void log_softmax_raw(const T* x, std::int64_t n, T* out) {
    const T lse = logsumexp_raw(x, n);
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] - lse;
}

}  // namespace rwkvasr

#endif
