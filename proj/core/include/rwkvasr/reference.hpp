#ifndef RWKVASR_REFERENCE_HPP
#define RWKVASR_REFERENCE_HPP

#include <cmath>
#include <cstdint>

#include "rwkvasr/tensor.hpp"

// Independent reference implementations used only for checking: a literal
// double-sum attention evaluation, the textbook (overflow-prone) recurrence,
// and small combinatorial helpers. Deliberately written in the most direct
// way possible, sharing no code with the production paths they validate.

namespace rwkvasr {

// Literal evaluation of the attention substitute:
//   wkv_t = (sum_{i<t} e^{-(t-1-i)w + k_i} v_i + e^{u+k_t} v_t)
//         / (sum_{i<t} e^{-(t-1-i)w + k_i}     + e^{u+k_t})
// computed independently per (t, channel) with long-double accumulators.
template <class T>
Tensor<T> wkv_reference_double_sum(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w,
                                   const Tensor<T>& u) {
    const std::int64_t tlen = k.shape[0], d = k.shape[1];
    Tensor<T> out({tlen, d});
    for (std::int64_t t = 0; t < tlen; ++t)
        for (std::int64_t j = 0; j < d; ++j) {
            long double num = 0.0L, den = 0.0L;
            for (std::int64_t i = 0; i < t; ++i) {
                const long double e = std::exp(static_cast<long double>(-(t - 1 - i)) * w[j] + k.at(i, j));
                num += e * static_cast<long double>(v.at(i, j));
                den += e;
            }
            const long double ec = std::exp(static_cast<long double>(u[j]) + k.at(t, j));
            num += ec * static_cast<long double>(v.at(t, j));
            den += ec;
            out.at(t, j) = static_cast<T>(num / den);
        }
    return out;
}

// The unstabilized recurrence, kept as a negative control: accumulators
// a/b grow like e^{k} and overflow for large keys.
template <class T>
struct NaiveWkvState {
    Tensor<T> a, b;
    explicit NaiveWkvState(std::int64_t d) : a({d}), b({d}) {}
};

template <class T>
void wkv_naive_step(const T* k, const T* v, const T* w, const T* u, NaiveWkvState<T>& st, T* out) {
    const std::int64_t d = st.a.numel();
    for (std::int64_t j = 0; j < d; ++j) {
        const T ec = std::exp(u[j] + k[j]);
        out[j] = (st.a[j] + ec * v[j]) / (st.b[j] + ec);
        const T ek = std::exp(k[j]);
        st.a[j] = std::exp(-w[j]) * (st.a[j] + ek * v[j]);
        st.b[j] = std::exp(-w[j]) * (st.b[j] + ek);
    }
}

// Exact binomial coefficient; inputs stay tiny (lattice path counts).
inline std::int64_t binomial(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) return 0;
    if (k > n - k) k = n - k;
    std::int64_t r = 1;
    for (std::int64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace rwkvasr

#endif
