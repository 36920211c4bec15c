#ifndef RWKVASR_TENSOR_HPP
#define RWKVASR_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rwkvasr/errors.hpp"

namespace rwkvasr {

enum class Dtype { F32, F64 };

template <class T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::F32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::F64; }

inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "f32" : "f64"; }

// Most-negative finite value, used as the absorbing -inf sentinel in
// log-space lattices and in the wkv running-max state.
template <class T>
constexpr T neg_inf_sentinel() { return std::numeric_limits<T>::lowest(); }

// Dense row-major array of rank 0..3 (rank is just shape.size()).
template <class T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
    }
    Tensor(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor: shape/data size mismatch");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto e : s) {
            if (e < 0) throw ShapeError("tensor: negative extent");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::int64_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t extent(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    T& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
    const T& at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }

    T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    T* row_ptr(std::int64_t i) { return data.data() + i * shape.back(); }
    const T* row_ptr(std::int64_t i) const { return data.data() + i * shape.back(); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }
};

template <class T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

// Exported operations must never let NaN/Inf escape silently.
template <class T>
void check_finite(const Tensor<T>& t, const char* what) {
    if (!all_finite(t)) throw NumericError(std::string(what) + ": non-finite value in result");
}

// Destination type first so the source deduces: cast_tensor<double>(f32_t).
template <class U, class T>
Tensor<U> cast_tensor(const Tensor<T>& t) {
    Tensor<U> out(t.shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<U>(t[i]);
    return out;
}

}  // namespace rwkvasr

#endif
