#ifndef RWKVASR_GRAPH_HPP
#define RWKVASR_GRAPH_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "rwkvasr/kernels.hpp"
#include "rwkvasr/tensor.hpp"

// Taped reverse-mode differentiation. Every operation records its output and
// a backward closure; backward() replays the tape in reverse, accumulating
// into per-node gradient buffers. Replay order is fixed, so gradients are
// bit-identical across runs on the same graph.

namespace rwkvasr {

struct Value {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

template <class T>
class Graph {
public:
    using BackFn = std::function<void(Graph&, std::int32_t)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<std::int32_t> inputs;
        BackFn back;  // empty for leaves
    };

    Value leaf(Tensor<T> v) { return record(std::move(v), {}, BackFn{}); }

    Value record(Tensor<T> v, std::vector<std::int32_t> inputs, BackFn back, const char* what = "op") {
        check_finite(v, what);
        nodes_.push_back(Node{std::move(v), Tensor<T>{}, std::move(inputs), std::move(back)});
        return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& val(Value v) const { return nodes_[check(v)].value; }
    // Gradient of the last backward() call; zeros for non-participating nodes.
    const Tensor<T>& grad(Value v) const { return nodes_[check(v)].grad; }
    Tensor<T>& grad_mut(Value v) { return nodes_[check(v)].grad; }

    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Every node's grad buffer is reset, so
    // calling backward twice on the same graph yields identical results.
    void backward(Value loss) {
        if (nodes_.empty()) throw StateError("backward: no forward pass recorded");
        const std::int32_t root = check(loss);
        if (nodes_[root].value.numel() != 1) throw ShapeError("backward: loss must be scalar");
        for (auto& n : nodes_) {
            n.grad = Tensor<T>(n.value.shape);
        }
        nodes_[root].grad[0] = T(1);
        for (std::int32_t i = root; i >= 0; --i) {
            if (nodes_[i].back) nodes_[i].back(*this, i);
        }
    }

    Node& node(std::int32_t i) { return nodes_[static_cast<std::size_t>(i)]; }

private:
    std::int32_t check(Value v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw StateError("graph: invalid value handle");
        return v.id;
    }

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace detail

template <class T>
Value add(Graph<T>& g, Value a, Value b) {
    detail::require_same_shape(g.val(a), g.val(b), "add");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        auto& ga = g.node(n.inputs[0]).grad;
        auto& gb = g.node(n.inputs[1]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            ga[i] += n.grad[i];
            gb[i] += n.grad[i];
        }
    }, "add");
}

template <class T>
Value sub(Graph<T>& g, Value a, Value b) {
    detail::require_same_shape(g.val(a), g.val(b), "sub");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        auto& ga = g.node(n.inputs[0]).grad;
        auto& gb = g.node(n.inputs[1]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            ga[i] += n.grad[i];
            gb[i] -= n.grad[i];
        }
    }, "sub");
}

template <class T>
Value mul(Graph<T>& g, Value a, Value b) {
    detail::require_same_shape(g.val(a), g.val(b), "mul");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        const auto& va = g.node(n.inputs[0]).value;
        const auto& vb = g.node(n.inputs[1]).value;
        auto& ga = g.node(n.inputs[0]).grad;
        auto& gb = g.node(n.inputs[1]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            ga[i] += n.grad[i] * vb[i];
            gb[i] += n.grad[i] * va[i];
        }
    }, "mul");
}

template <class T>
Value div(Graph<T>& g, Value a, Value b) {
    detail::require_same_shape(g.val(a), g.val(b), "div");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= vb[i];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        const auto& vb = g.node(n.inputs[1]).value;
        auto& ga = g.node(n.inputs[0]).grad;
        auto& gb = g.node(n.inputs[1]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            const T inv = T(1) / vb[i];
            ga[i] += n.grad[i] * inv;
            gb[i] -= n.grad[i] * n.value[i] * inv;
        }
    }, "div");
}

// Elementwise max; ties route the gradient to the first argument.
template <class T>
Value max_ew(Graph<T>& g, Value a, Value b) {
    detail::require_same_shape(g.val(a), g.val(b), "max_ew");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] >= vb[i] ? out[i] : vb[i];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        const auto& va = g.node(n.inputs[0]).value;
        const auto& vb = g.node(n.inputs[1]).value;
        auto& ga = g.node(n.inputs[0]).grad;
        auto& gb = g.node(n.inputs[1]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            if (va[i] >= vb[i]) ga[i] += n.grad[i];
            else gb[i] += n.grad[i];
        }
    }, "max_ew");
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class T>
Value scale(Graph<T>& g, Value a, T c) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v *= c;
    return g.record(std::move(out), {a.id}, [c](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        auto& ga = g.node(n.inputs[0]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * c;
    }, "scale");
}

template <class T>
Value neg(Graph<T>& g, Value a) { return scale(g, a, T(-1)); }

template <class T>
Value sigmoid(Graph<T>& g, Value a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = sigmoid_scalar(v);
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        auto& ga = g.node(n.inputs[0]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            const T y = n.value[i];
            ga[i] += n.grad[i] * y * (T(1) - y);
        }
    }, "sigmoid");
}

template <class T>
Value tanh(Graph<T>& g, Value a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = std::tanh(v);
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        auto& ga = g.node(n.inputs[0]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            const T y = n.value[i];
            ga[i] += n.grad[i] * (T(1) - y * y);
        }
    }, "tanh");
}

template <class T>
Value squared_relu(Graph<T>& g, Value a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = squared_relu_scalar(v);
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        const auto& va = g.node(n.inputs[0]).value;
        auto& ga = g.node(n.inputs[0]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            const T r = va[i] > T(0) ? va[i] : T(0);
            ga[i] += n.grad[i] * T(2) * r;
        }
    }, "squared_relu");
}

// exp underflows to 0 for sentinel-magnitude inputs, which is what makes the
// -inf sentinel absorbing in the stabilized wkv recursion.
template <class T>
Value exp(Graph<T>& g, Value a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = std::exp(v);
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        auto& ga = g.node(n.inputs[0]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * n.value[i];
    }, "exp");
}

template <class T>
Value abs(Graph<T>& g, Value a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = std::fabs(v);
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& n = g.node(self);
        const auto& va = g.node(n.inputs[0]).value;
        auto& ga = g.node(n.inputs[0]).grad;
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
            const T s = va[i] > T(0) ? T(1) : (va[i] < T(0) ? T(-1) : T(0));
            ga[i] += n.grad[i] * s;
        }
    }, "abs");
}

// ---------------------------------------------------------------------------
// Broadcast ops: matrix [m x n] with row vector [n]
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void require_row_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.rank() != 2 || b.rank() != 1 || a.shape[1] != b.shape[0])
        throw ShapeError(std::string(what) + ": want [m x n] op [n], got " + a.shape_str() + " and " + b.shape_str());
}
}  // namespace detail

template <class T>
Value add_row(Graph<T>& g, Value a, Value b) {
    detail::require_row_broadcast(g.val(a), g.val(b), "add_row");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    const std::int64_t m = out.shape[0], n = out.shape[1];
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) += vb[j];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& ga = g.node(nd.inputs[0]).grad;
        auto& gb = g.node(nd.inputs[1]).grad;
        const std::int64_t m = nd.grad.shape[0], n = nd.grad.shape[1];
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                ga.at(i, j) += nd.grad.at(i, j);
                gb[j] += nd.grad.at(i, j);
            }
    }, "add_row");
}

template <class T>
Value mul_row(Graph<T>& g, Value a, Value b) {
    detail::require_row_broadcast(g.val(a), g.val(b), "mul_row");
    Tensor<T> out = g.val(a);
    const Tensor<T>& vb = g.val(b);
    const std::int64_t m = out.shape[0], n = out.shape[1];
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) *= vb[j];
    return g.record(std::move(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const auto& va = g.node(nd.inputs[0]).value;
        const auto& vb = g.node(nd.inputs[1]).value;
        auto& ga = g.node(nd.inputs[0]).grad;
        auto& gb = g.node(nd.inputs[1]).grad;
        const std::int64_t m = nd.grad.shape[0], n = nd.grad.shape[1];
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                ga.at(i, j) += nd.grad.at(i, j) * vb[j];
                gb[j] += nd.grad.at(i, j) * va.at(i, j);
            }
    }, "mul_row");
}

// Broadcast-add a one-element tensor to every element of a.
template <class T>
Value add_scalar(Graph<T>& g, Value a, Value s) {
    if (g.val(s).numel() != 1) throw ShapeError("add_scalar: scalar operand must have one element");
    Tensor<T> out = g.val(a);
    const T sv = g.val(s)[0];
    for (auto& v : out.data) v += sv;
    return g.record(std::move(out), {a.id, s.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& ga = g.node(nd.inputs[0]).grad;
        auto& gs = g.node(nd.inputs[1]).grad;
        for (std::int64_t i = 0; i < nd.grad.numel(); ++i) {
            ga[i] += nd.grad[i];
            gs[0] += nd.grad[i];
        }
    }, "add_scalar");
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class T>
Value matmul(Graph<T>& g, Value a, Value b, bool trans_a = false, bool trans_b = false) {
    const Tensor<T>& va = g.val(a);
    const Tensor<T>& vb = g.val(b);
    if (va.rank() != 2 || vb.rank() != 2) throw ShapeError("matmul: rank-2 inputs required");
    const std::int64_t m = trans_a ? va.shape[1] : va.shape[0];
    const std::int64_t n = trans_b ? vb.shape[0] : vb.shape[1];
    Tensor<T> out({m, n});
    gemm(trans_a, trans_b, va, vb, out, false);
    return g.record(std::move(out), {a.id, b.id}, [trans_a, trans_b](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const auto& va = g.node(nd.inputs[0]).value;
        const auto& vb = g.node(nd.inputs[1]).value;
        auto& ga = g.node(nd.inputs[0]).grad;
        auto& gb = g.node(nd.inputs[1]).grad;
        // dA' = dC B'^T and dB' = A'^T dC, transposed back onto A/B as needed.
        if (!trans_a) gemm(false, !trans_b, nd.grad, vb, ga, true);
        else gemm(trans_b, true, vb, nd.grad, ga, true);
        if (!trans_b) gemm(!trans_a, false, va, nd.grad, gb, true);
        else gemm(true, trans_a, nd.grad, va, gb, true);
    }, "matmul");
}

// W [m x n] times x [n] -> [m]; same dot() order as the streaming path.
template <class T>
Value matvec(Graph<T>& g, Value w, Value x) {
    const Tensor<T>& vw = g.val(w);
    const Tensor<T>& vx = g.val(x);
    if (vw.rank() != 2 || vx.rank() != 1 || vw.shape[1] != vx.shape[0])
        throw ShapeError("matvec: want [m x n] * [n], got " + vw.shape_str() + " and " + vx.shape_str());
    Tensor<T> out({vw.shape[0]});
    matvec_into(vw, vx.data.data(), out.data.data());
    return g.record(std::move(out), {w.id, x.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const auto& vw = g.node(nd.inputs[0]).value;
        const auto& vx = g.node(nd.inputs[1]).value;
        auto& gw = g.node(nd.inputs[0]).grad;
        auto& gx = g.node(nd.inputs[1]).grad;
        const std::int64_t m = vw.shape[0], n = vw.shape[1];
        for (std::int64_t i = 0; i < m; ++i) {
            const T go = nd.grad[i];
            const T* wrow = vw.row_ptr(i);
            T* gwrow = gw.row_ptr(i);
            for (std::int64_t j = 0; j < n; ++j) {
                gwrow[j] += go * vx[j];
                gx[j] += go * wrow[j];
            }
        }
    }, "matvec");
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <class T>
Value row(Graph<T>& g, Value a, std::int64_t i) {
    const Tensor<T>& va = g.val(a);
    if (va.rank() != 2 || i < 0 || i >= va.shape[0]) throw ShapeError("row: index out of range");
    Tensor<T> out({va.shape[1]});
    std::copy(va.row_ptr(i), va.row_ptr(i) + va.shape[1], out.data.begin());
    return g.record(std::move(out), {a.id}, [i](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& ga = g.node(nd.inputs[0]).grad;
        T* dst = ga.row_ptr(i);
        for (std::int64_t j = 0; j < nd.grad.numel(); ++j) dst[j] += nd.grad[j];
    }, "row");
}

template <class T>
Value index(Graph<T>& g, Value a, std::int64_t i) {
    const Tensor<T>& va = g.val(a);
    if (va.rank() != 1 || i < 0 || i >= va.numel()) throw ShapeError("index: out of range");
    return g.record(Tensor<T>::scalar(va[i]), {a.id}, [i](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        g.node(nd.inputs[0]).grad[i] += nd.grad[0];
    }, "index");
}

// Stack equal-length vectors into the rows of a matrix.
template <class T>
Value stack_rows(Graph<T>& g, std::span<const Value> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: empty input");
    const std::int64_t n = g.val(rows[0]).numel();
    Tensor<T> out({static_cast<std::int64_t>(rows.size()), n});
    std::vector<std::int32_t> ins;
    ins.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Tensor<T>& vr = g.val(rows[r]);
        if (vr.rank() != 1 || vr.numel() != n) throw ShapeError("stack_rows: inconsistent row length");
        std::copy(vr.data.begin(), vr.data.end(), out.row_ptr(static_cast<std::int64_t>(r)));
        ins.push_back(rows[r].id);
    }
    return g.record(std::move(out), std::move(ins), [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const std::int64_t n = nd.grad.shape[1];
        for (std::size_t r = 0; r < nd.inputs.size(); ++r) {
            auto& gr = g.node(nd.inputs[r]).grad;
            const T* src = nd.grad.row_ptr(static_cast<std::int64_t>(r));
            for (std::int64_t j = 0; j < n; ++j) gr[j] += src[j];
        }
    }, "stack_rows");
}

// out[t] = x[t-1], out[0] = 0. One frame of lookback for token shift.
template <class T>
Value shift_rows(Graph<T>& g, Value a) {
    const Tensor<T>& va = g.val(a);
    if (va.rank() != 2) throw ShapeError("shift_rows: rank-2 input required");
    Tensor<T> out(va.shape);
    const std::int64_t m = va.shape[0], n = va.shape[1];
    for (std::int64_t i = 1; i < m; ++i)
        std::copy(va.row_ptr(i - 1), va.row_ptr(i - 1) + n, out.row_ptr(i));
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& ga = g.node(nd.inputs[0]).grad;
        const std::int64_t m = nd.grad.shape[0], n = nd.grad.shape[1];
        for (std::int64_t i = 1; i < m; ++i) {
            const T* src = nd.grad.row_ptr(i);
            T* dst = ga.row_ptr(i - 1);
            for (std::int64_t j = 0; j < n; ++j) dst[j] += src[j];
        }
    }, "shift_rows");
}

// ---------------------------------------------------------------------------
// Reductions and log-space ops
// ---------------------------------------------------------------------------

template <class T>
Value sum(Graph<T>& g, Value a) {
    T acc = 0;
    for (T v : g.val(a).data) acc += v;
    return g.record(Tensor<T>::scalar(acc), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& ga = g.node(nd.inputs[0]).grad;
        for (auto& v : ga.data) v += nd.grad[0];
    }, "sum");
}

template <class T>
Value logsumexp(Graph<T>& g, Value a) {
    const Tensor<T>& va = g.val(a);
    if (va.numel() < 1) throw ShapeError("logsumexp: empty input");
    const T out = logsumexp_raw(va.data.data(), va.numel());
    return g.record(Tensor<T>::scalar(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const T out = nd.value[0];
        if (out == neg_inf_sentinel<T>()) return;
        const auto& va = g.node(nd.inputs[0]).value;
        auto& ga = g.node(nd.inputs[0]).grad;
        for (std::int64_t i = 0; i < va.numel(); ++i) ga[i] += nd.grad[0] * std::exp(va[i] - out);
    }, "logsumexp");
}

// Binary log-add for scalar lattice cells.
template <class T>
Value logadd(Graph<T>& g, Value a, Value b) {
    if (g.val(a).numel() != 1 || g.val(b).numel() != 1) throw ShapeError("logadd: scalar inputs required");
    const T out = logadd_raw(g.val(a)[0], g.val(b)[0]);
    return g.record(Tensor<T>::scalar(out), {a.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const T out = nd.value[0];
        if (out == neg_inf_sentinel<T>()) return;
        g.node(nd.inputs[0]).grad[0] += nd.grad[0] * std::exp(g.node(nd.inputs[0]).value[0] - out);
        g.node(nd.inputs[1]).grad[0] += nd.grad[0] * std::exp(g.node(nd.inputs[1]).value[0] - out);
    }, "logadd");
}

template <class T>
Value log_softmax(Graph<T>& g, Value a) {
    const Tensor<T>& va = g.val(a);
    if (va.rank() != 1 || va.numel() < 1) throw ShapeError("log_softmax: non-empty vector required");
    Tensor<T> out(va.shape);
    log_softmax_raw(va.data.data(), va.numel(), out.data.data());
    return g.record(std::move(out), {a.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& ga = g.node(nd.inputs[0]).grad;
        T gsum = 0;
        for (std::int64_t i = 0; i < nd.grad.numel(); ++i) gsum += nd.grad[i];
        for (std::int64_t i = 0; i < nd.grad.numel(); ++i)
            ga[i] += nd.grad[i] - std::exp(nd.value[i]) * gsum;
    }, "log_softmax");
}

// Per-row layer norm with learnable gain/bias; epsilon inside the sqrt.
template <class T>
Value layer_norm(Graph<T>& g, Value x, Value gain, Value bias, T eps) {
    const Tensor<T>& vx = g.val(x);
    const Tensor<T>& vg = g.val(gain);
    const Tensor<T>& vb = g.val(bias);
    if (vx.rank() != 2 || vg.rank() != 1 || vb.rank() != 1 || vx.shape[1] != vg.shape[0] || vx.shape[1] != vb.shape[0])
        throw ShapeError("layer_norm: want [m x n], [n], [n]");
    Tensor<T> out(vx.shape);
    const std::int64_t m = vx.shape[0], n = vx.shape[1];
    for (std::int64_t i = 0; i < m; ++i)
        layer_norm_row(vx.row_ptr(i), vg.data.data(), vb.data.data(), n, eps, out.row_ptr(i));
    return g.record(std::move(out), {x.id, gain.id, bias.id}, [eps](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const auto& vx = g.node(nd.inputs[0]).value;
        const auto& vg = g.node(nd.inputs[1]).value;
        auto& gx = g.node(nd.inputs[0]).grad;
        auto& gg = g.node(nd.inputs[1]).grad;
        auto& gb = g.node(nd.inputs[2]).grad;
        const std::int64_t m = vx.shape[0], n = vx.shape[1];
        for (std::int64_t i = 0; i < m; ++i) {
            const T* xr = vx.row_ptr(i);
            const T* dy = nd.grad.row_ptr(i);
            T mean = 0;
            for (std::int64_t j = 0; j < n; ++j) mean += xr[j];
            mean /= static_cast<T>(n);
            T var = 0;
            for (std::int64_t j = 0; j < n; ++j) {
                const T d = xr[j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv = T(1) / std::sqrt(var + eps);
            // dxhat, then the two reduction terms of the standard formula
            T sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (std::int64_t j = 0; j < n; ++j) {
                const T xhat = (xr[j] - mean) * inv;
                const T dxhat = dy[j] * vg[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                gg[j] += dy[j] * xhat;
                gb[j] += dy[j];
            }
            for (std::int64_t j = 0; j < n; ++j) {
                const T xhat = (xr[j] - mean) * inv;
                const T dxhat = dy[j] * vg[j];
                gx.row_ptr(i)[j] += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / static_cast<T>(n));
            }
        }
    }, "layer_norm");
}

// ---------------------------------------------------------------------------
// Convolution for the subsampling frontend: 3x3 kernel, stride 2, no padding.
// ---------------------------------------------------------------------------

template <class T>
Value conv2d_3x3s2(Graph<T>& g, Value x, Value w, Value b) {
    const Tensor<T>& vx = g.val(x);  // [Cin x H x W]
    const Tensor<T>& vw = g.val(w);  // [Cout x Cin x 3 x 3] stored as [Cout x Cin x 9]
    const Tensor<T>& vb = g.val(b);  // [Cout]
    if (vx.rank() != 3 || vw.rank() != 3 || vw.shape[2] != 9 || vb.rank() != 1)
        throw ShapeError("conv2d: want x[Cin x H x W], w[Cout x Cin x 9], b[Cout]");
    const std::int64_t cin = vx.shape[0], h = vx.shape[1], wd = vx.shape[2];
    const std::int64_t cout = vw.shape[0];
    if (vw.shape[1] != cin || vb.shape[0] != cout) throw ShapeError("conv2d: channel mismatch");
    if (h < 3 || wd < 3) throw ShapeError("conv2d: input smaller than kernel");
    const std::int64_t ho = (h - 3) / 2 + 1, wo = (wd - 3) / 2 + 1;
    Tensor<T> out({cout, ho, wo});
    conv3x3s2_into(vx, vw, vb, out);
    return g.record(std::move(out), {x.id, w.id, b.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        const auto& vx = g.node(nd.inputs[0]).value;
        const auto& vw = g.node(nd.inputs[1]).value;
        auto& gx = g.node(nd.inputs[0]).grad;
        auto& gw = g.node(nd.inputs[1]).grad;
        auto& gb = g.node(nd.inputs[2]).grad;
        const std::int64_t cin = vx.shape[0];
        const std::int64_t cout = nd.grad.shape[0], ho = nd.grad.shape[1], wo = nd.grad.shape[2];
        for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t i = 0; i < ho; ++i)
                for (std::int64_t j = 0; j < wo; ++j) {
                    const T go = nd.grad.at(co, i, j);
                    gb[co] += go;
                    for (std::int64_t ci = 0; ci < cin; ++ci)
                        for (std::int64_t di = 0; di < 3; ++di)
                            for (std::int64_t dj = 0; dj < 3; ++dj) {
                                gw.at(co, ci, di * 3 + dj) += go * vx.at(ci, 2 * i + di, 2 * j + dj);
                                gx.at(ci, 2 * i + di, 2 * j + dj) += go * vw.at(co, ci, di * 3 + dj);
                            }
                }
    }, "conv2d");
}

// [C x H x W] -> [H x (C*W)]; row h holds channel-major features of frame h.
template <class T>
Value merge_channels(Graph<T>& g, Value x) {
    const Tensor<T>& vx = g.val(x);
    if (vx.rank() != 3) throw ShapeError("merge_channels: rank-3 input required");
    const std::int64_t c = vx.shape[0], h = vx.shape[1], w = vx.shape[2];
    Tensor<T> out({h, c * w});
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) out.at(i, ci * w + j) = vx.at(ci, i, j);
    return g.record(std::move(out), {x.id}, [](Graph<T>& g, std::int32_t self) {
        auto& nd = g.node(self);
        auto& gx = g.node(nd.inputs[0]).grad;
        const std::int64_t c = gx.shape[0], h = gx.shape[1], w = gx.shape[2];
        for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) gx.at(ci, i, j) += nd.grad.at(i, ci * w + j);
    }, "merge_channels");
}

}  // namespace rwkvasr

#endif
