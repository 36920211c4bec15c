// Tensors, raw kernels, and the taped-differentiation ops. Expected values
// are either hand-computed constants frozen here or independent
// reimplementations (naive loops, central finite differences).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "rwkvasr/graph.hpp"
#include "rwkvasr/kernels.hpp"
#include "rwkvasr/rng.hpp"
#include "rwkvasr/tensor.hpp"
#include "test_util.hpp"

using namespace rwkvasr;
using testutil::gradcheck;
using testutil::random_tensor;

TEST_CASE("tensor shape bookkeeping") {
    Tensor<double> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    for (double v : t.data) CHECK(v == 0.0);
    t[5] = 7.0;
    CHECK(t.row_ptr(1)[2] == 7.0);
    Tensor<double> s = Tensor<double>::scalar(4.0);
    CHECK(s.numel() == 1);
    CHECK(s[0] == 4.0);
    CHECK(Tensor<double>::full({2, 2}, 3.0).data == std::vector<double>(4, 3.0));
    CHECK_THROWS_AS(Tensor<double>({2, -1}), ShapeError);
}

TEST_CASE("dot and gemm match naive loops") {
    Rng rng(11);
    const Tensor<double> a = random_tensor(rng, {4, 5});
    const Tensor<double> b = random_tensor(rng, {5, 3});
    Tensor<double> out({4, 3});
    gemm(false, false, a, b, out, false);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < 5; ++k) acc += a[i * 5 + k] * b[k * 3 + j];
            CHECK(std::fabs(out[i * 3 + j] - acc) <= 1e-12);
        }

    // Transposed variants against explicitly transposed copies.
    Tensor<double> at({5, 4});
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t k = 0; k < 5; ++k) at[k * 4 + i] = a[i * 5 + k];
    Tensor<double> out2({4, 3});
    gemm(true, false, at, b, out2, false);
    for (std::int64_t i = 0; i < 12; ++i) CHECK(std::fabs(out2[i] - out[i]) <= 1e-12);

    Tensor<double> bt({3, 5});
    for (std::int64_t k = 0; k < 5; ++k)
        for (std::int64_t j = 0; j < 3; ++j) bt[j * 5 + k] = b[k * 3 + j];
    Tensor<double> out3({4, 3});
    gemm(false, true, a, bt, out3, false);
    for (std::int64_t i = 0; i < 12; ++i) CHECK(std::fabs(out3[i] - out[i]) <= 1e-12);

    // accumulate=true adds on top of existing contents.
    Tensor<double> acc = Tensor<double>::full({4, 3}, 1.0);
    gemm(false, false, a, b, acc, true);
    for (std::int64_t i = 0; i < 12; ++i) CHECK(std::fabs(acc[i] - (out[i] + 1.0)) <= 1e-12);

    CHECK_THROWS_AS(gemm(false, false, a, a, out, false), ShapeError);
}

TEST_CASE("matvec is the row-dot of gemm") {
    Rng rng(12);
    const Tensor<double> w = random_tensor(rng, {4, 6});
    const Tensor<double> x = random_tensor(rng, {6});
    Tensor<double> y({4});
    matvec_into(w, x.data.data(), y.data.data());
    for (std::int64_t i = 0; i < 4; ++i)
        CHECK(y[i] == dot(w.row_ptr(i), x.data.data(), 6));
}

TEST_CASE("scalar nonlinearities: frozen values and stability") {
    CHECK(std::fabs(sigmoid_scalar(1.0) - 0.7310585786300049) <= 1e-15);
    CHECK(sigmoid_scalar(0.0) == 0.5);
    // Large magnitudes must saturate without overflow in either direction.
    CHECK(sigmoid_scalar(1000.0) == 1.0);
    CHECK(sigmoid_scalar(-1000.0) == 0.0);
    CHECK(sigmoid_scalar(-1000.0f) == 0.0f);

    CHECK(squared_relu_scalar(-2.0) == 0.0);
    CHECK(squared_relu_scalar(3.0) == 9.0);
}

TEST_CASE("layer_norm_row: zero mean, unit variance, then affine") {
    const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> gain = {1.0, 1.0, 1.0, 1.0};
    const std::vector<double> bias = {0.0, 0.0, 0.0, 0.0};
    std::vector<double> out(4);
    layer_norm_row(x.data(), gain.data(), bias.data(), 4, 1e-5, out.data());
    double mean = 0.0, var = 0.0;
    for (double v : out) mean += v;
    mean /= 4.0;
    for (double v : out) var += (v - mean) * (v - mean);
    var /= 4.0;
    CHECK(std::fabs(mean) <= 1e-12);
    CHECK(std::fabs(var - 1.0) <= 1e-4);  // eps shrinks variance slightly

    // A constant row normalizes to zero, so the output is exactly the bias.
    const std::vector<double> c = {5.0, 5.0, 5.0, 5.0};
    const std::vector<double> g2 = {2.0, 2.0, 2.0, 2.0};
    const std::vector<double> b2 = {0.5, -0.5, 1.5, 0.0};
    layer_norm_row(c.data(), g2.data(), b2.data(), 4, 1e-5, out.data());
    for (int i = 0; i < 4; ++i) CHECK(out[i] == b2[static_cast<std::size_t>(i)]);
}

TEST_CASE("logsumexp/logadd: frozen values and sentinel absorption") {
    const double sentinel = neg_inf_sentinel<double>();
    const std::vector<double> two_zeros = {0.0, 0.0};
    CHECK(std::fabs(logsumexp_raw(two_zeros.data(), 2) - 0.6931471805599453) <= 1e-15);

    // Shift invariance: lse(x + c) == lse(x) + c.
    Rng rng(13);
    Tensor<double> x = random_tensor(rng, {7});
    const double base = logsumexp_raw(x.data.data(), 7);
    for (auto& v : x.data) v += 5.0;
    CHECK(std::fabs(logsumexp_raw(x.data.data(), 7) - (base + 5.0)) <= 1e-12);

    // The sentinel is an exact additive identity, not merely approximate:
    // pruned and unpruned lattice recursions rely on this being bitwise.
    CHECK(logadd_raw(0.25, sentinel) == 0.25);
    CHECK(logadd_raw(sentinel, -3.5) == -3.5);
    CHECK(logadd_raw(sentinel, sentinel) == sentinel);
    CHECK(std::fabs(logadd_raw(0.0, 0.0) - 0.6931471805599453) <= 1e-15);
    const std::vector<double> with_sent = {sentinel, 1.25, sentinel};
    CHECK(logsumexp_raw(with_sent.data(), 3) == 1.25);
    const std::vector<double> all_sent = {sentinel, sentinel};
    CHECK(logsumexp_raw(all_sent.data(), 2) == sentinel);

    // Huge inputs must not overflow.
    const std::vector<double> big = {700.0, 700.0};
    CHECK(std::fabs(logsumexp_raw(big.data(), 2) - (700.0 + 0.6931471805599453)) <= 1e-12);
}

TEST_CASE("log_softmax_raw: normalized and shift invariant") {
    Rng rng(14);
    const Tensor<double> x = random_tensor(rng, {9}, 3.0);
    std::vector<double> out(9);
    log_softmax_raw(x.data.data(), 9, out.data());
    double total = 0.0;
    for (double v : out) total += std::exp(v);
    CHECK(std::fabs(total - 1.0) <= 1e-12);

    // Equal logits give exactly uniform probabilities.
    const std::vector<double> eq(4, 2.5);
    std::vector<double> u(4);
    log_softmax_raw(eq.data(), 4, u.data());
    for (double v : u) CHECK(std::fabs(v - std::log(0.25)) <= 1e-15);
}

TEST_CASE("graph records values and rejects non-finite results") {
    Graph<double> g;
    Value a = g.leaf(Tensor<double>::scalar(2.0));
    Value b = g.leaf(Tensor<double>::scalar(3.0));
    Value c = mul(g, a, b);
    CHECK(g.val(c)[0] == 6.0);
    CHECK_THROWS_AS(g.leaf(Tensor<double>::scalar(std::numeric_limits<double>::infinity())),
                    NumericError);
    CHECK_THROWS_AS(div(g, a, g.leaf(Tensor<double>::scalar(0.0))), NumericError);
    // backward demands a scalar root
    Graph<double> g2;
    Value m = g2.leaf(Tensor<double>({2, 2}));
    CHECK_THROWS_AS(g2.backward(m), ShapeError);
}

TEST_CASE("backward is deterministic and repeatable") {
    auto run = [] {
        Rng rng(15);
        Graph<double> g;
        Value x = g.leaf(random_tensor(rng, {3, 4}));
        Value w = g.leaf(random_tensor(rng, {5, 4}));
        Value loss = sum(g, tanh(g, matmul(g, x, w, false, true)));
        g.backward(loss);
        return std::make_pair(g.grad(x).data, g.grad(w).data);
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(r1.first == r2.first);  // bitwise
    CHECK(r1.second == r2.second);

    // Two backward calls on the same graph also agree bitwise.
    Rng rng(15);
    Graph<double> g;
    Value x = g.leaf(random_tensor(rng, {3, 4}));
    Value loss = sum(g, sigmoid(g, x));
    g.backward(loss);
    const auto first = g.grad(x).data;
    g.backward(loss);
    CHECK(g.grad(x).data == first);
}

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(16);
    const double tol = 1e-7;
    const Tensor<double> a0 = random_tensor(rng, {3, 4});
    Tensor<double> b0 = random_tensor(rng, {3, 4});
    // keep div well-conditioned and max_ew away from ties
    for (auto& v : b0.data) v = (v < 0 ? v - 0.5 : v + 0.5);

    CHECK(gradcheck({a0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, add(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({a0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, sub(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({a0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, mul(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({a0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, div(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({a0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, max_ew(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({a0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, sigmoid(g, v[0]));
          }) <= tol);
    CHECK(gradcheck({a0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, v[0]));
          }) <= tol);
    CHECK(gradcheck({a0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, exp(g, v[0]));
          }) <= tol);
    CHECK(gradcheck({a0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, scale(g, v[0], -2.5));
          }) <= tol);
    CHECK(gradcheck({b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, abs(g, v[0]));  // b0 is bounded away from 0
          }) <= tol);
    CHECK(gradcheck({b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, squared_relu(g, v[0]));
          }) <= tol);
}

TEST_CASE("row-broadcast and scalar-broadcast op gradients") {
    Rng rng(17);
    const double tol = 1e-7;
    const Tensor<double> m0 = random_tensor(rng, {4, 3});
    const Tensor<double> r0 = random_tensor(rng, {3});
    const Tensor<double> s0 = Tensor<double>::scalar(0.75);

    CHECK(gradcheck({m0, r0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, add_row(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({m0, r0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, mul_row(g, v[0], v[1]));
          }) <= tol);
    CHECK(gradcheck({m0, s0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, sigmoid(g, add_scalar(g, v[0], v[1])));
          }) <= tol);
}

TEST_CASE("matmul gradients for all transpose combinations") {
    Rng rng(18);
    const double tol = 1e-7;
    const Tensor<double> a = random_tensor(rng, {3, 4});
    const Tensor<double> b = random_tensor(rng, {4, 2});
    const Tensor<double> at = random_tensor(rng, {4, 3});
    const Tensor<double> bt = random_tensor(rng, {2, 4});

    CHECK(gradcheck({a, b}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, matmul(g, v[0], v[1], false, false)));
          }) <= tol);
    CHECK(gradcheck({at, b}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, matmul(g, v[0], v[1], true, false)));
          }) <= tol);
    CHECK(gradcheck({a, bt}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, matmul(g, v[0], v[1], false, true)));
          }) <= tol);
    CHECK(gradcheck({at, bt}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, matmul(g, v[0], v[1], true, true)));
          }) <= tol);
    CHECK(gradcheck({a, random_tensor(rng, {4})},
                    [](Graph<double>& g, const std::vector<Value>& v) {
                        return sum(g, sigmoid(g, matvec(g, v[0], v[1])));
                    }) <= tol);
}

TEST_CASE("structural ops: row/index/stack/shift values and gradients") {
    Rng rng(19);
    const double tol = 1e-7;
    const Tensor<double> m0 = random_tensor(rng, {4, 3});

    {
        Graph<double> g;
        Value m = g.leaf(m0);
        Value r = row(g, m, 2);
        CHECK(g.val(r).shape == std::vector<std::int64_t>{3});
        for (int j = 0; j < 3; ++j) CHECK(g.val(r)[j] == m0[2 * 3 + j]);
        Value e = index(g, r, 1);
        CHECK(g.val(e)[0] == m0[2 * 3 + 1]);
        CHECK_THROWS_AS(row(g, m, 4), ShapeError);
        CHECK_THROWS_AS(index(g, r, 3), ShapeError);

        Value sh = shift_rows(g, m);
        for (int j = 0; j < 3; ++j) CHECK(g.val(sh)[j] == 0.0);
        for (int i = 1; i < 4; ++i)
            for (int j = 0; j < 3; ++j) CHECK(g.val(sh)[i * 3 + j] == m0[(i - 1) * 3 + j]);
    }

    CHECK(gradcheck({m0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return index(g, row(g, v[0], 1), 2);
          }) <= tol);
    CHECK(gradcheck({m0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, shift_rows(g, v[0])));
          }) <= tol);
    CHECK(gradcheck({m0}, [](Graph<double>& g, const std::vector<Value>& v) {
              std::vector<Value> rows = {row(g, v[0], 2), row(g, v[0], 0), row(g, v[0], 2)};
              return sum(g, sigmoid(g, stack_rows(g, std::span<const Value>(rows))));
          }) <= tol);
}

TEST_CASE("reductions and log-space op gradients") {
    Rng rng(20);
    const double tol = 1e-6;
    const Tensor<double> x0 = random_tensor(rng, {6}, 2.0);
    const Tensor<double> y0 = random_tensor(rng, {1}, 2.0);
    const Tensor<double> z0 = random_tensor(rng, {1}, 2.0);

    CHECK(gradcheck({x0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return logsumexp(g, v[0]);
          }) <= tol);
    CHECK(gradcheck({y0, z0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return logadd(g, v[0], v[1]);
          }) <= tol);
    CHECK(gradcheck({x0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return index(g, log_softmax(g, v[0]), 2);
          }) <= tol);

    // Sentinel absorption carries over to the taped ops.
    Graph<double> g;
    Value fin = g.leaf(Tensor<double>::scalar(-1.5));
    Value sent = g.leaf(Tensor<double>::scalar(neg_inf_sentinel<double>()));
    CHECK(g.val(logadd(g, fin, sent))[0] == -1.5);
    CHECK(g.val(logadd(g, sent, sent))[0] == neg_inf_sentinel<double>());
    // Gradient through an absorbed sentinel: the finite side gets d/dx = 1.
    Value out = logadd(g, fin, sent);
    g.backward(out);
    CHECK(g.grad(fin)[0] == 1.0);
    CHECK(g.grad(sent)[0] == 0.0);
}

TEST_CASE("layer_norm op gradient") {
    Rng rng(21);
    const Tensor<double> x0 = random_tensor(rng, {3, 5});
    const Tensor<double> g0 = random_tensor(rng, {5});
    const Tensor<double> b0 = random_tensor(rng, {5});
    CHECK(gradcheck({x0, g0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, layer_norm(g, v[0], v[1], v[2], 1e-5)));
          }) <= 1e-6);
}

TEST_CASE("conv and channel-merge values and gradients") {
    Rng rng(22);
    // conv2d_3x3s2 expects [C_in x T x F]; weights [C_out x C_in x 9].
    const Tensor<double> x0 = random_tensor(rng, {1, 7, 9});
    const Tensor<double> w0 = random_tensor(rng, {2, 1, 9}, 0.5);
    const Tensor<double> b0 = random_tensor(rng, {2}, 0.5);

    {
        // Independent naive convolution with explicit index arithmetic.
        Graph<double> g;
        Value y = conv2d_3x3s2(g, g.leaf(x0), g.leaf(w0), g.leaf(b0));
        const std::int64_t to = conv_out_extent(7), fo = conv_out_extent(9);
        CHECK(g.val(y).shape == std::vector<std::int64_t>{2, to, fo});
        for (std::int64_t c = 0; c < 2; ++c)
            for (std::int64_t i = 0; i < to; ++i)
                for (std::int64_t j = 0; j < fo; ++j) {
                    double acc = b0[c];
                    for (std::int64_t di = 0; di < 3; ++di)
                        for (std::int64_t dj = 0; dj < 3; ++dj)
                            acc += w0[c * 9 + di * 3 + dj] * x0[(2 * i + di) * 9 + (2 * j + dj)];
                    CHECK(std::fabs(g.val(y)[(c * to + i) * fo + j] - acc) <= 1e-12);
                }
    }

    CHECK(gradcheck({x0, w0, b0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, tanh(g, conv2d_3x3s2(g, v[0], v[1], v[2])));
          }) <= 1e-6);

    // merge_channels flattens [C x T x F] to [T x C*F] with channel-major
    // columns; check the layout explicitly, then the gradient.
    const Tensor<double> m0 = random_tensor(rng, {2, 3, 4});
    {
        Graph<double> g;
        Value y = merge_channels(g, g.leaf(m0));
        CHECK(g.val(y).shape == std::vector<std::int64_t>{3, 8});
        for (std::int64_t c = 0; c < 2; ++c)
            for (std::int64_t t = 0; t < 3; ++t)
                for (std::int64_t f = 0; f < 4; ++f)
                    CHECK(g.val(y)[t * 8 + c * 4 + f] == m0[(c * 3 + t) * 4 + f]);
    }
    CHECK(gradcheck({m0}, [](Graph<double>& g, const std::vector<Value>& v) {
              return sum(g, sigmoid(g, merge_channels(g, v[0])));
          }) <= 1e-6);
}

TEST_CASE("rng reproducibility") {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.normal(0, 1) == b.normal(0, 1));
    CHECK(a.uniform_int(0, 1000) == b.uniform_int(0, 1000));
    Rng c(100);
    bool differs = false;
    Rng a2(99);
    for (int i = 0; i < 10; ++i) differs |= (a2.normal(0, 1) != c.normal(0, 1));
    CHECK(differs);
}
