#ifndef RWKVASR_TRANSDUCER_HPP
#define RWKVASR_TRANSDUCER_HPP

#include <vector>

#include "rwkvasr/graph.hpp"
#include "rwkvasr/model.hpp"

// Prediction network, joint network, and the transducer negative
// log-likelihood. The loss sums, over every monotone interleaving of T blank
// moves and U label moves that ends in a final blank, the product of joint
// probabilities along the path; it is computed with a log-space forward
// recursion over the (T+1) x (U+1) lattice. Blank is index 0; labels are
// 1..V. Gradients come from the tape, not a hand-coded backward recursion.

namespace rwkvasr {

// ---------------------------------------------------------------------------
// Prediction network, raw step form
// ---------------------------------------------------------------------------

inline void check_labels(const std::vector<int>& y, int vocab) {
    for (int t : y)
        if (t < 1 || t > vocab)
            throw Error("labels: token " + std::to_string(t) + " outside 1.." + std::to_string(vocab));
}

// Advance the gated recurrence by one token (0 = blank/start):
//   z = sigmoid(W_g s + e + b_g); c = tanh(W_c s + e + b_c); s' = (1-z) s + z c
template <class T>
void predictor_step(const PredictorFields<Tensor<T>>& pp, int token, Tensor<T>& s) {
    const std::int64_t d = pp.W_g.shape[0];
    if (token < 0 || token >= pp.embedding.shape[0]) throw Error("predictor: token out of range");
    const T* e = pp.embedding.row_ptr(token);
    std::vector<T> zp(d), cp(d);
    matvec_into(pp.W_g, s.data.data(), zp.data());
    matvec_into(pp.W_c, s.data.data(), cp.data());
    for (std::int64_t i = 0; i < d; ++i) {
        const T z = sigmoid_scalar(zp[i] + e[i] + pp.b_g[i]);
        const T c = std::tanh(cp[i] + e[i] + pp.b_c[i]);
        s[i] = (T(1) - z) * s[i] + z * c;
    }
}

// g_0..g_U as rows: g_0 from the start symbol alone, g_u after y_1..y_u.
template <class T>
Tensor<T> predict_states(const PredictorFields<Tensor<T>>& pp, const std::vector<int>& y, int vocab) {
    check_labels(y, vocab);
    const std::int64_t d = pp.W_g.shape[0];
    Tensor<T> out({static_cast<std::int64_t>(y.size()) + 1, d});
    Tensor<T> s({d});
    predictor_step(pp, 0, s);
    std::copy(s.data.begin(), s.data.end(), out.row_ptr(0));
    for (std::size_t u = 0; u < y.size(); ++u) {
        predictor_step(pp, y[u], s);
        std::copy(s.data.begin(), s.data.end(), out.row_ptr(static_cast<std::int64_t>(u) + 1));
    }
    check_finite(out, "predict_states");
    return out;
}

// ---------------------------------------------------------------------------
// Prediction network on the tape
// ---------------------------------------------------------------------------

template <class T>
Value predictor_step_taped(Graph<T>& g, const PredictorFields<Value>& pp, int token, Value s, Value ones) {
    Value e = row(g, pp.embedding, token);
    Value z = sigmoid(g, add(g, add(g, matvec(g, pp.W_g, s), e), pp.b_g));
    Value c = tanh(g, add(g, add(g, matvec(g, pp.W_c, s), e), pp.b_c));
    return add(g, mul(g, sub(g, ones, z), s), mul(g, z, c));
}

// Rows g_0..g_U, matching predict_states bit for bit.
template <class T>
Value predict_states_taped(Graph<T>& g, const PredictorFields<Value>& pp, const std::vector<int>& y, int vocab) {
    check_labels(y, vocab);
    const std::int64_t d = g.val(pp.W_g).shape[0];
    Value ones = g.leaf(Tensor<T>::full({d}, T(1)));
    Value s = g.leaf(Tensor<T>({d}));
    std::vector<Value> rows;
    rows.reserve(y.size() + 1);
    s = predictor_step_taped(g, pp, 0, s, ones);
    rows.push_back(s);
    for (int tok : y) {
        s = predictor_step_taped(g, pp, tok, s, ones);
        rows.push_back(s);
    }
    return stack_rows(g, std::span<const Value>(rows.data(), rows.size()));
}

// ---------------------------------------------------------------------------
// Joint network
// ---------------------------------------------------------------------------

// log softmax(W_out tanh(W_enc h + W_pred g + b)); out has V+1 entries.
template <class T>
void joint_log_probs(const JointFields<Tensor<T>>& jp, const T* h, const T* gu, T* out) {
    const std::int64_t dj = jp.W_enc.shape[0], v1 = jp.W_out.shape[0];
    std::vector<T> eh(dj), pg(dj), act(dj), logits(v1);
    matvec_into(jp.W_enc, h, eh.data());
    matvec_into(jp.W_pred, gu, pg.data());
    for (std::int64_t i = 0; i < dj; ++i) act[i] = std::tanh(eh[i] + pg[i] + jp.b[i]);
    matvec_into(jp.W_out, act.data(), logits.data());
    log_softmax_raw(logits.data(), v1, out);
}

// ---------------------------------------------------------------------------
// Transducer loss (taped forward recursion)
// ---------------------------------------------------------------------------

template <class T>
struct TapedLoss {
    Value nll;
    std::int64_t evaluated_cells = 0;  // joint evaluations performed
};

namespace detail {

// Joint log-prob vector for one lattice cell from precomputed projections.
template <class T>
Value joint_cell_taped(Graph<T>& g, const JointFields<Value>& jp, Value eh_rows, Value pg_rows,
                       std::int64_t t, std::int64_t u) {
    Value act = tanh(g, add(g, add(g, row(g, eh_rows, t), row(g, pg_rows, u)), jp.b));
    return log_softmax(g, matvec(g, jp.W_out, act));
}

}  // namespace detail

// Full-lattice negative log-likelihood; h is [T x d_io] on the tape.
template <class T>
TapedLoss<T> rnnt_loss_taped(Graph<T>& g, const PredictorFields<Value>& pp, const JointFields<Value>& jp,
                             Value h, const std::vector<int>& y, int vocab) {
    const std::int64_t tlen = g.val(h).shape[0];
    const std::int64_t ulen = static_cast<std::int64_t>(y.size());
    if (tlen < 1) throw ShapeError("transducer: need at least one encoder frame");
    check_labels(y, vocab);

    Value gs = predict_states_taped(g, pp, y, vocab);           // [(U+1) x d_pred]
    Value eh = matmul(g, h, jp.W_enc, false, true);             // [T x d_joint]
    Value pg = matmul(g, gs, jp.W_pred, false, true);           // [(U+1) x d_joint]

    // lp[t][u]: joint log-probs at frame t (0-based), prefix length u
    std::vector<std::vector<Value>> lp(static_cast<std::size_t>(tlen),
                                       std::vector<Value>(static_cast<std::size_t>(ulen) + 1));
    TapedLoss<T> out;
    for (std::int64_t t = 0; t < tlen; ++t)
        for (std::int64_t u = 0; u <= ulen; ++u) {
            lp[t][u] = detail::joint_cell_taped(g, jp, eh, pg, t, u);
            ++out.evaluated_cells;
        }

    auto blank_at = [&](std::int64_t t, std::int64_t u) { return index(g, lp[t][u], 0); };
    auto label_at = [&](std::int64_t t, std::int64_t u) { return index(g, lp[t][u], y[static_cast<std::size_t>(u)]); };

    // alpha[u] holds log alpha(t, u) while sweeping t upward
    std::vector<Value> alpha(static_cast<std::size_t>(ulen) + 1);
    alpha[0] = g.leaf(Tensor<T>::scalar(T(0)));
    for (std::int64_t u = 1; u <= ulen; ++u) alpha[u] = add(g, alpha[u - 1], label_at(0, u - 1));
    for (std::int64_t t = 1; t < tlen; ++t) {
        alpha[0] = add(g, alpha[0], blank_at(t - 1, 0));
        for (std::int64_t u = 1; u <= ulen; ++u)
            alpha[u] = logadd(g, add(g, alpha[u], blank_at(t - 1, u)), add(g, alpha[u - 1], label_at(t, u - 1)));
    }
    out.nll = neg(g, add(g, alpha[ulen], blank_at(tlen - 1, ulen)));
    return out;
}

// ---------------------------------------------------------------------------
// Brute-force enumeration oracle
// ---------------------------------------------------------------------------

struct BruteForceResult {
    double nll = 0.0;
    std::int64_t paths = 0;  // should equal C(T+U-1, U)
};

// Enumerates every monotone interleaving of blanks and labels explicitly and
// log-sums the path probabilities. Exponential: guarded by T+U <= 14.
template <class T>
BruteForceResult rnnt_loss_bruteforce(const Model<T>& m, const Tensor<T>& h, const std::vector<int>& y) {
    const std::int64_t tlen = h.shape[0];
    const std::int64_t ulen = static_cast<std::int64_t>(y.size());
    if (tlen + ulen > 14) throw Error("bruteforce: T+U budget of 14 exceeded");
    if (tlen < 1) throw ShapeError("bruteforce: need at least one frame");
    check_labels(y, m.config.vocab);

    const Tensor<T> gs = predict_states(m.params.pred, y, m.config.vocab);
    const std::int64_t v1 = m.config.vocab + 1;
    Tensor<T> lp({tlen, ulen + 1, v1});
    for (std::int64_t t = 0; t < tlen; ++t)
        for (std::int64_t u = 0; u <= ulen; ++u)
            joint_log_probs(m.params.joint, h.row_ptr(t), gs.row_ptr(u), &lp.at(t, u, 0));

    std::vector<T> path_logs;
    std::int64_t count = 0;
    // walk the lattice: at (t,u) either consume a blank (t+1) or a label (u+1)
    auto walk = [&](auto&& self, std::int64_t t, std::int64_t u, T acc) -> void {
        if (t == tlen - 1 && u == ulen) {
            path_logs.push_back(acc + lp.at(t, u, 0));
            ++count;
            return;
        }
        if (t < tlen - 1) self(self, t + 1, u, acc + lp.at(t, u, 0));
        if (u < ulen) self(self, t, u + 1, acc + lp.at(t, u, y[static_cast<std::size_t>(u)]));
    };
    walk(walk, 0, 0, T(0));

    BruteForceResult res;
    res.paths = count;
    res.nll = -static_cast<double>(logsumexp_raw(path_logs.data(), static_cast<std::int64_t>(path_logs.size())));
    return res;
}

}  // namespace rwkvasr

#endif
