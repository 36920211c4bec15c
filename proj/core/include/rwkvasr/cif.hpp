#ifndef RWKVASR_CIF_HPP
#define RWKVASR_CIF_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rwkvasr/transducer.hpp"

// Boundary-aware pruning: a continuous integrate-and-fire head assigns each
// encoder frame a weight alpha_t = sigmoid(w . h_t + b); scaled so the weights
// sum to U, an accumulator fires a label boundary each time it crosses 1.0.
// The boundaries center a width-R band over the lattice, and the transducer
// recursion is evaluated only inside the band. Removing paths can only lower
// the summed probability, so the pruned loss is always >= the full loss.

namespace rwkvasr {

inline constexpr double kCifThreshold = 1.0;

template <class T>
struct CifAlignment {
    std::vector<std::int64_t> boundaries;  // 1-based frames, one per label, non-decreasing
    T quantity_loss = 0;                   // |sum(alpha) - U| from the unscaled weights
};

// Accumulate-and-fire over training-scaled weights; emits exactly U
// boundaries (rounding shortfalls are padded with the final frame).
template <class T>
CifAlignment<T> cif_align(const Tensor<T>& h, std::int64_t u_target, const CifFields<Tensor<T>>& cp) {
    if (h.rank() != 2) throw ShapeError("cif: want [T x d_io]");
    const std::int64_t tlen = h.shape[0];
    if (u_target > 0 && tlen < 1) throw ShapeError("cif: no frames to align labels to");

    std::vector<T> alpha(static_cast<std::size_t>(tlen));
    T total = 0;
    for (std::int64_t t = 0; t < tlen; ++t) {
        alpha[t] = sigmoid_scalar(dot(cp.w.data.data(), h.row_ptr(t), cp.w.numel()) + cp.b[0]);
        total += alpha[t];
    }

    CifAlignment<T> out;
    out.quantity_loss = std::fabs(total - static_cast<T>(u_target));
    if (u_target == 0) return out;

    const T scale = static_cast<T>(u_target) / total;  // total > 0: every sigmoid is positive
    const T beta = static_cast<T>(kCifThreshold);
    T acc = 0;
    for (std::int64_t t = 0; t < tlen && static_cast<std::int64_t>(out.boundaries.size()) < u_target; ++t) {
        acc += alpha[t] * scale;
        while (acc >= beta && static_cast<std::int64_t>(out.boundaries.size()) < u_target) {
            out.boundaries.push_back(t + 1);
            acc -= beta;
        }
    }
    while (static_cast<std::int64_t>(out.boundaries.size()) < u_target) out.boundaries.push_back(tlen);
    return out;
}

// Per-frame label interval [lo_t, hi_t], each at most R wide.
struct PruneBand {
    std::vector<std::int64_t> lo, hi;  // indexed by 0-based frame
    int width = 0;

    std::int64_t cells() const {
        std::int64_t n = 0;
        for (std::size_t t = 0; t < lo.size(); ++t) n += hi[t] - lo[t] + 1;
        return n;
    }
    bool contains(std::int64_t t, std::int64_t u) const {
        return u >= lo[static_cast<std::size_t>(t)] && u <= hi[static_cast<std::size_t>(t)];
    }
};

// Center a width-R window on u*(t) = #{u : b_u <= t}, clip to [0,U], then
// repair: force (1,0) and (T,U) inside, make lo non-decreasing, and cap
// frame-to-frame jumps in both directions so consecutive windows overlap (a
// monotone in-band path exists). The repair succeeds exactly when a width-R
// band can connect the corners at all, i.e. U - R + 1 <= (T-1)(R-1); only
// then is BandError thrown, regardless of how skewed the boundaries are.
inline PruneBand build_band(const std::vector<std::int64_t>& boundaries, std::int64_t tlen,
                            std::int64_t ulen, int r) {
    if (r < 2) throw BandError("band: width must be at least 2 (one emit and one blank everywhere)");
    if (tlen < 1) throw BandError("band: empty utterance");
    const std::int64_t half = (r - 1) / 2;
    const std::int64_t lo_cap = std::max<std::int64_t>(0, ulen - r + 1);

    PruneBand band;
    band.width = r;
    band.lo.resize(static_cast<std::size_t>(tlen));
    band.hi.resize(static_cast<std::size_t>(tlen));

    std::size_t next_b = 0;  // boundaries are sorted, sweep once
    std::int64_t fired = 0;
    for (std::int64_t t = 0; t < tlen; ++t) {
        while (next_b < boundaries.size() && boundaries[next_b] <= t + 1) {
            ++next_b;
            ++fired;
        }
        const std::int64_t center = std::min(fired, ulen);
        band.lo[t] = std::clamp<std::int64_t>(center - half, 0, lo_cap);
    }

    band.lo[0] = 0;                                              // (1,0) inside
    for (std::int64_t t = 1; t < tlen; ++t)                      // monotone, jump <= r-1
        band.lo[t] = std::min(std::max(band.lo[t], band.lo[t - 1]), band.lo[t - 1] + (r - 1));
    band.lo[tlen - 1] = std::max(band.lo[tlen - 1], lo_cap);     // (T,U) inside
    for (std::int64_t t = tlen - 2; t >= 0; --t)                 // overlap: lo_{t+1} - lo_t <= r-1
        band.lo[t] = std::max(band.lo[t], band.lo[t + 1] - (r - 1));
    if (band.lo[0] != 0)
        throw BandError("band: width " + std::to_string(r) + " cannot connect (1,0) to (" +
                        std::to_string(tlen) + "," + std::to_string(ulen) + ")");

    for (std::int64_t t = 0; t < tlen; ++t)
        band.hi[t] = std::min(ulen, band.lo[t] + r - 1);
    if (band.hi[tlen - 1] != ulen)
        throw BandError("band: terminal label row not reachable");
    return band;
}

// Band-restricted forward recursion; joint evaluations happen only for
// in-band cells. Out-of-band forward variables hold the absorbing sentinel.
template <class T>
TapedLoss<T> bat_loss_taped(Graph<T>& g, const PredictorFields<Value>& pp, const JointFields<Value>& jp,
                            Value h, const std::vector<int>& y, int vocab, const PruneBand& band) {
    const std::int64_t tlen = g.val(h).shape[0];
    const std::int64_t ulen = static_cast<std::int64_t>(y.size());
    if (static_cast<std::int64_t>(band.lo.size()) != tlen) throw BandError("band: frame count mismatch");
    if (!band.contains(0, 0) || !band.contains(tlen - 1, ulen))
        throw BandError("band: corners not inside");
    check_labels(y, vocab);

    Value gs = predict_states_taped(g, pp, y, vocab);
    Value eh = matmul(g, h, jp.W_enc, false, true);
    Value pg = matmul(g, gs, jp.W_pred, false, true);

    TapedLoss<T> out;
    std::vector<std::vector<Value>> lp(static_cast<std::size_t>(tlen),
                                       std::vector<Value>(static_cast<std::size_t>(ulen) + 1));
    for (std::int64_t t = 0; t < tlen; ++t)
        for (std::int64_t u = band.lo[t]; u <= band.hi[t]; ++u) {
            lp[t][u] = detail::joint_cell_taped(g, jp, eh, pg, t, u);
            ++out.evaluated_cells;
        }

    const Value sentinel = g.leaf(Tensor<T>::scalar(neg_inf_sentinel<T>()));
    std::vector<Value> alpha(static_cast<std::size_t>(ulen) + 1, sentinel);
    alpha[0] = g.leaf(Tensor<T>::scalar(T(0)));
    for (std::int64_t u = 1; u <= band.hi[0]; ++u)
        alpha[u] = add(g, alpha[u - 1], index(g, lp[0][u - 1], y[static_cast<std::size_t>(u - 1)]));
    for (std::int64_t t = 1; t < tlen; ++t) {
        std::vector<Value> next(static_cast<std::size_t>(ulen) + 1, sentinel);
        for (std::int64_t u = band.lo[t]; u <= band.hi[t]; ++u) {
            Value from_blank = sentinel;
            if (band.contains(t - 1, u) && g.val(alpha[u])[0] != neg_inf_sentinel<T>())
                from_blank = add(g, alpha[u], index(g, lp[t - 1][u], 0));
            Value from_label = sentinel;
            if (u > 0 && band.contains(t, u - 1) && g.val(next[u - 1])[0] != neg_inf_sentinel<T>())
                from_label = add(g, next[u - 1], index(g, lp[t][u - 1], y[static_cast<std::size_t>(u - 1)]));
            next[u] = logadd(g, from_blank, from_label);
        }
        alpha = std::move(next);
    }
    if (g.val(alpha[ulen])[0] == neg_inf_sentinel<T>())
        throw BandError("band: terminal cell unreachable through the band");
    out.nll = neg(g, add(g, alpha[ulen], index(g, lp[tlen - 1][ulen], 0)));
    return out;
}

// |sum_t sigmoid(w . h_t + b) - U| on the tape; trains the alignment head.
// Same dot/accumulation order as cif_align, so the two agree bitwise.
template <class T>
Value cif_quantity_taped(Graph<T>& g, const CifFields<Value>& cp, Value h, std::int64_t u_target) {
    Value alphas = sigmoid(g, add_scalar(g, matvec(g, h, cp.w), cp.b));
    Value total = sum(g, alphas);
    return abs(g, sub(g, total, g.leaf(Tensor<T>::scalar(static_cast<T>(u_target)))));
}

}  // namespace rwkvasr

#endif
