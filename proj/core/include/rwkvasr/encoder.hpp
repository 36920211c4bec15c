#ifndef RWKVASR_ENCODER_HPP
#define RWKVASR_ENCODER_HPP

#include <vector>

#include "rwkvasr/graph.hpp"
#include "rwkvasr/model.hpp"
#include "rwkvasr/rng.hpp"

// RWKV encoder: stacked blocks of time mixing (the wkv recurrence behind a
// sigmoid receptance gate) and channel mixing (squared-ReLU feed-forward),
// each wrapped as x + Sub(LayerNorm(x)). Two evaluation paths:
//   - taped parallel: whole utterance on the autodiff graph (training)
//   - recurrent step: one frame against a constant-size state (inference)
// Both run the identical arithmetic in the same order per element, so their
// outputs are bit-identical; the recurrence is the stabilized form
//   output: r = max(p, u+k);  wkv = (e^{p-r} a + e^{u+k-r} v) / (e^{p-r} b + e^{u+k-r})
//   update: q = max(p-w, k);  a' = e^{p-w-q} a + e^{k-q} v;  b' = e^{p-w-q} b + e^{k-q};  p' = q
// which equals the plain recurrence with (a_plain, b_plain) = (a e^p, b e^p)
// but stays finite for |k| up to hundreds. The denominator is at least 1:
// whenever u+k is the max the current term contributes e^0, and otherwise
// b >= 1 by induction from the first update.

namespace rwkvasr {

inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// wkv recurrence, raw form
// ---------------------------------------------------------------------------

template <class T>
struct WkvState {
    Tensor<T> a, b, p;
    static WkvState fresh(std::int64_t d) {
        WkvState st;
        st.a = Tensor<T>({d});
        st.b = Tensor<T>({d});
        st.p = Tensor<T>::full({d}, neg_inf_sentinel<T>());
        return st;
    }
};

// One recurrence step; w is the positive decay (already exponentiated).
template <class T>
void wkv_step(WkvState<T>& st, const T* k, const T* v, const T* w, const T* u, std::int64_t d, T* out) {
    for (std::int64_t i = 0; i < d; ++i) {
        const T uk = u[i] + k[i];
        const T rm = st.p[i] >= uk ? st.p[i] : uk;
        const T e1 = std::exp(st.p[i] - rm);
        const T e2 = std::exp(uk - rm);
        out[i] = (e1 * st.a[i] + e2 * v[i]) / (e1 * st.b[i] + e2);
        const T pw = st.p[i] - w[i];
        const T q = pw >= k[i] ? pw : k[i];
        const T e3 = std::exp(pw - q);
        const T e4 = std::exp(k[i] - q);
        st.a[i] = e3 * st.a[i] + e4 * v[i];
        st.b[i] = e3 * st.b[i] + e4;
        st.p[i] = q;
    }
}

// Whole-sequence evaluation of the decaying attention average: row t equals
// (sum_{i<t} e^{-(t-1-i)w + k_i} v_i + e^{u+k_t} v_t) / (same without v).
template <class T>
Tensor<T> wkv_parallel(const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& w, const Tensor<T>& u) {
    if (k.rank() != 2 || !k.same_shape(v)) throw ShapeError("wkv: k and v must be [T x d]");
    const std::int64_t tlen = k.shape[0], d = k.shape[1];
    if (w.numel() != d || u.numel() != d) throw ShapeError("wkv: w and u must be [d]");
    for (T wi : w.data)
        if (!(wi > T(0))) throw NumericError("wkv: decay must be strictly positive");
    Tensor<T> out({tlen, d});
    WkvState<T> st = WkvState<T>::fresh(d);
    for (std::int64_t t = 0; t < tlen; ++t)
        wkv_step(st, k.row_ptr(t), v.row_ptr(t), w.data.data(), u.data.data(), d, out.row_ptr(t));
    check_finite(out, "wkv");
    return out;
}

// ---------------------------------------------------------------------------
// Recurrent (streaming) block stack
// ---------------------------------------------------------------------------

template <class T>
struct EncoderState {
    std::vector<Tensor<T>> x_prev_time;  // LN'd previous frame entering time mixing
    std::vector<Tensor<T>> x_prev_chan;  // LN'd previous frame entering channel mixing
    std::vector<WkvState<T>> wkv;

    static EncoderState fresh(const ModelConfig& cfg) {
        EncoderState st;
        st.x_prev_time.assign(cfg.blocks, Tensor<T>({cfg.d_io}));
        st.x_prev_chan.assign(cfg.blocks, Tensor<T>({cfg.d_io}));
        st.wkv.reserve(cfg.blocks);
        for (int i = 0; i < cfg.blocks; ++i) st.wkv.push_back(WkvState<T>::fresh(cfg.d_att));
        return st;
    }

    void serialize(std::vector<unsigned char>& out) const {
        auto dump = [&](const Tensor<T>& t) {
            const auto* p = reinterpret_cast<const unsigned char*>(t.data.data());
            out.insert(out.end(), p, p + t.data.size() * sizeof(T));
        };
        for (std::size_t l = 0; l < x_prev_time.size(); ++l) {
            dump(x_prev_time[l]);
            dump(x_prev_chan[l]);
            dump(wkv[l].a);
            dump(wkv[l].b);
            dump(wkv[l].p);
        }
    }
};

// One frame through all blocks; x_in/h_out are [d_io], state advances.
template <class T>
void encode_step(const Model<T>& m, const T* x_in, T* h_out, EncoderState<T>& st) {
    const std::int64_t d_io = m.config.d_io, d_att = m.config.d_att, d_lin = m.config.d_linear;
    const T eps = static_cast<T>(kLayerNormEps);
    std::vector<T> x(x_in, x_in + d_io);
    std::vector<T> xn(d_io), xr(d_io), xk(d_io), xv(d_io);
    std::vector<T> r(d_att), k(d_att), v(d_att), wdec(d_att), gated(d_att), wkv_out(d_att);
    std::vector<T> o(d_io), r2(d_io), vout(d_io), klin(d_lin);

    for (std::size_t l = 0; l < m.params.blocks.size(); ++l) {
        const BlockFields<Tensor<T>>& blk = m.params.blocks[l];

        // time mixing
        layer_norm_row(x.data(), blk.ln_time_gain.data.data(), blk.ln_time_bias.data.data(), d_io, eps, xn.data());
        const Tensor<T>& pt = st.x_prev_time[l];
        for (std::int64_t j = 0; j < d_io; ++j) {
            xr[j] = blk.time.mu_r[j] * xn[j] + (T(1) - blk.time.mu_r[j]) * pt[j];
            xk[j] = blk.time.mu_k[j] * xn[j] + (T(1) - blk.time.mu_k[j]) * pt[j];
            xv[j] = blk.time.mu_v[j] * xn[j] + (T(1) - blk.time.mu_v[j]) * pt[j];
        }
        std::copy(xn.begin(), xn.end(), st.x_prev_time[l].data.begin());
        matvec_into(blk.time.W_r, xr.data(), r.data());
        matvec_into(blk.time.W_k, xk.data(), k.data());
        matvec_into(blk.time.W_v, xv.data(), v.data());
        for (std::int64_t i = 0; i < d_att; ++i) wdec[i] = std::exp(blk.time.w_raw[i]);
        wkv_step(st.wkv[l], k.data(), v.data(), wdec.data(), blk.time.u.data.data(), d_att, wkv_out.data());
        for (std::int64_t i = 0; i < d_att; ++i) gated[i] = sigmoid_scalar(r[i]) * wkv_out[i];
        matvec_into(blk.time.W_o, gated.data(), o.data());
        for (std::int64_t j = 0; j < d_io; ++j) x[j] = x[j] + o[j];

        // channel mixing
        layer_norm_row(x.data(), blk.ln_chan_gain.data.data(), blk.ln_chan_bias.data.data(), d_io, eps, xn.data());
        const Tensor<T>& pc = st.x_prev_chan[l];
        for (std::int64_t j = 0; j < d_io; ++j) {
            xr[j] = blk.chan.mu_r[j] * xn[j] + (T(1) - blk.chan.mu_r[j]) * pc[j];
            xk[j] = blk.chan.mu_k[j] * xn[j] + (T(1) - blk.chan.mu_k[j]) * pc[j];
        }
        std::copy(xn.begin(), xn.end(), st.x_prev_chan[l].data.begin());
        matvec_into(blk.chan.W_r, xr.data(), r2.data());
        matvec_into(blk.chan.W_k, xk.data(), klin.data());
        for (std::int64_t i = 0; i < d_lin; ++i) klin[i] = squared_relu_scalar(klin[i]);
        matvec_into(blk.chan.W_v, klin.data(), vout.data());
        for (std::int64_t j = 0; j < d_io; ++j) x[j] = x[j] + sigmoid_scalar(r2[j]) * vout[j];
    }
    std::copy(x.begin(), x.end(), h_out);
    for (T hv : x)
        if (!std::isfinite(hv)) throw NumericError("encode_step: non-finite output");
}

// Frame loop over encode_step; pass a state to continue an open stream.
template <class T>
Tensor<T> encode_recurrent(const Model<T>& m, const Tensor<T>& x, EncoderState<T>* state = nullptr) {
    if (x.rank() != 2 || x.shape[1] != m.config.d_io) throw ShapeError("encode: want [T x d_io]");
    EncoderState<T> local = EncoderState<T>::fresh(m.config);
    EncoderState<T>& st = state ? *state : local;
    Tensor<T> h(x.shape);
    for (std::int64_t t = 0; t < x.shape[0]; ++t) encode_step(m, x.row_ptr(t), h.row_ptr(t), st);
    return h;
}

// ---------------------------------------------------------------------------
// Taped parallel path
// ---------------------------------------------------------------------------

struct TapedEncodeOptions {
    bool dropout_active = false;
    double dropout_rate = 0.0;
    Rng* rng = nullptr;  // mask source when dropout_active
};

template <class T>
Value wkv_scan_taped(Graph<T>& g, Value k, Value v, Value w_decay, Value u) {
    const std::int64_t tlen = g.val(k).shape[0], d = g.val(k).shape[1];
    Value a = g.leaf(Tensor<T>({d}));
    Value b = g.leaf(Tensor<T>({d}));
    Value p = g.leaf(Tensor<T>::full({d}, neg_inf_sentinel<T>()));
    std::vector<Value> rows;
    rows.reserve(static_cast<std::size_t>(tlen));
    for (std::int64_t t = 0; t < tlen; ++t) {
        Value kt = row(g, k, t);
        Value vt = row(g, v, t);
        Value uk = add(g, u, kt);
        Value rm = max_ew(g, p, uk);
        Value e1 = exp(g, sub(g, p, rm));
        Value e2 = exp(g, sub(g, uk, rm));
        Value num = add(g, mul(g, e1, a), mul(g, e2, vt));
        Value den = add(g, mul(g, e1, b), e2);
        rows.push_back(div(g, num, den));
        Value pw = sub(g, p, w_decay);
        Value q = max_ew(g, pw, kt);
        Value e3 = exp(g, sub(g, pw, q));
        Value e4 = exp(g, sub(g, kt, q));
        a = add(g, mul(g, e3, a), mul(g, e4, vt));
        b = add(g, mul(g, e3, b), e4);
        p = q;
    }
    return stack_rows(g, std::span<const Value>(rows.data(), rows.size()));
}

namespace detail {

template <class T>
Value dropout_taped(Graph<T>& g, Value x, const TapedEncodeOptions& opt) {
    if (!opt.dropout_active || opt.dropout_rate <= 0.0) return x;
    if (!opt.rng) throw StateError("dropout: no generator supplied");
    Tensor<T> mask(g.val(x).shape);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - opt.dropout_rate));
    for (auto& mv : mask.data) mv = opt.rng->bernoulli(opt.dropout_rate) ? T(0) : keep_scale;
    return mul(g, x, g.leaf(std::move(mask)));
}

// mu * xn + (1 - mu) * shifted, rows of xn against the one-frame lookback.
template <class T>
Value token_shift_taped(Graph<T>& g, Value xn, Value shifted, Value mu, Value ones) {
    return add(g, mul_row(g, xn, mu), mul_row(g, shifted, sub(g, ones, mu)));
}

}  // namespace detail

template <class T>
Value rwkv_block_taped(Graph<T>& g, const BlockFields<Value>& blk, const ModelConfig& cfg, Value x,
                       const TapedEncodeOptions& opt) {
    const T eps = static_cast<T>(kLayerNormEps);
    Value ones = g.leaf(Tensor<T>::full({cfg.d_io}, T(1)));

    // x + Dropout(TimeMixing(LayerNorm(x)))
    Value xn = layer_norm(g, x, blk.ln_time_gain, blk.ln_time_bias, eps);
    Value shifted = shift_rows(g, xn);
    Value xr = detail::token_shift_taped(g, xn, shifted, blk.time.mu_r, ones);
    Value xk = detail::token_shift_taped(g, xn, shifted, blk.time.mu_k, ones);
    Value xv = detail::token_shift_taped(g, xn, shifted, blk.time.mu_v, ones);
    Value r = matmul(g, xr, blk.time.W_r, false, true);
    Value k = matmul(g, xk, blk.time.W_k, false, true);
    Value v = matmul(g, xv, blk.time.W_v, false, true);
    Value wkv = wkv_scan_taped(g, k, v, exp(g, blk.time.w_raw), blk.time.u);
    Value o = matmul(g, mul(g, sigmoid(g, r), wkv), blk.time.W_o, false, true);
    x = add(g, x, detail::dropout_taped(g, o, opt));

    // x + Dropout(ChannelMixing(LayerNorm(x)))
    Value xn2 = layer_norm(g, x, blk.ln_chan_gain, blk.ln_chan_bias, eps);
    Value shifted2 = shift_rows(g, xn2);
    Value xr2 = detail::token_shift_taped(g, xn2, shifted2, blk.chan.mu_r, ones);
    Value xk2 = detail::token_shift_taped(g, xn2, shifted2, blk.chan.mu_k, ones);
    Value r2 = matmul(g, xr2, blk.chan.W_r, false, true);
    Value k2 = matmul(g, xk2, blk.chan.W_k, false, true);
    Value vv = matmul(g, squared_relu(g, k2), blk.chan.W_v, false, true);
    Value o2 = mul(g, sigmoid(g, r2), vv);
    return add(g, x, detail::dropout_taped(g, o2, opt));
}

// Whole-utterance evaluation of the block stack on the tape; x is [T x d_io].
template <class T>
Value encode_taped(Graph<T>& g, const ModelFields<Value>& tm, const ModelConfig& cfg, Value x,
                   const TapedEncodeOptions& opt = {}) {
    for (const auto& blk : tm.blocks) x = rwkv_block_taped(g, blk, cfg, x, opt);
    return x;
}

}  // namespace rwkvasr

#endif
