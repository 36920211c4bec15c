#ifndef RWKVASR_DECODER_HPP
#define RWKVASR_DECODER_HPP

#include <vector>

#include "rwkvasr/encoder.hpp"
#include "rwkvasr/subsample.hpp"
#include "rwkvasr/transducer.hpp"

// Greedy transducer decoding. The offline and incremental paths share the
// per-frame emission routine, and the incremental path reuses the streaming
// subsampler and recurrent encoder, so the two produce identical tokens.

namespace rwkvasr {

inline constexpr int kMaxSymbolsPerFrame = 10;

// First maximum wins: strict > scan, so ties resolve to the lowest index.
template <class T>
int argmax_lowest(const T* x, std::int64_t n) {
    int best = 0;
    for (std::int64_t i = 1; i < n; ++i)
        if (x[i] > x[best]) best = static_cast<int>(i);
    return best;
}

// Emit labels for one encoder frame, advancing the predictor state in place.
// Blank moves on to the next frame; the per-frame cap keeps latency bounded.
template <class T>
void greedy_emit_frame(const Model<T>& m, const T* h_t, Tensor<T>& s, std::vector<int>& out) {
    const std::int64_t v1 = m.config.vocab + 1;
    std::vector<T> lp(static_cast<std::size_t>(v1));
    for (int k = 0; k < kMaxSymbolsPerFrame; ++k) {
        joint_log_probs(m.params.joint, h_t, s.data.data(), lp.data());
        const int tok = argmax_lowest(lp.data(), v1);
        if (tok == 0) return;
        out.push_back(tok);
        predictor_step(m.params.pred, tok, s);
    }
}

// Fresh predictor state: one step on the start symbol from zeros.
template <class T>
Tensor<T> fresh_predictor_state(const Model<T>& m) {
    Tensor<T> s({m.config.d_pred});
    predictor_step(m.params.pred, 0, s);
    return s;
}

// Decode a whole encoded utterance [T x d_io].
template <class T>
std::vector<int> greedy_decode(const Model<T>& m, const Tensor<T>& h) {
    if (h.rank() != 2 || h.shape[1] != m.config.d_io) throw ShapeError("decode: want [T x d_io]");
    Tensor<T> s = fresh_predictor_state(m);
    std::vector<int> out;
    for (std::int64_t t = 0; t < h.shape[0]; ++t) greedy_emit_frame(m, h.row_ptr(t), s, out);
    return out;
}

// Incremental decoder: mel rows in, labels out, constant-size state.
template <class T>
class DecodeSession {
  public:
    explicit DecodeSession(const Model<T>& m)
        : model_(&m),
          sub_(&m.params.frontend, m.config.n_mels),
          enc_(EncoderState<T>::fresh(m.config)),
          pred_(fresh_predictor_state(m)),
          staged_({m.config.d_io}),
          h_(static_cast<std::size_t>(m.config.d_io)) {}

    // Feed one mel row; appends any labels it caused to `out`.
    void feed_row(const T* mel_row, std::vector<int>& out) {
        if (closed_) throw StateError("session: feed after close");
        if (!sub_.feed(mel_row, staged_)) return;
        encode_step(*model_, staged_.data.data(), h_.data(), enc_);
        greedy_emit_frame(*model_, h_.data(), pred_, out);
    }

    // Flush the tail and stop accepting rows: a partial final window is
    // completed the same way the offline path pads it, so closing can emit
    // trailing labels. Idempotent; only the first call can produce output.
    void close(std::vector<int>& out) {
        if (closed_) return;
        closed_ = true;
        if (!sub_.finalize(staged_)) return;
        encode_step(*model_, staged_.data.data(), h_.data(), enc_);
        greedy_emit_frame(*model_, h_.data(), pred_, out);
    }

    // Close and discard any trailing labels.
    void close() {
        std::vector<int> discard;
        close(discard);
    }

    bool closed() const { return closed_; }
    std::int64_t frames_decoded() const { return sub_.frames_emitted(); }

    // Fixed-size snapshot of everything the session carries across rows.
    std::vector<unsigned char> serialize() const {
        std::vector<unsigned char> bytes;
        sub_.serialize(bytes);
        enc_.serialize(bytes);
        const auto* p = reinterpret_cast<const unsigned char*>(pred_.data.data());
        bytes.insert(bytes.end(), p, p + pred_.data.size() * sizeof(T));
        return bytes;
    }

  private:
    const Model<T>* model_;
    StreamingSubsampler<T> sub_;
    EncoderState<T> enc_;
    Tensor<T> pred_;
    Tensor<T> staged_;
    std::vector<T> h_;
    bool closed_ = false;
};

}  // namespace rwkvasr

#endif
