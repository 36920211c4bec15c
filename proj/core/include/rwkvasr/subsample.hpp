#ifndef RWKVASR_SUBSAMPLE_HPP
#define RWKVASR_SUBSAMPLE_HPP

#include <algorithm>
#include <cstring>
#include <vector>

#include "rwkvasr/graph.hpp"
#include "rwkvasr/model.hpp"

// Factor-4 time subsampling: two 3x3 stride-2 valid convolutions over
// (time x mel) with squared-ReLU activations, then a linear projection of the
// flattened channels to d_io. Three evaluation paths share one conv routine:
//   - taped (training / parallel decode): whole utterance on the graph
//   - raw offline: whole utterance without a tape
//   - streaming: a 7-row window per emitted frame, bit-identical to offline
// Subsampled frame j consumes raw rows 4j..4j+6, so a frame fires exactly
// when rows_seen reaches 4j + 7. A trailing partial window (1-3 uncovered
// rows) is completed by replicating the final row; without this an utterance
// that stops right after a short final event loses that event entirely, since
// its rows never reach any window. Offline paths pad up front; the streaming
// path pads when the caller closes the stream.

namespace rwkvasr {

// [T_raw x m] -> [T_pad x m]: append 0-3 copies of the last row so the final
// window is complete. Inputs shorter than one window pass through unchanged
// (downstream paths reject them).
template <class T>
Tensor<T> pad_tail_rows(const Tensor<T>& feats) {
    if (feats.rank() != 2) throw ShapeError("subsample: rank-2 features required");
    const std::int64_t t = feats.shape[0], m = feats.shape[1];
    if (t < 7) return feats;
    const std::int64_t pad = (4 - ((t - 7) % 4)) % 4;
    if (pad == 0) return feats;
    Tensor<T> out({t + pad, m});
    std::memcpy(out.data.data(), feats.data.data(), static_cast<std::size_t>(t * m) * sizeof(T));
    for (std::int64_t i = 0; i < pad; ++i)
        std::memcpy(out.row_ptr(t + i), feats.row_ptr(t - 1), static_cast<std::size_t>(m) * sizeof(T));
    return out;
}

// Tail-padded [1 x T_pad x n_mels] leaf for the taped conv path. The pad rows
// are input data, not parameters, so they carry no gradient of interest.
template <class T>
Value lift_features(Graph<T>& g, const Tensor<T>& feats) {
    const Tensor<T> padded = pad_tail_rows(feats);
    Tensor<T> feats3d({1, padded.shape[0], padded.shape[1]});
    feats3d.data = padded.data;
    return g.leaf(std::move(feats3d));
}

// Taped whole-utterance path; feats3d is a [1 x T_pad x n_mels] leaf,
// normally produced by lift_features.
template <class T>
Value subsample_taped(Graph<T>& g, const FrontendFields<Value>& fe, Value feats3d) {
    Value c1 = squared_relu(g, conv2d_3x3s2(g, feats3d, fe.conv1_w, fe.conv1_b));
    Value c2 = squared_relu(g, conv2d_3x3s2(g, c1, fe.conv2_w, fe.conv2_b));
    Value merged = merge_channels(g, c2);  // [T x C*F2]
    return add_row(g, matmul(g, merged, fe.proj_w, false, true), fe.proj_b);  // [T x d_io]
}

namespace detail {

// One subsampled frame from a [1 x 7 x n_mels] window of raw rows.
template <class T>
void subsample_window(const FrontendFields<Tensor<T>>& fe, const Tensor<T>& window, T* frame_out) {
    const std::int64_t c = fe.conv1_w.shape[0];
    const std::int64_t f1 = conv_out_extent(window.shape[2]);
    const std::int64_t f2 = conv_out_extent(f1);
    Tensor<T> t1({c, 3, f1});
    conv3x3s2_into(window, fe.conv1_w, fe.conv1_b, t1);
    for (auto& v : t1.data) v = squared_relu_scalar(v);
    Tensor<T> t2({c, 1, f2});
    conv3x3s2_into(t1, fe.conv2_w, fe.conv2_b, t2);
    for (auto& v : t2.data) v = squared_relu_scalar(v);
    // merge channels: row layout [c0 bins | c1 bins | ...], matching merge_channels
    Tensor<T> merged({c * f2});
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t j = 0; j < f2; ++j) merged[ci * f2 + j] = t2.at(ci, 0, j);
    matvec_into(fe.proj_w, merged.data.data(), frame_out);
    for (std::int64_t i = 0; i < fe.proj_b.numel(); ++i) frame_out[i] += fe.proj_b[i];
}

}  // namespace detail

// Raw offline path: [T_raw x n_mels] -> [T x d_io] by sliding the same
// 7-row window the streaming path uses, over the tail-padded rows.
template <class T>
Tensor<T> subsample_raw(const FrontendFields<Tensor<T>>& fe, const Tensor<T>& feats) {
    if (feats.rank() != 2) throw ShapeError("subsample: rank-2 features required");
    const std::int64_t t_raw = feats.shape[0], m = feats.shape[1];
    const std::int64_t t_out = subsampled_length(t_raw);
    if (t_out < 1) throw ShapeError("subsample: input too short (need at least 7 rows, got " +
                                    std::to_string(t_raw) + ")");
    const Tensor<T> padded = pad_tail_rows(feats);
    const std::int64_t d_io = fe.proj_w.shape[0];
    Tensor<T> out({t_out, d_io});
    Tensor<T> window({1, 7, m});
    for (std::int64_t j = 0; j < t_out; ++j) {
        std::memcpy(window.data.data(), padded.row_ptr(4 * j), static_cast<std::size_t>(7 * m) * sizeof(T));
        detail::subsample_window(fe, window, out.row_ptr(j));
    }
    check_finite(out, "subsample");
    return out;
}

// Streaming path: feed raw rows one at a time; a subsampled frame fires every
// fourth row once seven have accumulated. Holds the last 7 rows in a ring.
template <class T>
class StreamingSubsampler {
public:
    explicit StreamingSubsampler(const FrontendFields<Tensor<T>>* fe, int n_mels)
        : fe_(fe), n_mels_(n_mels), ring_({7, n_mels}) {}

    // Returns true and fills frame ([d_io], resized as needed) when a
    // subsampled frame is produced by this row.
    bool feed(const T* row, Tensor<T>& frame) {
        std::memcpy(ring_.row_ptr(rows_seen_ % 7), row, static_cast<std::size_t>(n_mels_) * sizeof(T));
        ++rows_seen_;
        if (rows_seen_ < 7 || (rows_seen_ - 7) % 4 != 0) return false;
        Tensor<T> window({1, 7, n_mels_});
        for (std::int64_t i = 0; i < 7; ++i) {
            const std::int64_t src = (rows_seen_ - 7 + i) % 7;
            std::memcpy(&window.at(0, i, 0), ring_.row_ptr(src), static_cast<std::size_t>(n_mels_) * sizeof(T));
        }
        const std::int64_t d_io = fe_->proj_w.shape[0];
        if (frame.shape != std::vector<std::int64_t>{d_io}) frame = Tensor<T>({d_io});
        detail::subsample_window(*fe_, window, frame.data.data());
        check_finite(frame, "subsample");
        return true;
    }

    // End-of-stream flush: if rows remain outside every emitted window,
    // complete one final window by replicating the last row, exactly as the
    // offline path pads its tail. Returns true and fills `frame` when that
    // trailing frame is produced; at most once per stream.
    bool finalize(Tensor<T>& frame) {
        if (finalized_) return false;
        finalized_ = true;
        if (rows_seen_ < 7) return false;
        const std::int64_t r = (rows_seen_ - 7) % 4;
        if (r == 0) return false;  // every row already covered
        Tensor<T> window({1, 7, n_mels_});
        const std::int64_t start = rows_seen_ - 3 - r;  // origin of the padded window
        for (std::int64_t i = 0; i < 7; ++i) {
            const std::int64_t src = std::min(start + i, rows_seen_ - 1) % 7;
            std::memcpy(&window.at(0, i, 0), ring_.row_ptr(src), static_cast<std::size_t>(n_mels_) * sizeof(T));
        }
        const std::int64_t d_io = fe_->proj_w.shape[0];
        if (frame.shape != std::vector<std::int64_t>{d_io}) frame = Tensor<T>({d_io});
        detail::subsample_window(*fe_, window, frame.data.data());
        check_finite(frame, "subsample");
        ++extra_frames_;
        return true;
    }

    std::int64_t rows_seen() const { return rows_seen_; }
    std::int64_t frames_emitted() const {
        return (rows_seen_ < 7 ? 0 : (rows_seen_ - 7) / 4 + 1) + extra_frames_;
    }

    // Ring contents plus the row counter; size is independent of history.
    void serialize(std::vector<unsigned char>& out) const {
        const auto* p = reinterpret_cast<const unsigned char*>(ring_.data.data());
        out.insert(out.end(), p, p + ring_.data.size() * sizeof(T));
        const auto* q = reinterpret_cast<const unsigned char*>(&rows_seen_);
        out.insert(out.end(), q, q + sizeof(rows_seen_));
    }

private:
    const FrontendFields<Tensor<T>>* fe_;
    std::int64_t n_mels_;
    Tensor<T> ring_;  // last 7 raw rows, indexed by row count mod 7
    std::int64_t rows_seen_ = 0;
    std::int64_t extra_frames_ = 0;  // 0 or 1: the finalize() flush frame
    bool finalized_ = false;
};

}  // namespace rwkvasr

#endif
