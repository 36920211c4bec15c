#ifndef RWKVASR_METRICS_HPP
#define RWKVASR_METRICS_HPP

#include <cstdint>
#include <string>

#include "rwkvasr/errors.hpp"

// Streaming cost model. Latency is the future context a frame must wait for
// before its output exists: a chunked encoder buffers a whole chunk, a
// recurrent encoder emits as each frame arrives. Left context is how many
// past frames must stay resident to produce the current output.

namespace rwkvasr {

enum class EncoderKind { Recurrent, Chunked, FullHistory };

struct StreamingMetrics {
    std::int64_t latency_ms = 0;
    std::int64_t left_context_frames = 0;
    std::int64_t state_bytes = 0;
};

// Chunked: chunk duration = chunk frames x subsample factor x ms per raw
// frame. Recurrent and full-history-causal encoders emit immediately: 0.
inline std::int64_t compute_latency_ms(EncoderKind kind, std::int64_t chunk_size_frames,
                                       std::int64_t subsample_factor, std::int64_t frame_ms) {
    if (kind != EncoderKind::Chunked) return 0;
    if (chunk_size_frames <= 0 || subsample_factor <= 0 || frame_ms <= 0)
        throw Error("latency: chunked encoders need positive chunk/subsample/frame arguments");
    return chunk_size_frames * subsample_factor * frame_ms;
}

struct LeftContext {
    bool all_history = false;   // unbounded: the whole past is required
    std::int64_t frames = 0;    // bounded count when all_history is false

    std::string str() const { return all_history ? "all history" : std::to_string(frames); }
};

// Recurrent: the state folds the entire past, so one slot suffices.
inline LeftContext report_left_context(EncoderKind kind, std::int64_t chunk_size_frames = 0) {
    switch (kind) {
        case EncoderKind::Recurrent: return {false, 1};
        case EncoderKind::Chunked:
            if (chunk_size_frames <= 0) throw Error("left context: chunked encoders need a positive chunk size");
            return {false, chunk_size_frames};
        case EncoderKind::FullHistory: return {true, 0};
    }
    throw Error("left context: unknown encoder kind");
}

}  // namespace rwkvasr

#endif
