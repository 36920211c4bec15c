#ifndef RWKVASR_SYNTH_HPP
#define RWKVASR_SYNTH_HPP

#include <vector>

#include "rwkvasr/errors.hpp"
#include "rwkvasr/rng.hpp"
#include "rwkvasr/tensor.hpp"

// Synthetic corpus: every label owns a fixed N(0,1) prototype feature row;
// an utterance concatenates each label's prototype for 4-8 frames and adds
// Gaussian noise. Easy enough to learn on a desk, hard enough that the
// alignment between frames and labels is genuinely variable.

namespace rwkvasr {

inline constexpr int kSynthRepeatMin = 4;
inline constexpr int kSynthRepeatMax = 8;

template <class T>
struct SynthUtterance {
    Tensor<T> feats;          // [T_raw x n_mels] raw feature rows
    std::vector<int> labels;  // values in 1..V
};

template <class T>
struct SynthDataset {
    Tensor<T> prototypes;  // [V x n_mels], row v-1 belongs to label v
    std::vector<SynthUtterance<T>> utterances;
};

// Draw order is part of the reproducibility contract: prototypes row-major,
// then per utterance: length, then per position (token, repeat count), then
// noise element-by-element in frame order.
template <class T>
SynthDataset<T> synth_dataset(std::uint64_t seed, std::int64_t num_utts, int vocab,
                              int len_min, int len_max, int n_mels, double noise_sigma) {
    if (vocab < 1 || vocab > 64) throw Error("synth: vocab must be in 1..64");
    if (len_min < 1 || len_max < len_min) throw Error("synth: bad label-length range");
    if (n_mels < 1) throw Error("synth: n_mels must be positive");
    if (num_utts < 1) throw Error("synth: need at least one utterance");
    if (noise_sigma < 0.0) throw Error("synth: noise must be non-negative");

    Rng rng(seed);
    SynthDataset<T> ds;
    ds.prototypes = Tensor<T>({vocab, n_mels});
    for (auto& v : ds.prototypes.data) v = static_cast<T>(rng.normal(0.0, 1.0));

    ds.utterances.resize(static_cast<std::size_t>(num_utts));
    for (auto& utt : ds.utterances) {
        const std::int64_t len = rng.uniform_int(len_min, len_max);
        utt.labels.resize(static_cast<std::size_t>(len));
        std::vector<int> repeats(static_cast<std::size_t>(len));
        std::int64_t t_raw = 0;
        for (std::int64_t u = 0; u < len; ++u) {
            utt.labels[u] = static_cast<int>(rng.uniform_int(1, vocab));
            repeats[u] = static_cast<int>(rng.uniform_int(kSynthRepeatMin, kSynthRepeatMax));
            t_raw += repeats[u];
        }
        utt.feats = Tensor<T>({t_raw, n_mels});
        std::int64_t t = 0;
        for (std::int64_t u = 0; u < len; ++u) {
            const T* proto = ds.prototypes.row_ptr(utt.labels[u] - 1);
            for (int r = 0; r < repeats[u]; ++r, ++t) {
                T* dst = utt.feats.row_ptr(t);
                for (int j = 0; j < n_mels; ++j)
                    dst[j] = proto[j] + static_cast<T>(noise_sigma * rng.normal(0.0, 1.0));
            }
        }
    }
    return ds;
}

}  // namespace rwkvasr

#endif
