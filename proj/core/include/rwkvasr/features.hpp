#ifndef RWKVASR_FEATURES_HPP
#define RWKVASR_FEATURES_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rwkvasr/tensor.hpp"

// Log-mel filterbank frontend: 25 ms periodic-Hann windows every 10 ms,
// radix-2 power spectrum, triangular mel filters on 0..8 kHz, natural log
// with a fixed floor. Frame computation is a single shared routine, so
// offline extraction and incremental (streaming) extraction agree bitwise.

namespace rwkvasr {

struct FeatureConfig {
    int sample_rate = 16000;
    int n_mels = 80;
    double win_ms = 25.0;
    double hop_ms = 10.0;
    int nfft = 512;
    double fmin_hz = 0.0;
    double fmax_hz = 8000.0;
    double log_floor = 1e-10;
};

class FeatureExtractor {
public:
    explicit FeatureExtractor(FeatureConfig cfg = {});

    int dim() const { return cfg_.n_mels; }
    int win_length() const { return win_; }
    int hop_length() const { return hop_; }

    // Frames that fit in n samples: 1 + floor((n - win) / hop), or 0 if short.
    std::int64_t num_frames(std::int64_t n_samples) const;

    // One frame from exactly win_length() samples.
    void compute_frame(const float* samples, float* out_mel) const;

    // Whole utterance, [T x n_mels].
    Tensor<float> extract(const std::vector<float>& samples) const;

private:
    FeatureConfig cfg_;
    int win_ = 0;
    int hop_ = 0;
    std::vector<double> window_;                                    // periodic Hann
    std::vector<std::vector<std::pair<int, double>>> mel_filters_;  // (fft bin, weight)
};

// FEAT container: header line "FEAT <T> <D>\n" followed by T*D little-endian
// float32 values in row-major order.
Tensor<float> read_feat(const std::string& path);
void write_feat(const std::string& path, const Tensor<float>& feat);

}  // namespace rwkvasr

#endif
