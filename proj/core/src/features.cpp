#include "rwkvasr/features.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "rwkvasr/errors.hpp"

namespace rwkvasr {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = x[i + k];
                const std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace

FeatureExtractor::FeatureExtractor(FeatureConfig cfg) : cfg_(cfg) {
    if (cfg_.sample_rate <= 0 || cfg_.n_mels <= 0) throw FormatError("features: bad config");
    if ((cfg_.nfft & (cfg_.nfft - 1)) != 0) throw FormatError("features: nfft must be a power of two");
    win_ = static_cast<int>(std::lround(cfg_.sample_rate * cfg_.win_ms / 1000.0));
    hop_ = static_cast<int>(std::lround(cfg_.sample_rate * cfg_.hop_ms / 1000.0));
    if (win_ > cfg_.nfft) throw FormatError("features: window longer than nfft");

    window_.resize(win_);
    for (int n = 0; n < win_; ++n)
        window_[n] = 0.5 * (1.0 - std::cos(2.0 * kPi * n / static_cast<double>(win_)));

    // Triangular filters with edges equally spaced on the mel scale.
    const int n_bins = cfg_.nfft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg_.fmin_hz);
    const double mel_hi = hz_to_mel(cfg_.fmax_hz);
    std::vector<double> edges(cfg_.n_mels + 2);
    for (int m = 0; m < cfg_.n_mels + 2; ++m)
        edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / static_cast<double>(cfg_.n_mels + 1));

    mel_filters_.assign(cfg_.n_mels, {});
    const double bin_hz = static_cast<double>(cfg_.sample_rate) / cfg_.nfft;
    for (int m = 0; m < cfg_.n_mels; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f >= left && f <= center && center > left) w = (f - left) / (center - left);
            else if (f > center && f <= right && right > center) w = (right - f) / (right - center);
            if (w > 0.0) mel_filters_[m].emplace_back(k, w);
        }
        if (mel_filters_[m].empty())
            throw FormatError("features: empty mel filter (check sample rate and band edges)");
    }
}

std::int64_t FeatureExtractor::num_frames(std::int64_t n_samples) const {
    if (n_samples < win_) return 0;
    return 1 + (n_samples - win_) / hop_;
}

void FeatureExtractor::compute_frame(const float* samples, float* out_mel) const {
    std::vector<std::complex<double>> buf(cfg_.nfft, {0.0, 0.0});
    for (int n = 0; n < win_; ++n) buf[n] = std::complex<double>(samples[n] * window_[n], 0.0);
    fft_radix2(buf);
    const int n_bins = cfg_.nfft / 2 + 1;
    std::vector<double> power(n_bins);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < cfg_.n_mels; ++m) {
        double acc = 0.0;
        for (const auto& [k, w] : mel_filters_[m]) acc += w * power[k];
        out_mel[m] = static_cast<float>(std::log(acc > cfg_.log_floor ? acc : cfg_.log_floor));
    }
}

Tensor<float> FeatureExtractor::extract(const std::vector<float>& samples) const {
    const std::int64_t t = num_frames(static_cast<std::int64_t>(samples.size()));
    Tensor<float> out({t, static_cast<std::int64_t>(cfg_.n_mels)});
    for (std::int64_t i = 0; i < t; ++i)
        compute_frame(samples.data() + i * hop_, out.row_ptr(i));
    return out;
}

Tensor<float> read_feat(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("feat: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("feat: missing header in " + path);
    long long t = 0, d = 0;
    if (std::sscanf(line.c_str(), "FEAT %lld %lld", &t, &d) != 2)
        throw FormatError("feat: bad header '" + line + "' in " + path);
    if (t < 0 || d <= 0) throw FormatError("feat: invalid dimensions in " + path);
    Tensor<float> out({t, d});
    static_assert(sizeof(float) == 4);
    in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.numel() * 4));
    if (!in) throw FormatError("feat: truncated payload in " + path);
    char extra;
    if (in.read(&extra, 1)) throw FormatError("feat: trailing bytes in " + path);
    return out;
}

void write_feat(const std::string& path, const Tensor<float>& feat) {
    if (feat.rank() != 2) throw ShapeError("feat: rank-2 tensor required, got " + feat.shape_str());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("feat: cannot write " + path);
    char header[64];
    std::snprintf(header, sizeof(header), "FEAT %lld %lld\n",
                  static_cast<long long>(feat.shape[0]), static_cast<long long>(feat.shape[1]));
    out.write(header, static_cast<std::streamsize>(std::strlen(header)));
    out.write(reinterpret_cast<const char*>(feat.data.data()), static_cast<std::streamsize>(feat.numel() * 4));
    if (!out) throw FormatError("feat: write failed for " + path);
}

}  // namespace rwkvasr
