// Audio I/O, log-mel features, and the 4x subsampler, including the
// offline/streaming agreement that the incremental decoder relies on.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rwkvasr/features.hpp"
#include "rwkvasr/graph.hpp"
#include "rwkvasr/model.hpp"
#include "rwkvasr/rng.hpp"
#include "rwkvasr/subsample.hpp"
#include "rwkvasr/taped.hpp"
#include "rwkvasr/wav.hpp"
#include "test_util.hpp"

using namespace rwkvasr;
using testutil::random_tensor;

namespace {

std::string tmp_path(const char* name) { return std::string("/tmp/rwkvasr_test_") + name; }

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Model<double> random_micro_model(std::uint64_t seed) {
    Rng rng(seed);
    return init_model<double>(testutil::micro_config(), rng);
}

}  // namespace

TEST_CASE("wav round trip quantizes to 16-bit accuracy") {
    WavData w;
    w.sample_rate = 16000;
    Rng rng(31);
    for (int i = 0; i < 1000; ++i)
        w.samples.push_back(static_cast<float>(rng.uniform(-0.99, 0.99)));
    const std::string path = tmp_path("rt.wav");
    write_wav(path, w);
    WavData r = read_wav(path);
    REQUIRE(r.samples.size() == w.samples.size());
    CHECK(r.sample_rate == 16000);
    for (std::size_t i = 0; i < r.samples.size(); ++i)
        CHECK(std::fabs(r.samples[i] - w.samples[i]) <= 1.0f / 32768.0f);
    // A second write of the re-read samples is a fixed point.
    const std::string path2 = tmp_path("rt2.wav");
    write_wav(path2, r);
    WavData r2 = read_wav(path2);
    CHECK(r2.samples == r.samples);
}

TEST_CASE("wav reader rejects malformed containers") {
    const std::string path = tmp_path("bad.wav");
    write_bytes(path, "RIFFxxxx");
    CHECK_THROWS_AS(read_wav(path), FormatError);
    write_bytes(path, "JUNKJUNKJUNKJUNK");
    CHECK_THROWS_AS(read_wav(path), FormatError);
    CHECK_THROWS_AS(read_wav(tmp_path("missing_file.wav")), Error);
}

TEST_CASE("frame count formula") {
    FeatureExtractor fe;  // 16 kHz, 25 ms window, 10 ms hop
    CHECK(fe.win_length() == 400);
    CHECK(fe.hop_length() == 160);
    CHECK(fe.num_frames(399) == 0);
    CHECK(fe.num_frames(400) == 1);
    CHECK(fe.num_frames(559) == 1);
    CHECK(fe.num_frames(560) == 2);
    CHECK(fe.num_frames(16000) == 1 + (16000 - 400) / 160);
}

TEST_CASE("silence maps every mel channel to the log floor") {
    FeatureConfig cfg;
    cfg.n_mels = 12;
    FeatureExtractor fe(cfg);
    const std::vector<float> silence(1200, 0.0f);
    Tensor<float> feats = fe.extract(silence);
    REQUIRE(feats.shape[0] == fe.num_frames(1200));
    const float floor_log = static_cast<float>(std::log(cfg.log_floor));
    for (float v : feats.data) CHECK(v == floor_log);
}

TEST_CASE("offline extraction equals per-frame computation") {
    FeatureConfig cfg;
    cfg.n_mels = 10;
    FeatureExtractor fe(cfg);
    Rng rng(32);
    std::vector<float> samples(1600);
    for (auto& s : samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
    Tensor<float> all = fe.extract(samples);
    std::vector<float> one(static_cast<std::size_t>(cfg.n_mels));
    for (std::int64_t t = 0; t < all.shape[0]; ++t) {
        fe.compute_frame(samples.data() + t * fe.hop_length(), one.data());
        for (int m = 0; m < cfg.n_mels; ++m) CHECK(all.row_ptr(t)[m] == one[static_cast<std::size_t>(m)]);
    }
}

TEST_CASE("mel channel ordering follows frequency") {
    FeatureConfig cfg;
    cfg.n_mels = 20;
    FeatureExtractor fe(cfg);
    auto peak_channel = [&](double hz) {
        std::vector<float> s(800);
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = static_cast<float>(0.5 * std::sin(2.0 * 3.14159265358979323846 * hz *
                                                     static_cast<double>(i) / 16000.0));
        Tensor<float> f = fe.extract(s);
        int best = 0;
        for (int m = 1; m < cfg.n_mels; ++m)
            if (f.row_ptr(1)[m] > f.row_ptr(1)[best]) best = m;
        return best;
    };
    const int low = peak_channel(300.0);
    const int high = peak_channel(3000.0);
    CHECK(low < high);
}

TEST_CASE("feat container round trip and strict validation") {
    Rng rng(33);
    Tensor<float> f({5, 3});
    for (auto& v : f.data) v = static_cast<float>(rng.normal(0, 1));
    const std::string path = tmp_path("x.feat");
    write_feat(path, f);
    Tensor<float> r = read_feat(path);
    CHECK(r.shape == f.shape);
    CHECK(r.data == f.data);  // bitwise

    write_bytes(path, "FEAT 2 2\n" + std::string(15, '\0'));  // one byte short
    CHECK_THROWS_AS(read_feat(path), FormatError);
    write_bytes(path, "FEAT 2 2\n" + std::string(17, '\0'));  // one byte extra
    CHECK_THROWS_AS(read_feat(path), FormatError);
    write_bytes(path, "FETA 2 2\n" + std::string(16, '\0'));
    CHECK_THROWS_AS(read_feat(path), FormatError);
    write_bytes(path, "FEAT 2 -2\n");
    CHECK_THROWS_AS(read_feat(path), FormatError);
    CHECK_THROWS_AS(read_feat(tmp_path("missing.feat")), FormatError);
}

TEST_CASE("subsampled length formula matches the two-conv composition") {
    // Independent count: frames start every 4 rows once 7 rows are buffered,
    // plus one padded tail window whenever rows remain uncovered.
    auto naive = [](std::int64_t t_raw) {
        if (t_raw < 7) return std::int64_t{0};
        std::int64_t n = 0, covered = 0;
        for (std::int64_t start = 0; start + 7 <= t_raw; start += 4) {
            ++n;
            covered = start + 7;
        }
        if (covered < t_raw) ++n;
        return n;
    };
    for (std::int64_t t = 0; t <= 4000; ++t) CHECK(subsampled_length(t) == naive(t));
    CHECK(subsampled_length(98) == 24);  // 23 full windows + padded tail
    CHECK(subsampled_length(11) == 2);   // rows 0..6 and 4..10: no tail needed
    CHECK(subsampled_length(8) == 2);    // row 7 only reachable via the pad
    CHECK(subsampled_length(7) == 1);
    CHECK(subsampled_length(6) == 0);
}

TEST_CASE("offline subsampling equals taped subsampling bitwise") {
    Model<double> m = random_micro_model(41);
    Rng rng(42);
    // 23 rows divide evenly into windows; 25 rows need the padded tail.
    for (const std::int64_t t_raw : {23LL, 25LL}) {
        const Tensor<double> feats = random_tensor(rng, {t_raw, m.config.n_mels});
        const Tensor<double> raw = subsample_raw(m.params.frontend, feats);

        Graph<double> g;
        ModelFields<Value> taped = lift_params(g, m.params);
        Value sub = subsample_taped(g, taped.frontend, lift_features(g, feats));

        REQUIRE(g.val(sub).shape == raw.shape);
        for (std::int64_t i = 0; i < raw.numel(); ++i) CHECK(g.val(sub)[i] == raw[i]);
    }
}

TEST_CASE("streaming subsampler equals offline subsampling bitwise") {
    Model<double> m = random_micro_model(43);
    Rng rng(44);
    for (const std::int64_t t_raw : {7LL, 8LL, 37LL, 98LL}) {
        const Tensor<double> feats = random_tensor(rng, {t_raw, m.config.n_mels});
        const Tensor<double> offline = subsample_raw(m.params.frontend, feats);
        REQUIRE(offline.shape[0] == subsampled_length(t_raw));

        StreamingSubsampler<double> sub(&m.params.frontend, m.config.n_mels);
        Tensor<double> frame;
        std::int64_t emitted = 0;
        for (std::int64_t r = 0; r < t_raw; ++r) {
            if (!sub.feed(feats.row_ptr(r), frame)) continue;
            REQUIRE(emitted < offline.shape[0]);
            for (std::int64_t j = 0; j < offline.shape[1]; ++j)
                CHECK(frame[j] == offline.row_ptr(emitted)[j]);
            ++emitted;
        }
        if (sub.finalize(frame)) {
            REQUIRE(emitted < offline.shape[0]);
            for (std::int64_t j = 0; j < offline.shape[1]; ++j)
                CHECK(frame[j] == offline.row_ptr(emitted)[j]);
            ++emitted;
        }
        CHECK(emitted == offline.shape[0]);
        CHECK(sub.frames_emitted() == emitted);
        CHECK_FALSE(sub.finalize(frame));  // the flush happens at most once
    }
}

TEST_CASE("streaming subsampler state snapshot has a fixed size") {
    Model<double> m = random_micro_model(45);
    StreamingSubsampler<double> sub(&m.params.frontend, m.config.n_mels);
    Rng rng(46);
    const Tensor<double> row = random_tensor(rng, {m.config.n_mels});
    Tensor<double> frame;
    std::vector<unsigned char> a, b;
    for (int i = 0; i < 9; ++i) sub.feed(row.data.data(), frame);
    sub.serialize(a);
    for (int i = 0; i < 400; ++i) sub.feed(row.data.data(), frame);
    sub.serialize(b);
    CHECK(a.size() == b.size());
}
