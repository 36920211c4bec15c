// Microbenchmarks for the hot paths: the per-frame attention-state update,
// one recurrent encoder step, the two transducer losses, and a full
// incremental decode step including the frontend.
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "rwkvasr/decoder.hpp"
#include "rwkvasr/synth.hpp"
#include "rwkvasr/taped.hpp"
#include "rwkvasr/train.hpp"

namespace {

using namespace rwkvasr;

ModelConfig bench_config() {
    ModelConfig cfg;
    cfg.d_io = 64;
    cfg.d_att = 64;
    cfg.d_linear = 128;
    cfg.blocks = 4;
    cfg.dropout = 0.0;
    cfg.n_mels = 20;
    cfg.conv_channels = 8;
    cfg.vocab = 16;
    cfg.d_pred = 64;
    cfg.d_joint = 64;
    return cfg;
}

template <class T>
Tensor<T> random_tensor(Rng& rng, std::vector<std::int64_t> shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, 1.0));
    return t;
}

void bm_wkv_step(benchmark::State& state) {
    const std::int64_t d = state.range(0);
    Rng rng(1);
    const Tensor<float> k = random_tensor<float>(rng, {d});
    const Tensor<float> v = random_tensor<float>(rng, {d});
    Tensor<float> w({d}), u({d});
    for (auto& x : w.data) x = std::exp(static_cast<float>(rng.normal(0.0, 0.5)));
    for (auto& x : u.data) x = static_cast<float>(rng.normal(0.0, 0.5));
    WkvState<float> st = WkvState<float>::fresh(d);
    Tensor<float> out({d});
    for (auto _ : state) {
        wkv_step(st, k.data.data(), v.data.data(), w.data.data(), u.data.data(), d,
                 out.data.data());
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(state.iterations() * d);
}

void bm_encoder_step(benchmark::State& state) {
    const ModelConfig cfg = bench_config();
    Rng rng(2);
    const Model<float> m = init_model<float>(cfg, rng);
    const Tensor<float> x = random_tensor<float>(rng, {cfg.d_io});
    std::vector<float> h(static_cast<std::size_t>(cfg.d_io));
    EncoderState<float> enc = EncoderState<float>::fresh(cfg);
    for (auto _ : state) {
        encode_step(m, x.data.data(), h.data(), enc);
        benchmark::DoNotOptimize(h.data());
    }
}

template <LossKind kKind>
void bm_transducer_loss(benchmark::State& state) {
    const std::int64_t tlen = 40, ulen = 8;
    ModelConfig cfg = bench_config();
    Rng rng(3);
    Model<double> m = init_model<double>(cfg, rng);
    const Tensor<double> h = random_tensor<double>(rng, {tlen, cfg.d_io});
    std::vector<int> y(static_cast<std::size_t>(ulen));
    for (auto& t : y) t = static_cast<int>(rng.uniform_int(1, cfg.vocab));
    std::vector<std::int64_t> boundaries(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        boundaries[i] = static_cast<std::int64_t>((i + 1) * tlen / (y.size() + 1));
    const PruneBand band = build_band(boundaries, tlen, ulen, 5);

    std::int64_t cells = 0;
    for (auto _ : state) {
        Graph<double> g;
        ModelFields<Value> taped = lift_params(g, m.params);
        const Value hv = g.leaf(h);
        TapedLoss<double> loss =
            kKind == LossKind::Full
                ? rnnt_loss_taped(g, taped.pred, taped.joint, hv, y, cfg.vocab)
                : bat_loss_taped(g, taped.pred, taped.joint, hv, y, cfg.vocab, band);
        g.backward(loss.nll);
        cells = loss.evaluated_cells;
        benchmark::DoNotOptimize(g.grad(hv).data.data());
    }
    state.counters["lattice_cells"] = static_cast<double>(cells);
}

void bm_decode_feed_row(benchmark::State& state) {
    const ModelConfig cfg = bench_config();
    Rng rng(4);
    const Model<float> m = init_model<float>(cfg, rng);
    const Tensor<float> feats = random_tensor<float>(rng, {4096, cfg.n_mels});
    DecodeSession<float> session(m);
    std::vector<int> out;
    std::int64_t t = 0;
    for (auto _ : state) {
        session.feed_row(feats.row_ptr(t), out);
        t = (t + 1) % feats.shape[0];
        benchmark::DoNotOptimize(session.frames_decoded());
        if (out.size() > 4096) out.clear();
    }
}

BENCHMARK(bm_wkv_step)->Arg(64)->Arg(256);
BENCHMARK(bm_encoder_step);
BENCHMARK_TEMPLATE(bm_transducer_loss, LossKind::Full);
BENCHMARK_TEMPLATE(bm_transducer_loss, LossKind::Bat);
BENCHMARK(bm_decode_feed_row);

}  // namespace

BENCHMARK_MAIN();
