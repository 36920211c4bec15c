#ifndef RWKVASR_TRAIN_HPP
#define RWKVASR_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rwkvasr/cif.hpp"
#include "rwkvasr/decoder.hpp"
#include "rwkvasr/synth.hpp"
#include "rwkvasr/taped.hpp"

// Toy-task training loop: synthesize a corpus, fit the full model with either
// the full-lattice loss or the band-pruned loss, and report per-epoch nll and
// held-out greedy token accuracy. Deterministic given the seed; the run-level
// generator is consumed in a fixed order (corpus, init, then per-epoch
// shuffles and dropout masks).

namespace rwkvasr {

// Levenshtein edit distance between token sequences.
inline std::int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::int64_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<std::int64_t>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const std::int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// ---------------------------------------------------------------------------
// Optimizer: per-parameter adaptive steps from first/second moment estimates
// ---------------------------------------------------------------------------

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m, v;  // aligned with param_list order
    std::int64_t steps = 0;
};

// One update over every parameter with a non-empty gradient. The optional
// filter restricts which parameters move (used to pre-train the alignment
// head on its own); moments still advance only for updated parameters.
template <class T>
void adam_step(ModelFields<Tensor<T>>& params, const ModelFields<Tensor<T>>& grads, AdamState<T>& opt,
               T lr, const std::function<bool(const std::string&)>& update_filter = {}) {
    auto ps = param_list(params);
    auto gs = param_list(grads);
    if (ps.size() != gs.size()) throw ShapeError("adam: parameter/gradient count mismatch");
    if (opt.m.empty()) {
        opt.m.resize(ps.size());
        opt.v.resize(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            opt.m[i] = Tensor<T>(ps[i].second->shape);
            opt.v[i] = Tensor<T>(ps[i].second->shape);
        }
    }
    ++opt.steps;
    const T b1 = static_cast<T>(kAdamBeta1), b2 = static_cast<T>(kAdamBeta2);
    const T c1 = T(1) - static_cast<T>(std::pow(kAdamBeta1, static_cast<double>(opt.steps)));
    const T c2 = T(1) - static_cast<T>(std::pow(kAdamBeta2, static_cast<double>(opt.steps)));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Tensor<T>& grad = *gs[i].second;
        if (grad.numel() == 0) continue;  // parameter untouched by this loss
        if (update_filter && !update_filter(ps[i].first)) continue;
        Tensor<T>& p = *ps[i].second;
        if (grad.shape != p.shape) throw ShapeError("adam: gradient shape mismatch for " + ps[i].first);
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            opt.m[i][j] = b1 * opt.m[i][j] + (T(1) - b1) * grad[j];
            opt.v[i][j] = b2 * opt.v[i][j] + (T(1) - b2) * grad[j] * grad[j];
            const T mhat = opt.m[i][j] / c1;
            const T vhat = opt.v[i][j] / c2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + static_cast<T>(kAdamEps));
        }
    }
}

// ---------------------------------------------------------------------------
// Per-utterance taped loss
// ---------------------------------------------------------------------------

enum class LossKind { Full, Bat };

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "full") return LossKind::Full;
    if (s == "bat") return LossKind::Bat;
    throw FormatError("loss kind must be 'full' or 'bat', got '" + s + "'");
}

template <class T>
struct UtteranceLoss {
    Value total;                       // scalar to differentiate
    T nll = 0;                         // transducer part, for reporting
    std::int64_t evaluated_cells = 0;  // joint evaluations in the lattice
};

// Forward pass for one utterance on a fresh tape. For the pruned loss the
// alignment boundaries come from the current encoder outputs (values only:
// boundary decisions are discrete), and the quantity term keeps the
// alignment head trained since no lattice gradient reaches it.
template <class T>
UtteranceLoss<T> utterance_loss_taped(Graph<T>& g, const Model<T>& m, const ModelFields<Value>& taped,
                                      const SynthUtterance<T>& utt, LossKind kind, int band_width,
                                      const TapedEncodeOptions& opts) {
    Value sub = subsample_taped(g, taped.frontend, lift_features(g, utt.feats));
    Value h = encode_taped(g, taped, m.config, sub, opts);

    UtteranceLoss<T> out;
    if (kind == LossKind::Full) {
        TapedLoss<T> loss = rnnt_loss_taped(g, taped.pred, taped.joint, h, utt.labels, m.config.vocab);
        out.total = loss.nll;
        out.nll = g.val(loss.nll)[0];
        out.evaluated_cells = loss.evaluated_cells;
        return out;
    }
    const std::int64_t ulen = static_cast<std::int64_t>(utt.labels.size());
    CifAlignment<T> align = cif_align(g.val(h), ulen, m.params.cif);
    PruneBand band = build_band(align.boundaries, g.val(h).shape[0], ulen, band_width);
    TapedLoss<T> loss = bat_loss_taped(g, taped.pred, taped.joint, h, utt.labels, m.config.vocab, band);
    Value qty = cif_quantity_taped(g, taped.cif, h, ulen);
    out.total = add(g, loss.nll, qty);
    out.nll = g.val(loss.nll)[0];
    out.evaluated_cells = loss.evaluated_cells;
    return out;
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

struct EpochStats {
    double mean_nll = 0.0;          // transducer nll averaged over utterances
    double holdout_accuracy = 0.0;  // 1 - corpus token error rate
    std::int64_t joint_cells = 0;   // lattice joint evaluations this epoch
    std::int64_t optimizer_steps = 0;
};

template <class T>
struct TrainResult {
    Model<T> model;
    std::vector<EpochStats> epochs;
    std::int64_t total_joint_cells = 0;
    std::int64_t total_steps = 0;
};

// Greedy accuracy over a holdout slice: 1 - (total edits / total ref length).
template <class T>
double holdout_accuracy(const Model<T>& m, const std::vector<SynthUtterance<T>>& utts,
                        std::size_t begin, std::size_t end) {
    std::int64_t edits = 0, ref_len = 0;
    for (std::size_t i = begin; i < end; ++i) {
        const Tensor<T> sub = subsample_raw(m.params.frontend, utts[i].feats);
        const Tensor<T> h = encode_recurrent(m, sub);
        const std::vector<int> hyp = greedy_decode(m, h);
        edits += edit_distance(hyp, utts[i].labels);
        ref_len += static_cast<std::int64_t>(utts[i].labels.size());
    }
    if (ref_len == 0) return 1.0;
    const double ter = static_cast<double>(edits) / static_cast<double>(ref_len);
    return std::max(0.0, 1.0 - ter);
}

// Mean |sum(alpha) - U| over a batch, updating only the alignment head.
// Runs before the main pruned-loss epochs so early bands are usable.
template <class T>
void cif_pretrain_epoch(Model<T>& m, const std::vector<SynthUtterance<T>>& train_utts,
                        const std::vector<std::size_t>& order, int batch_size, AdamState<T>& opt, T lr) {
    const auto only_cif = [](const std::string& name) { return name.rfind("cif.", 0) == 0; };
    ModelFields<Tensor<T>> acc;
    acc.blocks.resize(m.params.blocks.size());
    std::size_t in_batch = 0;
    TapedEncodeOptions opts;  // dropout off: calibrate on deterministic encoder outputs
    for (std::size_t idx : order) {
        const SynthUtterance<T>& utt = train_utts[idx];
        Graph<T> g;
        ModelFields<Value> taped = lift_params(g, m.params);
        Value h = encode_taped(g, taped, m.config,
                               subsample_taped(g, taped.frontend, lift_features(g, utt.feats)), opts);
        Value qty = cif_quantity_taped(g, taped.cif, h, static_cast<std::int64_t>(utt.labels.size()));
        g.backward(qty);
        accumulate_grads(acc, g, taped, T(1));
        if (++in_batch == static_cast<std::size_t>(batch_size)) {
            for (auto& [name, grad] : param_list(acc))
                if (grad->numel() > 0)
                    for (auto& v : grad->data) v /= static_cast<T>(in_batch);
            adam_step(m.params, acc, opt, lr, only_cif);
            acc = ModelFields<Tensor<T>>{};
            acc.blocks.resize(m.params.blocks.size());
            in_batch = 0;
        }
    }
    if (in_batch > 0) {
        for (auto& [name, grad] : param_list(acc))
            if (grad->numel() > 0)
                for (auto& v : grad->data) v /= static_cast<T>(in_batch);
        adam_step(m.params, acc, opt, lr, only_cif);
    }
}

// Full training run. Generator order: corpus, init, then per-epoch shuffles
// interleaved with dropout masks. Throws on non-finite loss with the step.
template <class T>
TrainResult<T> train(const ModelConfig& mc, const TrainConfig& tc, std::uint64_t seed) {
    mc.validate();
    tc.validate();
    const LossKind kind = parse_loss_kind(tc.loss);

    Rng rng(seed);
    const std::uint64_t corpus_seed = rng.engine()();
    SynthDataset<T> ds = synth_dataset<T>(corpus_seed, tc.utterances, mc.vocab, tc.label_min,
                                          tc.label_max, mc.n_mels, tc.noise);

    TrainResult<T> result;
    result.model = init_model<T>(mc, rng);
    Model<T>& m = result.model;

    const std::size_t holdout = std::min<std::size_t>(static_cast<std::size_t>(tc.holdout),
                                                      ds.utterances.size());
    const std::size_t n_train = ds.utterances.size() - holdout;
    if (n_train == 0) throw Error("train: no training utterances left after holdout split");

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    AdamState<T> opt;
    if (kind == LossKind::Bat) {
        for (int e = 0; e < tc.cif_pretrain_epochs; ++e) {
            std::shuffle(order.begin(), order.end(), rng.engine());
            cif_pretrain_epoch(m, ds.utterances, order, tc.batch, opt, static_cast<T>(tc.lr));
        }
    }

    std::int64_t global_step = 0;
    const bool dropout_on = mc.dropout > 0.0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        EpochStats stats;
        double nll_sum = 0.0;

        // Half-cosine decay from the configured rate to 5% of it across the
        // epoch budget. Epoch 0 always runs at the full rate; the taper keeps
        // the final parameters from bouncing in the optimizer's stationary
        // noise, so the last epoch's holdout accuracy reflects the optimum
        // rather than a lucky or unlucky step.
        const double progress =
            static_cast<double>(epoch) / static_cast<double>(std::max(1, tc.epochs - 1));
        const T epoch_lr = static_cast<T>(
            tc.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846))));

        ModelFields<Tensor<T>> acc;
        acc.blocks.resize(m.params.blocks.size());
        std::size_t in_batch = 0;
        auto flush_batch = [&]() {
            if (in_batch == 0) return;
            for (auto& [name, grad] : param_list(acc))
                if (grad->numel() > 0)
                    for (auto& v : grad->data) v /= static_cast<T>(in_batch);
            adam_step(m.params, acc, opt, epoch_lr);
            clamp_mix_factors(m.params);
            acc = ModelFields<Tensor<T>>{};
            acc.blocks.resize(m.params.blocks.size());
            in_batch = 0;
            ++stats.optimizer_steps;
            ++global_step;
        };

        for (std::size_t idx : order) {
            Graph<T> g;
            ModelFields<Value> taped = lift_params(g, m.params);
            TapedEncodeOptions opts;
            opts.dropout_active = dropout_on;
            opts.dropout_rate = mc.dropout;
            opts.rng = &rng;
            const SynthUtterance<T>* utt = &ds.utterances[idx];
            SynthUtterance<T> jittered;
            if (tc.aug_noise > 0.0) {
                // Fresh input noise every visit: the fixed corpus noise can be
                // memorized across epochs, the jitter cannot, so the fit is
                // forced onto the label-bearing structure of the features.
                jittered = *utt;
                for (auto& v : jittered.feats.data)
                    v += static_cast<T>(rng.normal(0.0, tc.aug_noise));
                utt = &jittered;
            }
            UtteranceLoss<T> ul;
            try {
                ul = utterance_loss_taped(g, m, taped, *utt, kind, tc.band_width,
                                          opts);
            } catch (const NumericError& e) {
                // A non-finite intermediate is caught at the op that produced it,
                // before the loss value exists; report it as divergence at this step.
                throw DivergenceError(std::string("training diverged: ") + e.what(), global_step);
            }
            if (!std::isfinite(static_cast<double>(ul.nll)))
                throw DivergenceError("training loss became non-finite", global_step);
            g.backward(ul.total);
            accumulate_grads(acc, g, taped, T(1));
            nll_sum += static_cast<double>(ul.nll);
            stats.joint_cells += ul.evaluated_cells;
            if (++in_batch == static_cast<std::size_t>(tc.batch)) flush_batch();
        }
        flush_batch();

        stats.mean_nll = nll_sum / static_cast<double>(n_train);
        stats.holdout_accuracy = holdout > 0
                                     ? holdout_accuracy(m, ds.utterances, n_train, ds.utterances.size())
                                     : 0.0;
        result.total_joint_cells += stats.joint_cells;
        result.total_steps += stats.optimizer_steps;
        result.epochs.push_back(stats);
        if (holdout > 0 && tc.early_stop_accuracy > 0.0 &&
            stats.holdout_accuracy >= tc.early_stop_accuracy)
            break;
    }
    return result;
}

}  // namespace rwkvasr

#endif
