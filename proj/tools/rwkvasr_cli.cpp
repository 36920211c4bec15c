// Command-line front door: train on the synthetic task, decode or stream a
// wav/FEAT file with a trained checkpoint, run the built-in verification
// suites, or benchmark the streaming step.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rwkvasr/checkpoint.hpp"
#include "rwkvasr/decoder.hpp"
#include "rwkvasr/features.hpp"
#include "rwkvasr/metrics.hpp"
#include "rwkvasr/selfcheck.hpp"
#include "rwkvasr/train.hpp"
#include "rwkvasr/wav.hpp"

namespace {

using namespace rwkvasr;

// Features from a wav or FEAT file, validated against the model's mel count.
template <class T>
Tensor<T> load_input_features(const std::string& path, const ModelConfig& cfg) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw FormatError("input: cannot open " + path);
    char head[4] = {0, 0, 0, 0};
    probe.read(head, 4);
    probe.close();

    Tensor<float> feats;
    if (std::string(head, 4) == "RIFF") {
        FeatureConfig fc;
        fc.n_mels = cfg.n_mels;
        const FeatureExtractor fe(fc);
        feats = fe.extract(read_wav(path).samples);
    } else if (std::string(head, 4) == "FEAT") {
        feats = read_feat(path);
    } else {
        throw FormatError("input: " + path + " is neither a RIFF wav nor a FEAT file");
    }
    if (feats.shape[1] != cfg.n_mels)
        throw ShapeError("input: features have " + std::to_string(feats.shape[1]) +
                         " channels but the model expects " + std::to_string(cfg.n_mels));
    return cast_tensor<T>(feats);
}

template <class T>
std::vector<int> decode_parallel(const Model<T>& m, const Tensor<T>& feats) {
    Graph<T> g;
    ModelFields<Value> taped = lift_params(g, m.params);
    Value h = encode_taped(g, taped, m.config, subsample_taped(g, taped.frontend, lift_features(g, feats)));
    return greedy_decode(m, g.val(h));
}

template <class T>
std::vector<int> decode_streaming(const Model<T>& m, const Tensor<T>& feats, bool emit_lines) {
    DecodeSession<T> session(m);
    std::vector<int> tokens;
    std::size_t printed = 0;
    const auto print_new = [&] {
        for (; printed < tokens.size(); ++printed) {
            std::cout << tokens[printed] << '\n';
            std::cout.flush();
        }
    };
    for (std::int64_t t = 0; t < feats.shape[0]; ++t) {
        session.feed_row(feats.row_ptr(t), tokens);
        if (emit_lines) print_new();
    }
    session.close(tokens);  // flush the tail window; may emit trailing labels
    if (emit_lines) print_new();
    return tokens;
}

void print_tokens(const std::vector<int>& tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) std::cout << ' ';
        std::cout << tokens[i];
    }
    std::cout << '\n';
}

template <class T>
int run_decode(const std::string& ckpt, const std::string& input, const std::string& mode) {
    const Model<T> m = load_checkpoint<T>(ckpt);
    const Tensor<T> feats = load_input_features<T>(input, m.config);
    const std::vector<int> tokens =
        mode == "parallel" ? decode_parallel(m, feats) : decode_streaming(m, feats, false);
    print_tokens(tokens);
    return 0;
}

template <class T>
int run_stream(const std::string& ckpt, const std::string& input) {
    const Model<T> m = load_checkpoint<T>(ckpt);
    const Tensor<T> feats = load_input_features<T>(input, m.config);
    decode_streaming(m, feats, true);
    return 0;
}

template <class T>
int run_bench(const std::string& ckpt, std::int64_t frames) {
    const Model<T> m = load_checkpoint<T>(ckpt);
    DecodeSession<T> session(m);
    Rng rng(1234);
    Tensor<T> row({m.config.n_mels});
    std::vector<int> tokens;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t i = 0; i < frames; ++i) {
        for (auto& v : row.data) v = static_cast<T>(rng.normal(0.0, 1.0));
        session.feed_row(row.data.data(), tokens);
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double us =
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count() / 1000.0 /
        static_cast<double>(frames > 0 ? frames : 1);

    const LeftContext lc = report_left_context(EncoderKind::Recurrent);
    std::printf("state_bytes %zu\n", session.serialize().size());
    std::printf("per_frame_step_us %.3f\n", us);
    std::printf("latency_ms %lld\n",
                static_cast<long long>(compute_latency_ms(EncoderKind::Recurrent, 0, 0, 0)));
    std::printf("left_context %s\n", lc.str().c_str());
    return 0;
}

int run_train(const std::string& config_path, const std::string& out_path, std::uint64_t seed,
              const std::string& loss_override, int epochs_override) {
    FullConfig fc = parse_config_file(config_path);
    if (!loss_override.empty()) fc.train.loss = loss_override;
    if (epochs_override >= 0) fc.train.epochs = epochs_override;
    fc.model.validate();
    fc.train.validate();

    TrainResult<float> result = train<float>(fc.model, fc.train, seed);
    for (std::size_t e = 0; e < result.epochs.size(); ++e) {
        const EpochStats& s = result.epochs[e];
        std::printf("epoch %zu nll %.6f holdout_accuracy %.4f joint_cells %lld steps %lld\n", e + 1,
                    s.mean_nll, s.holdout_accuracy, static_cast<long long>(s.joint_cells),
                    static_cast<long long>(s.optimizer_steps));
        std::fflush(stdout);
    }
    save_checkpoint(result.model, out_path);
    std::printf("saved %s\n", out_path.c_str());
    return 0;
}

int run_verify(const std::string& suite, std::uint64_t seed) {
    const std::vector<CheckResult> results = run_verify_suite(suite, seed);
    for (const auto& r : results) {
        std::printf("%s %s (%s)\n", r.pass ? "ok  " : "FAIL", r.name.c_str(), r.detail.c_str());
        std::fflush(stdout);
    }
    return all_passed(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming transducer engine"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train on the synthetic task");
    std::string config_path, out_path, loss_override;
    std::uint64_t train_seed = 0;
    int epochs_override = -1;
    train_cmd->add_option("--config", config_path, "key=value config file")->required();
    train_cmd->add_option("--out", out_path, "output checkpoint path")->required();
    train_cmd->add_option("--seed", train_seed, "run seed")->required();
    train_cmd->add_option("--loss", loss_override, "loss kind")->check(CLI::IsMember({"full", "bat"}));
    train_cmd->add_option("--epochs", epochs_override, "override epoch count");

    auto* decode_cmd = app.add_subcommand("decode", "decode one utterance");
    std::string ckpt, input, mode;
    decode_cmd->add_option("--ckpt", ckpt, "checkpoint path")->required();
    decode_cmd->add_option("--input", input, "wav or FEAT file")->required();
    decode_cmd->add_option("--mode", mode, "evaluation mode")
        ->required()
        ->check(CLI::IsMember({"parallel", "stream"}));

    auto* stream_cmd = app.add_subcommand("stream", "decode incrementally, one token per line");
    std::string s_ckpt, s_input;
    stream_cmd->add_option("--ckpt", s_ckpt, "checkpoint path")->required();
    stream_cmd->add_option("--input", s_input, "wav or FEAT file")->required();

    auto* verify_cmd = app.add_subcommand("verify", "run built-in property checks");
    std::string suite;
    std::uint64_t verify_seed = 0;
    verify_cmd->add_option("--suite", suite, "equivalence|gradients|oracle|all")->required();
    verify_cmd->add_option("--seed", verify_seed, "run seed")->required();

    auto* bench_cmd = app.add_subcommand("bench", "measure the streaming step");
    std::string b_ckpt;
    std::int64_t b_frames = 0;
    bench_cmd->add_option("--ckpt", b_ckpt, "checkpoint path")->required();
    bench_cmd->add_option("--frames", b_frames, "number of feature rows to feed")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return run_train(config_path, out_path, train_seed, loss_override, epochs_override);
        if (verify_cmd->parsed()) return run_verify(suite, verify_seed);
        if (decode_cmd->parsed())
            return checkpoint_dtype(ckpt) == "f64" ? run_decode<double>(ckpt, input, mode)
                                                   : run_decode<float>(ckpt, input, mode);
        if (stream_cmd->parsed())
            return checkpoint_dtype(s_ckpt) == "f64" ? run_stream<double>(s_ckpt, s_input)
                                                     : run_stream<float>(s_ckpt, s_input);
        if (bench_cmd->parsed())
            return checkpoint_dtype(b_ckpt) == "f64" ? run_bench<double>(b_ckpt, b_frames)
                                                     : run_bench<float>(b_ckpt, b_frames);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
