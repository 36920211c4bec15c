#ifndef RWKVASR_MODEL_HPP
#define RWKVASR_MODEL_HPP

#include <string>
#include <vector>

#include "rwkvasr/config.hpp"
#include "rwkvasr/rng.hpp"
#include "rwkvasr/tensor.hpp"

// Parameter containers, generic over the field holder H. H = Tensor<T> gives
// the stored model; H = Value gives the taped mirror used during training.
// Every consumer of "all parameters in order" (checkpoint I/O, the optimizer,
// gradient collection, initialization) walks the same visit() order, which is
// therefore the single source of truth for parameter enumeration.

namespace rwkvasr {

template <class H>
struct TimeMixFields {
    H W_r, W_k, W_v, W_o;  // projections
    H mu_r, mu_k, mu_v;    // token-shift mix factors, kept in [0,1]
    H w_raw;               // decay pre-parameter; effective decay w = exp(w_raw) > 0
    H u;                   // current-frame bonus

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".W_r", s.W_r);
        f(p + ".W_k", s.W_k);
        f(p + ".W_v", s.W_v);
        f(p + ".W_o", s.W_o);
        f(p + ".mu_r", s.mu_r);
        f(p + ".mu_k", s.mu_k);
        f(p + ".mu_v", s.mu_v);
        f(p + ".w_raw", s.w_raw);
        f(p + ".u", s.u);
    }
};

template <class H>
struct ChannelMixFields {
    H W_r;  // [d_io x d_io] receptance projection (gates the d_io-wide output)
    H W_k;  // [d_linear x d_io]
    H W_v;  // [d_io x d_linear]
    H mu_r, mu_k;

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".W_r", s.W_r);
        f(p + ".W_k", s.W_k);
        f(p + ".W_v", s.W_v);
        f(p + ".mu_r", s.mu_r);
        f(p + ".mu_k", s.mu_k);
    }
};

template <class H>
struct BlockFields {
    H ln_time_gain, ln_time_bias;  // layer norm entering time mixing
    H ln_chan_gain, ln_chan_bias;  // layer norm entering channel mixing
    TimeMixFields<H> time;
    ChannelMixFields<H> chan;

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".ln_time.gain", s.ln_time_gain);
        f(p + ".ln_time.bias", s.ln_time_bias);
        TimeMixFields<H>::visit(s.time, p + ".time", f);
        f(p + ".ln_chan.gain", s.ln_chan_gain);
        f(p + ".ln_chan.bias", s.ln_chan_bias);
        ChannelMixFields<H>::visit(s.chan, p + ".chan", f);
    }
};

// Two 3x3 stride-2 convolutions over (time x mel), then a linear projection
// of the flattened channels to d_io.
template <class H>
struct FrontendFields {
    H conv1_w, conv1_b;  // [C x 1 x 9], [C]
    H conv2_w, conv2_b;  // [C x C x 9], [C]
    H proj_w, proj_b;    // [d_io x C*F2], [d_io]

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".conv1.w", s.conv1_w);
        f(p + ".conv1.b", s.conv1_b);
        f(p + ".conv2.w", s.conv2_w);
        f(p + ".conv2.b", s.conv2_b);
        f(p + ".proj.w", s.proj_w);
        f(p + ".proj.b", s.proj_b);
    }
};

// Embedding plus one elementwise gated recurrence:
//   z_u = sigmoid(W_g s_{u-1} + e_u + b_g)
//   c_u = tanh(W_c s_{u-1} + e_u + b_c)
//   s_u = (1 - z_u) * s_{u-1} + z_u * c_u
// Row 0 of the embedding is the blank/start symbol.
template <class H>
struct PredictorFields {
    H embedding;  // [(V+1) x d_pred]
    H W_g, b_g;   // update gate
    H W_c, b_c;   // candidate

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".embedding", s.embedding);
        f(p + ".W_g", s.W_g);
        f(p + ".b_g", s.b_g);
        f(p + ".W_c", s.W_c);
        f(p + ".b_c", s.b_c);
    }
};

// log_softmax(W_out tanh(W_enc h_t + W_pred g_u + b)) over V+1 outputs.
template <class H>
struct JointFields {
    H W_enc;   // [d_joint x d_io]
    H W_pred;  // [d_joint x d_pred]
    H b;       // [d_joint]
    H W_out;   // [(V+1) x d_joint]

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".W_enc", s.W_enc);
        f(p + ".W_pred", s.W_pred);
        f(p + ".b", s.b);
        f(p + ".W_out", s.W_out);
    }
};

// Scalar alignment-weight head: alpha_t = sigmoid(w . h_t + b).
template <class H>
struct CifFields {
    H w;  // [d_io]
    H b;  // [1]

    template <class Self, class F>
    static void visit(Self& s, const std::string& p, F&& f) {
        f(p + ".w", s.w);
        f(p + ".b", s.b);
    }
};

template <class H>
struct ModelFields {
    FrontendFields<H> frontend;
    std::vector<BlockFields<H>> blocks;
    PredictorFields<H> pred;
    JointFields<H> joint;
    CifFields<H> cif;

    template <class Self, class F>
    static void visit(Self& s, F&& f) {
        FrontendFields<H>::visit(s.frontend, "frontend", f);
        for (std::size_t i = 0; i < s.blocks.size(); ++i)
            BlockFields<H>::visit(s.blocks[i], "block" + std::to_string(i), f);
        PredictorFields<H>::visit(s.pred, "pred", f);
        JointFields<H>::visit(s.joint, "joint", f);
        CifFields<H>::visit(s.cif, "cif", f);
    }
};

// Output extent of one 3x3 stride-2 valid convolution.
inline std::int64_t conv_out_extent(std::int64_t n) { return n < 3 ? 0 : (n - 3) / 2 + 1; }

// Mel bins after both convolutions; fixes the projection input width.
inline std::int64_t subsampled_freq_extent(int n_mels) {
    return conv_out_extent(conv_out_extent(n_mels));
}

// Subsampled frame count for a raw frame count. Factor-4 decimation with two
// valid 3-wide stride-2 convolutions reads a 7-row window every 4 rows; a
// trailing partial window is completed by replicating the last row, so every
// raw row past the first 6 contributes to some output: T = ceil((T_raw-7)/4)+1.
inline std::int64_t subsampled_length(std::int64_t t_raw) {
    return t_raw < 7 ? 0 : (t_raw - 4) / 4 + 1;
}

template <class T>
struct Model {
    ModelConfig config;
    ModelFields<Tensor<T>> params;
};

// Zero-shaped parameter set for a configuration; the single place where every
// parameter shape is pinned down.
template <class T>
ModelFields<Tensor<T>> make_param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    const std::int64_t d_io = cfg.d_io, d_att = cfg.d_att, d_lin = cfg.d_linear;
    const std::int64_t c = cfg.conv_channels;
    const std::int64_t f2 = subsampled_freq_extent(cfg.n_mels);
    if (f2 < 1) throw ShapeError("model: n_mels too small for two stride-2 convolutions");
    const std::int64_t v1 = cfg.vocab + 1;
    const std::int64_t d_pred = cfg.d_pred, d_joint = cfg.d_joint;

    ModelFields<Tensor<T>> m;
    m.frontend.conv1_w = Tensor<T>({c, 1, 9});
    m.frontend.conv1_b = Tensor<T>({c});
    m.frontend.conv2_w = Tensor<T>({c, c, 9});
    m.frontend.conv2_b = Tensor<T>({c});
    m.frontend.proj_w = Tensor<T>({d_io, c * f2});
    m.frontend.proj_b = Tensor<T>({d_io});

    m.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& blk : m.blocks) {
        blk.ln_time_gain = Tensor<T>({d_io});
        blk.ln_time_bias = Tensor<T>({d_io});
        blk.ln_chan_gain = Tensor<T>({d_io});
        blk.ln_chan_bias = Tensor<T>({d_io});
        blk.time.W_r = Tensor<T>({d_att, d_io});
        blk.time.W_k = Tensor<T>({d_att, d_io});
        blk.time.W_v = Tensor<T>({d_att, d_io});
        blk.time.W_o = Tensor<T>({d_io, d_att});
        blk.time.mu_r = Tensor<T>({d_io});
        blk.time.mu_k = Tensor<T>({d_io});
        blk.time.mu_v = Tensor<T>({d_io});
        blk.time.w_raw = Tensor<T>({d_att});
        blk.time.u = Tensor<T>({d_att});
        blk.chan.W_r = Tensor<T>({d_io, d_io});
        blk.chan.W_k = Tensor<T>({d_lin, d_io});
        blk.chan.W_v = Tensor<T>({d_io, d_lin});
        blk.chan.mu_r = Tensor<T>({d_io});
        blk.chan.mu_k = Tensor<T>({d_io});
    }

    m.pred.embedding = Tensor<T>({v1, d_pred});
    m.pred.W_g = Tensor<T>({d_pred, d_pred});
    m.pred.b_g = Tensor<T>({d_pred});
    m.pred.W_c = Tensor<T>({d_pred, d_pred});
    m.pred.b_c = Tensor<T>({d_pred});

    m.joint.W_enc = Tensor<T>({d_joint, d_io});
    m.joint.W_pred = Tensor<T>({d_joint, d_pred});
    m.joint.b = Tensor<T>({d_joint});
    m.joint.W_out = Tensor<T>({v1, d_joint});

    m.cif.w = Tensor<T>({d_io});
    m.cif.b = Tensor<T>({1});
    return m;
}

// Initialization: projections uniform in +-1/sqrt(fan-in), layer-norm gains 1,
// mix factors 0.5, decay pre-parameter and bonus 0, biases 0. Parameters are
// filled in visit() order, element by element, from the supplied generator.
template <class T>
Model<T> init_model(const ModelConfig& cfg, Rng& rng) {
    Model<T> m{cfg, make_param_shapes<T>(cfg)};
    ModelFields<Tensor<T>>::visit(m.params, [&](const std::string& name, Tensor<T>& t) {
        if (name.ends_with(".gain")) {
            std::fill(t.data.begin(), t.data.end(), T(1));
        } else if (name.find(".mu_") != std::string::npos) {
            std::fill(t.data.begin(), t.data.end(), T(0.5));
        } else if (name.ends_with(".bias") || name.ends_with(".b") || name.ends_with(".b_g") ||
                   name.ends_with(".b_c") || name.ends_with(".w_raw") || name.ends_with(".u")) {
            std::fill(t.data.begin(), t.data.end(), T(0));
        } else {
            // weight matrix / embedding / cif head: fan-in is the contraction width
            std::int64_t fan_in;
            if (t.rank() == 3) fan_in = t.shape[1] * t.shape[2];   // conv: Cin*9
            else if (t.rank() == 2) fan_in = t.shape[1];
            else fan_in = t.shape[0];                              // cif.w
            const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
            for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
        }
    });
    return m;
}

// Mix factors must stay inside [0,1] (the token shift is a convex blend);
// called after every optimizer step.
template <class T>
void clamp_mix_factors(ModelFields<Tensor<T>>& params) {
    ModelFields<Tensor<T>>::visit(params, [](const std::string& name, Tensor<T>& t) {
        if (name.find(".mu_") == std::string::npos) return;
        for (auto& v : t.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
    });
}

// Flat list of (name, tensor pointer) in canonical order.
template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> param_list(ModelFields<Tensor<T>>& params) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    ModelFields<Tensor<T>>::visit(params, [&](const std::string& name, Tensor<T>& t) {
        out.emplace_back(name, &t);
    });
    return out;
}

template <class T>
std::vector<std::pair<std::string, const Tensor<T>*>> param_list(const ModelFields<Tensor<T>>& params) {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    ModelFields<Tensor<T>>::visit(params, [&](const std::string& name, const Tensor<T>& t) {
        out.emplace_back(name, &t);
    });
    return out;
}

}  // namespace rwkvasr

#endif
