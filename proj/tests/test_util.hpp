#ifndef RWKVASR_TEST_UTIL_HPP
#define RWKVASR_TEST_UTIL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rwkvasr/graph.hpp"
#include "rwkvasr/model.hpp"
#include "rwkvasr/rng.hpp"
#include "rwkvasr/tensor.hpp"

namespace testutil {

inline rwkvasr::Tensor<double> random_tensor(rwkvasr::Rng& rng, std::vector<std::int64_t> shape,
                                             double scale = 1.0) {
    rwkvasr::Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = scale * rng.normal(0.0, 1.0);
    return t;
}

// Small configuration used wherever a full model is needed but size is not
// the point. Dims are mutually distinct so shape mix-ups cannot cancel out.
inline rwkvasr::ModelConfig micro_config() {
    rwkvasr::ModelConfig cfg;
    cfg.d_io = 6;
    cfg.d_att = 6;
    cfg.d_linear = 10;
    cfg.blocks = 2;
    cfg.dropout = 0.0;
    cfg.n_mels = 9;
    cfg.conv_channels = 2;
    cfg.vocab = 3;
    cfg.d_pred = 5;
    cfg.d_joint = 6;
    return cfg;
}

// Central finite differences against the tape for an arbitrary scalar-valued
// builder. The graph is rebuilt for every perturbed evaluation, so the check
// covers the recorded forward values and the backward closures together.
// Returns the worst relative error max(|an-fd|) / max(1, |an|, |fd|).
template <class Builder>
double gradcheck(const std::vector<rwkvasr::Tensor<double>>& leaves0, Builder&& build,
                 double h = 1e-6) {
    using rwkvasr::Graph;
    using rwkvasr::Tensor;
    using rwkvasr::Value;

    Graph<double> g;
    std::vector<Value> vs;
    vs.reserve(leaves0.size());
    for (const auto& t : leaves0) vs.push_back(g.leaf(t));
    g.backward(build(g, vs));
    std::vector<Tensor<double>> analytic;
    analytic.reserve(vs.size());
    for (Value v : vs) analytic.push_back(g.grad(v));

    auto eval = [&](const std::vector<Tensor<double>>& leaves) {
        Graph<double> g2;
        std::vector<Value> vs2;
        vs2.reserve(leaves.size());
        for (const auto& t : leaves) vs2.push_back(g2.leaf(t));
        return g2.val(build(g2, vs2))[0];
    };

    std::vector<Tensor<double>> work = leaves0;
    double worst = 0.0;
    for (std::size_t li = 0; li < work.size(); ++li) {
        for (std::int64_t j = 0; j < work[li].numel(); ++j) {
            const double orig = work[li][j];
            work[li][j] = orig + h;
            const double fp = eval(work);
            work[li][j] = orig - h;
            const double fm = eval(work);
            work[li][j] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[li][j];
            const double rel =
                std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace testutil

#endif
