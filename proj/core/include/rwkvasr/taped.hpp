#ifndef RWKVASR_TAPED_HPP
#define RWKVASR_TAPED_HPP

#include <vector>

#include "rwkvasr/graph.hpp"
#include "rwkvasr/model.hpp"

// Bridge between stored parameters and the tape: a ModelFields<Value> mirror
// whose leaves are registered in visit() order, plus gradient collection back
// into plain tensors in the same order.

namespace rwkvasr {

template <class T>
ModelFields<Value> lift_params(Graph<T>& g, const ModelFields<Tensor<T>>& src) {
    ModelFields<Value> dst;
    dst.blocks.resize(src.blocks.size());

    std::vector<const Tensor<T>*> from;
    ModelFields<Tensor<T>>::visit(src, [&](const std::string&, const Tensor<T>& t) { from.push_back(&t); });
    std::vector<Value*> to;
    ModelFields<Value>::visit(dst, [&](const std::string&, Value& v) { to.push_back(&v); });
    for (std::size_t i = 0; i < from.size(); ++i) *to[i] = g.leaf(*from[i]);
    return dst;
}

// Gradients of the last backward() for every lifted parameter, as tensors in
// the same structure as the model.
template <class T>
ModelFields<Tensor<T>> collect_grads(Graph<T>& g, const ModelFields<Value>& taped) {
    ModelFields<Tensor<T>> out;
    out.blocks.resize(taped.blocks.size());
    std::vector<const Value*> from;
    ModelFields<Value>::visit(taped, [&](const std::string&, const Value& v) { from.push_back(&v); });
    std::vector<Tensor<T>*> to;
    ModelFields<Tensor<T>>::visit(out, [&](const std::string&, Tensor<T>& t) { to.push_back(&t); });
    for (std::size_t i = 0; i < from.size(); ++i) *to[i] = g.grad(*from[i]);
    return out;
}

// grads += scale * new_grads, elementwise across the whole parameter set.
template <class T>
void accumulate_grads(ModelFields<Tensor<T>>& acc, Graph<T>& g, const ModelFields<Value>& taped, T scale) {
    std::vector<const Value*> from;
    ModelFields<Value>::visit(taped, [&](const std::string&, const Value& v) { from.push_back(&v); });
    std::vector<Tensor<T>*> to;
    ModelFields<Tensor<T>>::visit(acc, [&](const std::string&, Tensor<T>& t) { to.push_back(&t); });
    for (std::size_t i = 0; i < from.size(); ++i) {
        const Tensor<T>& gsrc = g.grad(*from[i]);
        Tensor<T>& gdst = *to[i];
        if (gdst.numel() == 0) gdst = Tensor<T>(gsrc.shape);
        for (std::int64_t j = 0; j < gsrc.numel(); ++j) gdst[j] += scale * gsrc[j];
    }
}

}  // namespace rwkvasr

#endif
