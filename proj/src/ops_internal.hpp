#pragma once

#include "cyclesynth/tensor.hpp"

#include <initializer_list>

namespace cyclesynth::ops::detail_ops {

using cyclesynth::detail::Node;

// Wraps freshly computed values in a node. The backward closure and inputs are
// only recorded when some input requires grad.
inline Tensor make_result(Shape shape, std::vector<Scalar> values, const char* op,
                          std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward_fn)
{
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->op = op;
    node->seq = cyclesynth::detail::next_seq();
    bool any = false;
    for (const auto& in : inputs)
        any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        for (const auto& in : inputs)
            node->inputs.push_back(in.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

} // namespace cyclesynth::ops::detail_ops
