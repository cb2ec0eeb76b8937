#include "remap/diff/tape.hpp"

#include "remap/common/errors.hpp"

namespace remap::diff {

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
    Tensor shape_only;
    shape_only.shape = p.tensor.shape;
    nodes_.push_back(Node{std::move(shape_only), {}, nullptr, &p, recording_ && p.trainable});
    return Var{nodes_.size() - 1};
}

Var Tape::push(Tensor value, bool needs_grad, Backward fn) {
    const bool keep = recording_ && needs_grad;
    nodes_.push_back(Node{std::move(value), {}, keep ? std::move(fn) : nullptr, nullptr, keep});
    return Var{nodes_.size() - 1};
}

std::vector<double>& Tape::grad(Var v) {
    auto& node = nodes_[v.id];
    if (node.grad.empty()) node.grad.assign(value(v).size(), 0.0);
    return node.grad;
}

void Tape::backward(Var loss) {
    if (!recording_) throw ConfigError("backward on a non-recording tape");
    if (value(loss).size() != 1) {
        throw ConfigError("backward expects a single-element loss, got shape " +
                          value(loss).shape_string());
    }
    grad(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (node.grad.empty() || !node.needs_grad) continue;
        if (node.fn) node.fn(*this);
    }
    for (auto& node : nodes_) {
        if (node.param == nullptr || node.grad.empty() || !node.param->trainable) continue;
        auto& target = node.param->tensor.grad;
        if (target.empty()) target.assign(node.grad.size(), 0.0);
        for (std::size_t k = 0; k < node.grad.size(); ++k) target[k] += node.grad[k];
    }
}

}  // namespace remap::diff
