#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "remap/diff/tensor.hpp"

namespace remap::diff {

/// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

/// Reverse-mode computation record. A tape is built fresh for each forward
/// pass; `backward` walks it once in reverse and then adds leaf gradients
/// into the owning Parameters.
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    /// A non-recording tape skips every gradient closure (inference only).
    explicit Tape(bool recording = true) : recording_(recording) {}

    Var constant(Tensor value);
    /// Parameters are referenced, not copied; they must outlive the tape.
    Var parameter(Parameter& p);

    /// Registers an op output. `needs_grad` marks whether any input requires
    /// a gradient; when false (or when not recording) `fn` is dropped.
    Var push(Tensor value, bool needs_grad, Backward fn);

    const Tensor& value(Var v) const {
        const auto& node = nodes_[v.id];
        return node.param != nullptr ? node.param->tensor : node.value;
    }
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer of `v`, zero-allocated on first access.
    std::vector<double>& grad(Var v);
    bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

    /// Seeds d(loss)/d(loss) = 1 for a single-element `loss` and propagates.
    void backward(Var loss);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        Backward fn;
        Parameter* param = nullptr;  // leaf referencing external storage
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    bool recording_;
};

}  // namespace remap::diff
