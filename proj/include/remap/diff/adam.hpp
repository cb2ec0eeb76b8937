#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "remap/diff/tensor.hpp"

namespace remap::diff {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment estimates for one parameter.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
};

/// Bias-corrected Adam over a registered parameter set. Each parameter can
/// carry its own learning rate; the moment hyperparameters are shared.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Registers `p` with the default rate, or with `learning_rate` when > 0.
    /// The parameter must outlive the optimizer.
    void add(Parameter& p, double learning_rate = 0.0);

    /// Applies one update to every trainable registered parameter with a
    /// gradient, then clears all registered gradients. Throws TrainingError
    /// naming the parameter if a gradient entry is not finite.
    void step();

    void zero_grad();

    const AdamConfig& config() const { return config_; }
    std::size_t parameter_count() const { return entries_.size(); }
    const AdamState& state(std::size_t index) const { return entries_[index].state; }

private:
    struct Entry {
        Parameter* param;
        double learning_rate;
        AdamState state;
    };

    AdamConfig config_;
    std::vector<Entry> entries_;
};

/// One Adam update of a single parameter with an explicit gradient.
void adam_update(Parameter& p, std::span<const double> grad, AdamState& state,
                 const AdamConfig& config, double learning_rate);

}  // namespace remap::diff
