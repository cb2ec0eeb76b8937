#include "remap/diff/adam.hpp"

#include <cmath>
#include <string>

#include "remap/common/errors.hpp"

namespace remap::diff {

void adam_update(Parameter& p, std::span<const double> grad, AdamState& state,
                 const AdamConfig& config, double learning_rate) {
    if (!p.trainable) return;
    const std::size_t n = p.tensor.size();
    if (grad.size() != n) {
        throw ConfigError("gradient length " + std::to_string(grad.size()) + " for parameter '" +
                          p.name + "' of size " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(grad[i])) {
            throw TrainingError("non-finite gradient in parameter '" + p.name + "' at index " +
                                std::to_string(i));
        }
    }
    if (state.m.size() != n) {
        state.m.assign(n, 0.0);
        state.v.assign(n, 0.0);
    }
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        p.tensor.values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

void Adam::add(Parameter& p, double learning_rate) {
    entries_.push_back(Entry{&p, learning_rate > 0 ? learning_rate : config_.learning_rate, {}});
}

void Adam::step() {
    // Validate everything first so a bad gradient leaves all values untouched.
    for (const Entry& e : entries_) {
        const auto& g = e.param->tensor.grad;
        if (!e.param->trainable || g.empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw TrainingError("non-finite gradient in parameter '" + e.param->name +
                                    "' at index " + std::to_string(i));
            }
        }
    }
    for (Entry& e : entries_) {
        auto& g = e.param->tensor.grad;
        if (e.param->trainable && !g.empty()) {
            adam_update(*e.param, g, e.state, config_, e.learning_rate);
        }
    }
    zero_grad();
}

void Adam::zero_grad() {
    for (Entry& e : entries_) e.param->tensor.grad.clear();
}

}  // namespace remap::diff
