#include "remap/engine/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "remap/common/errors.hpp"
#include "remap/diff/ops.hpp"

namespace remap::engine {

void PolicyConfig::validate() const {
    if (candidates < 2) throw ConfigError("policy needs at least 2 candidates");
    if (family == DistFamily::Boltzmann && !(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (batch < 1) throw ConfigError("batch size must be positive");
}

void to_json(nlohmann::json& j, const PolicyConfig& c) {
    j = nlohmann::json{{"candidates", c.candidates},
                       {"family", c.family == DistFamily::Identity ? "identity" : "boltzmann"},
                       {"temperature", c.temperature},
                       {"literal_boltzmann", c.literal_boltzmann},
                       {"batch", c.batch},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PolicyConfig& c) {
    c = PolicyConfig{};
    c.candidates = j.value("candidates", c.candidates);
    const auto family = j.value("family", std::string("identity"));
    if (family == "identity") {
        c.family = DistFamily::Identity;
    } else if (family == "boltzmann") {
        c.family = DistFamily::Boltzmann;
    } else {
        throw ConfigError("unknown distribution family '" + family + "'");
    }
    c.temperature = j.value("temperature", c.temperature);
    c.literal_boltzmann = j.value("literal_boltzmann", c.literal_boltzmann);
    c.batch = j.value("batch", c.batch);
    c.seed = j.value("seed", c.seed);
    c.validate();
}

std::vector<env::ActionPoint> subsample_actions(int n, int height, int width, std::mt19937_64& rng) {
    const long grid = static_cast<long>(height) * width;
    if (n < 2) throw InputError("need at least 2 candidate actions");
    if (n > grid) throw InputError("candidate count " + std::to_string(n) + " exceeds the action grid");
    std::vector<int> cells(static_cast<std::size_t>(grid));
    std::iota(cells.begin(), cells.end(), 0);
    std::vector<env::ActionPoint> out;
    out.reserve(static_cast<std::size_t>(n));
    // partial Fisher-Yates
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<long> pick(i, grid - 1);
        std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(pick(rng))]);
        const int c = cells[static_cast<std::size_t>(i)];
        out.push_back({c % width, c / width});
    }
    return out;
}

std::vector<double> normalize_map(std::span<const double> values) {
    if (values.empty()) return {};
    const double lo = *std::min_element(values.begin(), values.end());
    std::vector<double> out(values.begin(), values.end());
    for (double& v : out) v -= lo;
    return out;
}

std::vector<double> distify(std::span<const double> values, const PolicyConfig& policy, bool* fell_back) {
    std::vector<double> out(values.size());
    if (policy.family == DistFamily::Identity) {
        std::copy(values.begin(), values.end(), out.begin());
    } else {
        // shift by the extreme value so the exponent never overflows
        const double sign = policy.literal_boltzmann ? -1.0 : 1.0;
        double top = -INFINITY;
        for (double v : values) top = std::max(top, sign * v / policy.temperature);
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::exp(sign * values[i] / policy.temperature - top);
    }
    double total = 0.0;
    for (double v : out) total += v;
    const bool degenerate = !(total > 0.0) || !std::isfinite(total);
    if (fell_back != nullptr) *fell_back = degenerate;
    if (degenerate) {
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
        return out;
    }
    for (double& v : out) v /= total;
    return out;
}

double population_variance(std::span<const double> p) {
    if (p.empty()) return 0.0;
    double mean = 0.0;
    for (double v : p) mean += v;
    mean /= static_cast<double>(p.size());
    double s = 0.0;
    for (double v : p) s += (v - mean) * (v - mean);
    return s / static_cast<double>(p.size());
}

std::size_t var_argmax(const std::vector<std::vector<double>>& distributions) {
    std::size_t best = 0;
    double best_var = -1.0;
    for (std::size_t k = 0; k < distributions.size(); ++k) {
        const double v = population_variance(distributions[k]);
        if (v > best_var) {
            best_var = v;
            best = k;
        }
    }
    return best;
}

std::size_t sample_index(std::span<const double> p, std::mt19937_64& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        acc += p[i];
        last = i;
        if (u < acc) return i;
    }
    return last;  // rounding left u above the accumulated mass
}

std::vector<double> RewardMapSample::predicted(std::size_t column) const {
    std::vector<double> out(candidates.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = diff::sigmoid(logit(i, column));
    return out;
}

void apply_policy(RewardMapSample& sample, const PolicyConfig& policy, std::mt19937_64& rng) {
    sample.probabilities.clear();
    sample.fell_back = false;
    for (std::size_t j = 0; j < sample.k_f; ++j) {
        bool fb = false;
        sample.probabilities.push_back(distify(normalize_map(sample.predicted(j)), policy, &fb));
        sample.fell_back = sample.fell_back || fb;
    }
    sample.chosen_map = var_argmax(sample.probabilities);
    sample.chosen_index = sample_index(sample.probabilities[sample.chosen_map], rng);
}

}  // namespace remap::engine
