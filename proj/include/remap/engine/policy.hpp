#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "remap/env/tasks.hpp"

namespace remap::engine {

enum class DistFamily { Identity, Boltzmann };

struct PolicyConfig {
    int candidates = 512;
    DistFamily family = DistFamily::Identity;
    double temperature = 0.1;
    /// Boltzmann with e^{-x/T} as printed (favours low predicted reward).
    bool literal_boltzmann = false;
    int batch = 32;
    std::uint64_t seed = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

/// N distinct grid points, uniform over the height x width action grid.
/// Throws InputError when N < 2 or N exceeds the grid.
std::vector<env::ActionPoint> subsample_actions(int n, int height, int width, std::mt19937_64& rng);

inline constexpr double kActionScale = 4.0;

/// Pixel index to [-kActionScale, kActionScale] at the pixel centre.
inline double encode_coordinate(int v, int extent) { return kActionScale * ((v + 0.5) / extent * 2.0 - 1.0); }

/// values - min(values).
std::vector<double> normalize_map(std::span<const double> values);

/// f(v_i) / sum_j f(v_j). Falls back to uniform when the total mass is zero
/// (or not finite), setting *fell_back.
std::vector<double> distify(std::span<const double> values, const PolicyConfig& policy,
                            bool* fell_back = nullptr);

/// Population variance (divides by N).
double population_variance(std::span<const double> p);

/// Index of the distribution with the largest variance; ties go to the lowest.
std::size_t var_argmax(const std::vector<std::vector<double>>& distributions);

/// Draws an index from a probability vector.
std::size_t sample_index(std::span<const double> p, std::mt19937_64& rng);

/// One evaluated reward map: candidates, their logits (N x k_f, row-major)
/// and the per-column policy distributions.
struct RewardMapSample {
    std::vector<env::ActionPoint> candidates;
    std::size_t k_f = 0;
    std::vector<double> logits;
    std::vector<std::vector<double>> probabilities;
    std::size_t chosen_map = 0;
    std::size_t chosen_index = 0;
    bool fell_back = false;

    double logit(std::size_t candidate, std::size_t column) const { return logits[candidate * k_f + column]; }
    /// Sigmoid of one column (predicted reward).
    std::vector<double> predicted(std::size_t column) const;
};

/// Norm, Dist and VarArgmax over an N x k_f logit matrix, then samples the
/// action from the winning distribution.
void apply_policy(RewardMapSample& sample, const PolicyConfig& policy, std::mt19937_64& rng);

}  // namespace remap::engine
