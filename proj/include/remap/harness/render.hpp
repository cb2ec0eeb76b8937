#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "remap/common/image.hpp"
#include "remap/engine/policy.hpp"

namespace remap::harness {

/// Fixed ramp: 0 is pure blue, 1 pure red, linear in between.
std::array<std::uint8_t, 3> reward_colour(double value);

/// Predicted reward of `column` rasterized onto the screen. Each pixel takes
/// the value of its nearest candidate (squared distance, lowest index on ties).
/// Throws InputError for an empty sample or a column out of range.
Image rasterize_reward_map(const engine::RewardMapSample& sample, std::size_t column, int height, int width);

/// Binary PPM (P6), 8 bits per channel. Throws IoError naming the path.
void write_ppm(const std::filesystem::path& path, const Image& image);

/// rasterize_reward_map + write_ppm for the sample's chosen column.
void render_reward_map(const engine::RewardMapSample& sample, int height, int width,
                       const std::filesystem::path& path);

}  // namespace remap::harness
