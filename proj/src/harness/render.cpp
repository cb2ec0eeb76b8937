#include "remap/harness/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include "remap/common/errors.hpp"

namespace remap::harness {

std::array<std::uint8_t, 3> reward_colour(double value) {
    const double v = std::clamp(std::isfinite(value) ? value : 0.0, 0.0, 1.0);
    const auto r = static_cast<std::uint8_t>(std::lround(255.0 * v));
    return {r, 0, static_cast<std::uint8_t>(255 - r)};
}

Image rasterize_reward_map(const engine::RewardMapSample& sample, std::size_t column, int height, int width) {
    if (sample.candidates.empty()) throw InputError("reward map has no candidates");
    if (column >= sample.k_f) throw InputError("reward map column out of range");
    if (height <= 0 || width <= 0) throw InputError("reward map needs a positive screen size");
    const auto values = sample.predicted(column);
    Image img(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            long best = std::numeric_limits<long>::max();
            std::size_t arg = 0;
            for (std::size_t k = 0; k < sample.candidates.size(); ++k) {
                const long dx = sample.candidates[k].x - x, dy = sample.candidates[k].y - y;
                const long d = dx * dx + dy * dy;
                if (d < best) {
                    best = d;
                    arg = k;
                }
            }
            const auto c = reward_colour(values[arg]);
            float* px = img.at(y, x);
            for (int i = 0; i < 3; ++i) px[i] = static_cast<float>(c[static_cast<std::size_t>(i)]) / 255.0f;
        }
    }
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<char> bytes(image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void render_reward_map(const engine::RewardMapSample& sample, int height, int width,
                       const std::filesystem::path& path) {
    write_ppm(path, rasterize_reward_map(sample, sample.chosen_map, height, width));
}

}  // namespace remap::harness
