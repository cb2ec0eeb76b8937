#pragma once

#include <cstdint>
#include <vector>

namespace remap {

/// RGB raster, row-major, channel-last, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // height * width * 3

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const float* at(int y, int x) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    /// Content hash of the pixel bytes.
    std::uint64_t content_hash() const;
};

}  // namespace remap
