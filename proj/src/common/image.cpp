#include "remap/common/image.hpp"

#include "remap/common/hash.hpp"

namespace remap {

std::uint64_t Image::content_hash() const {
    Fnv1a h;
    h.update(&height, sizeof height);
    h.update(&width, sizeof width);
    h.update(std::span<const float>(pixels));
    return h.digest();
}

}  // namespace remap
