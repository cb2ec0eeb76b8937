#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace remap {

/// 64-bit FNV-1a, used for weight and frame content hashes.
class Fnv1a {
public:
    void update(const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }

    template <typename T>
    void update(std::span<const T> values) {
        update(values.data(), values.size_bytes());
    }

    void update(std::string_view text) { update(text.data(), text.size()); }

    std::uint64_t digest() const { return state_; }

    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

inline std::string Fnv1a::hex() const { return to_hex(state_); }

inline std::string to_hex(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

}  // namespace remap
