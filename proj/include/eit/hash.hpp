#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>
#include <type_traits>

namespace eit {

/// 64-bit FNV-1a, used for provenance ids.
class Fnv1a {
public:
    Fnv1a& add_bytes(const void* data, std::size_t size) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    template <class T>
        requires std::is_arithmetic_v<T>
    Fnv1a& add(T value) {
        return add_bytes(&value, sizeof(T));
    }

    Fnv1a& add(std::string_view s) { return add_bytes(s.data(), s.size()); }

    std::uint64_t value() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace eit
