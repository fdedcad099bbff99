#include "nilm/hash.hpp"

#include <bit>
#include <cstdio>

namespace nilm {

Fnv1a& Fnv1a::bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        state_ ^= p[i];
        state_ *= 0x100000001b3ULL;
    }
    return *this;
}

Fnv1a& Fnv1a::u64(std::uint64_t v) {
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(le, 8);
}

Fnv1a& Fnv1a::doubles(std::span<const double> v) {
    for (double d : v) u64(std::bit_cast<std::uint64_t>(d));
    return *this;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace nilm
