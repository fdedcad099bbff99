#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace nilm {

// 64-bit FNV-1a; stable across platforms and runs.
class Fnv1a {
   public:
    Fnv1a& bytes(const void* data, std::size_t n);
    Fnv1a& str(std::string_view s) { return bytes(s.data(), s.size()); }
    Fnv1a& u64(std::uint64_t v);
    // Hashes the IEEE bit patterns, little-endian.
    Fnv1a& doubles(std::span<const double> v);
    std::uint64_t value() const { return state_; }

   private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);

}  // namespace nilm
