#include "nilm/rng.hpp"

#include <cmath>
#include <numbers>

namespace nilm {

// SplitMix64 finalizer; a bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + 0x632BE59BD9B4E019ULL))) {}

SeededRng SeededRng::split(std::uint64_t child) const {
    return SeededRng(seed_, mix64(stream_ * kGolden + child + 1));
}

SeededRng SeededRng::split(std::initializer_list<std::uint64_t> keys) const {
    SeededRng out = *this;
    for (auto k : keys) out = out.split(k);
    return out;
}

std::uint64_t SeededRng::next_u64() {
    // Two rounds so that neighbouring keys do not produce correlated streams.
    return mix64(mix64(key_ + (++counter_) * kGolden) ^ key_);
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double SeededRng::normal(double mean, double stddev) {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n <= 1) return 0;
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

}  // namespace nilm
