#pragma once

#include <cstdint>
#include <initializer_list>

namespace nilm {

// Counter-based generator: output k of stream (seed, stream) is a pure
// function of (seed, stream, k), so results never depend on which thread or
// in which order substreams are consumed. Output is integer-only up to the
// final conversion, hence identical on every IEEE-754 platform.
class SeededRng {
   public:
    explicit SeededRng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    // Independent child stream; the parent is left untouched.
    SeededRng split(std::uint64_t child) const;
    // Child stream keyed by a tuple, e.g. {epoch, batch}.
    SeededRng split(std::initializer_list<std::uint64_t> keys) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal(double mean = 0.0, double stddev = 1.0);
    bool bernoulli(double p) { return uniform() < p; }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

   private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace nilm
