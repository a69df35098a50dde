#pragma once

#include <cstdint>
#include <limits>

namespace ohmm {

/// Named streams carved out of one experiment seed.
enum class Stream : std::uint64_t {
    chain = 1,
    emission = 2,
    kmeans = 3,
    sampling = 4,
};

/// Counter-based generator: output n is a pure function of (seed, stream, n),
/// so draws for time slot t never depend on how many slots follow it.
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
public:
    using result_type = std::uint64_t;

    /// Draws reserved per slot by `at`.
    static constexpr std::uint64_t slot_width = 256;

    CounterRng(std::uint64_t seed, Stream stream, std::uint64_t counter = 0)
        : key_(mix(seed ^ mix(static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL))),
          counter_(counter) {}

    /// Generator positioned at the start of slot `slot` of a stream.
    static CounterRng at(std::uint64_t seed, Stream stream, std::uint64_t slot) {
        return CounterRng(seed, stream, slot * slot_width);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(key_ + (++counter_) * golden); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1).
    double uniform_open() {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    std::uint64_t counter() const { return counter_; }

private:
    static constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ULL;

    // splitmix64 finalizer
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace ohmm
