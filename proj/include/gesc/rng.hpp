#pragma once

// Counter-based random numbers: Philox4x32-10 (Salmon et al., SC'11).
//
// Key   = the 64-bit seed split into two 32-bit words (low word first).
// Block = (index_lo, index_hi, stream_lo, stream_hi), where `index` counts
//         draws within a stream.
// Each 64-bit draw consumes one block and returns (x0 << 32) | x1 of the
// Philox output. uniform() is (draw >> 11) * 2^-53; normal() is Box-Muller
// over two uniforms with no cached second value. fork(tag) derives the child
// stream id as splitmix64(stream ^ splitmix64(tag)).
//
// With this fixed, every mask/split/initialisation is reproducible from
// (seed, stream) across implementations.

#include <cstdint>

namespace gesc {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : seed_(seed), stream_(stream) {}

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept;
    /// Uniform integer in [0, n), unbiased (rejection); n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Independent child stream; does not advance this generator.
    Rng fork(std::uint64_t tag) const noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t position() const noexcept { return index_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t index_ = 0;
};

}  // namespace gesc
