#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "noiseinit/tensor.hpp"

namespace noiseinit {

// xoshiro256** seeded through splitmix64. The stream is a pure function of
// the seed and the call sequence on every platform. Not thread-safe: give
// each thread its own instance (see derive_seed).
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() noexcept;
    // Uniform on [0, 1) with 53 random mantissa bits.
    double next_unit() noexcept;

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Child seed for a named sub-stream; distinct names give unrelated streams.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) noexcept;

// i.i.d. normal samples via Box–Muller (both outputs of each pair are used).
Tensor sample_gaussian(Rng& rng, const Shape& shape, double mean, double stddev);
// i.i.d. uniform samples on [lo, hi).
Tensor sample_uniform(Rng& rng, const Shape& shape, double lo, double hi);

}  // namespace noiseinit
