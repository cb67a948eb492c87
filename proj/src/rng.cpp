#include "noiseinit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "noiseinit/error.hpp"

namespace noiseinit {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) noexcept {
    // FNV-1a of the stream name, mixed with the master seed.
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : stream) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return splitmix64(splitmix64(master) ^ h);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
        word = splitmix64(s);
        s += 0x9E3779B97F4A7C15ULL;
    }
}

std::uint64_t Rng::next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::next_unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

Tensor sample_gaussian(Rng& rng, const Shape& shape, double mean, double stddev) {
    if (!(stddev > 0.0)) throw ParameterError("sample_gaussian: std must be > 0");
    Tensor out(shape);
    auto data = out.data();
    for (std::size_t i = 0; i < data.size(); i += 2) {
        // 1 - u lies in (0, 1], keeping the log finite.
        const double u1 = 1.0 - rng.next_unit();
        const double u2 = rng.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phi = 2.0 * std::numbers::pi * u2;
        data[i] = mean + stddev * r * std::cos(phi);
        if (i + 1 < data.size()) data[i + 1] = mean + stddev * r * std::sin(phi);
    }
    return out;
}

Tensor sample_uniform(Rng& rng, const Shape& shape, double lo, double hi) {
    if (!(lo < hi)) throw ParameterError("sample_uniform: need lo < hi");
    Tensor out(shape);
    const double below_hi = std::nextafter(hi, lo);
    for (double& v : out.data()) {
        v = std::min(lo + (hi - lo) * rng.next_unit(), below_hi);
    }
    return out;
}

}  // namespace noiseinit
