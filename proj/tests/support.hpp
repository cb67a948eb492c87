#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <unistd.h>

#include "noiseinit/nets.hpp"
#include "noiseinit/rng.hpp"
#include "noiseinit/tensor.hpp"

namespace testing {

using namespace noiseinit;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return sample_uniform(rng, shape, lo, hi);
}

inline CnnSpec small_cnn() {
    CnnSpec c;
    c.input_channels = 2;
    c.height = 8;
    c.width = 8;
    c.encoder_channels = {3, 4};
    c.decoder_channels = {4, 3};
    c.skip_channels = 2;
    return c;
}

inline MlpSpec small_mlp(std::size_t hidden = 8, std::size_t layers = 2) {
    MlpSpec m;
    m.hidden_dim = hidden;
    m.num_hidden_layers = layers;
    return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Fourth-order central differences of θ ↦ <f(θ), cotangent>:
// (8·(f(θ+h) − f(θ−h)) − (f(θ+2h) − f(θ−2h))) / 12h. Sine layers with ω₀=30
// have third derivatives large enough that the second-order stencil's h²
// truncation alone exceeds 1e-6. Output differences are taken element by
// element and accumulated in long double.
inline Tensor central_difference(const std::function<Tensor(const ParamVector&)>& f, const Tensor& cotangent,
                                 ParamVector at, double step = 1e-5) {
    Tensor g(at.values.shape());
    const auto eval = [&](std::size_t i, double keep, double offset) {
        at.values[i] = keep + offset;
        Tensor out = f(at);
        at.values[i] = keep;
        return out;
    };
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double keep = at.values[i];
        const Tensor up = eval(i, keep, step), down = eval(i, keep, -step);
        const Tensor up2 = eval(i, keep, 2.0 * step), down2 = eval(i, keep, -2.0 * step);
        long double s = 0.0L;
        for (std::size_t j = 0; j < up.size(); ++j) {
            const long double d1 = static_cast<long double>(up[j]) - down[j];
            const long double d2 = static_cast<long double>(up2[j]) - down2[j];
            s += static_cast<long double>(cotangent[j]) * (8.0L * d1 - d2);
        }
        g[i] = static_cast<double>(s / (12.0L * step));
    }
    return g;
}

// max_i |a_i − b_i| / max(|a_i|, |b_i|, floor). With step 1e-5 the difference
// quotient carries ~1e-11 absolute round-off, so coordinates below the floor
// are held to an absolute bound of floor·tolerance instead.
inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("noiseinit_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    static std::uint64_t& counter() {
        static std::uint64_t c = 0;
        return c;
    }
    std::filesystem::path path_;
};

}  // namespace testing
