// Built with -ffast-math where available so the loops map onto the vector
// sin/cos of libmvec. Nothing here reassociates a reduction.
#include "vecmath.hpp"

#include <cmath>

namespace noiseinit::detail {

void scaled_sin(double* z, double* a, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) z[i] *= scale;
    for (std::size_t i = 0; i < n; ++i) a[i] = std::sin(z[i]);
}

void mul_scaled_cos(double* g, const double* phase, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) g[i] *= scale * std::cos(phase[i]);
}

}  // namespace noiseinit::detail
