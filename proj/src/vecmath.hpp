#pragma once

#include <cstddef>

namespace noiseinit::detail {

// z ← scale·z, a ← sin(z), elementwise over n values.
void scaled_sin(double* z, double* a, std::size_t n, double scale);
// g ← g · scale · cos(phase), elementwise over n values.
void mul_scaled_cos(double* g, const double* phase, std::size_t n, double scale);

}  // namespace noiseinit::detail
