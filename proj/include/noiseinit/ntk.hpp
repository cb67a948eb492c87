#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "noiseinit/nets.hpp"
#include "noiseinit/tensor.hpp"

namespace noiseinit {

inline constexpr std::size_t kDefaultProbeCap = 4096;

struct GridShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t count() const noexcept { return height * width; }
    friend bool operator==(const GridShape&, const GridShape&) = default;
};

// Pixel-centre coordinates of an h×w image over [-1, 1]², raster order,
// one (x, y) row per pixel.
Tensor coordinate_grid(std::size_t height, std::size_t width);
// Every `stride`-th pixel of a training grid, so probes coincide with
// training coordinates.
Tensor probe_grid(std::size_t train_height, std::size_t train_width, GridShape probes);

struct KernelMatrix {
    Tensor k;  // n×n
    GridShape grid;
    std::size_t n() const { return k.rank() == 2 ? k.dim(0) : 0; }
};

struct NtkSpectrum {
    Tensor eigenvalues;   // [n], descending
    Tensor eigenvectors;  // [n×n], column i pairs with eigenvalues[i]
    GridShape grid;
};

// K = J Jᵀ with row i of J = ∇θ f(probe_i). Throws ResourceError when the
// probe count exceeds `cap`.
KernelMatrix compute_ntk(const NetworkSpec& spec, const ParamVector& params, const Tensor& probes,
                         std::optional<GridShape> grid = std::nullopt, std::size_t cap = kDefaultProbeCap);

enum class EigenMethod {
    householder_ql,  // Householder tridiagonalisation + implicit QL, O(n³)
    jacobi,          // cyclic Jacobi rotations
};

NtkSpectrum eigendecompose(const KernelMatrix& kernel, EigenMethod method = EigenMethod::householder_ql);

// Symmetric eigensolvers on a raw matrix. Eigenvalues descending.
struct SymmetricEigen {
    Tensor values;
    Tensor vectors;
};
SymmetricEigen symmetric_eigen_ql(const Tensor& a);
// Sweeps until the off-diagonal Frobenius norm is below tol·‖A‖_F.
SymmetricEigen symmetric_eigen_jacobi(const Tensor& a, double tol = 1e-12, int max_sweeps = 100);

// ‖K − UΛUᵀ‖_F / ‖K‖_F
double reconstruction_residual(const Tensor& k, const NtkSpectrum& spectrum);
// max |UᵀU − I|
double orthonormality_error(const NtkSpectrum& spectrum);

struct DecayRatio {
    double value;
    bool degenerate;  // λ_k ≤ 0; value is +∞
};

// λ₁ / λ_k with k 1-based.
DecayRatio decay_ratio(const NtkSpectrum& spectrum, std::size_t k);
double effective_rank(const NtkSpectrum& spectrum);
// Mean per-row count of |K_ij| ≥ ½·K_ii.
double band_width(const KernelMatrix& kernel);

// Centred |DFT|² of eigenvector `index` (0-based) laid out on the probe grid.
// DC sits at (h/2, w/2).
Tensor eigvec_spectrum(const NtkSpectrum& spectrum, std::size_t index);
// Power-weighted mean radial frequency of a centred power image, in cycles
// per grid side.
double freq_centroid(const Tensor& power);

struct SpectralReport {
    std::vector<std::size_t> decay_ks;
    std::vector<DecayRatio> decay_ratios;
    double effective_rank = 0.0;
    double band_width = 0.0;
    Tensor eigvec_freq_centroids;  // [n]
};

inline const std::vector<std::size_t> kDefaultDecayKs{10, 50, 100};

SpectralReport spectral_report(const KernelMatrix& kernel, const NtkSpectrum& spectrum,
                               const std::vector<std::size_t>& decay_ks = kDefaultDecayKs);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace noiseinit
