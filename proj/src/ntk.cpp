#include "noiseinit/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "noiseinit/error.hpp"

namespace noiseinit {

Tensor coordinate_grid(std::size_t height, std::size_t width) {
    Tensor coords({height * width, 2});
    for (std::size_t r = 0; r < height; ++r) {
        const double y = -1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(height);
        for (std::size_t c = 0; c < width; ++c) {
            const double x = -1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(width);
            coords.at(r * width + c, 0) = x;
            coords.at(r * width + c, 1) = y;
        }
    }
    return coords;
}

Tensor probe_grid(std::size_t train_height, std::size_t train_width, GridShape probes) {
    if (probes.height == 0 || probes.width == 0 || train_height % probes.height || train_width % probes.width) {
        throw ParameterError("probe grid " + std::to_string(probes.height) + "x" + std::to_string(probes.width) +
                             " must evenly subsample the " + std::to_string(train_height) + "x" +
                             std::to_string(train_width) + " training grid");
    }
    const std::size_t sy = train_height / probes.height, sx = train_width / probes.width;
    const Tensor full = coordinate_grid(train_height, train_width);
    Tensor out({probes.count(), 2});
    for (std::size_t r = 0; r < probes.height; ++r) {
        for (std::size_t c = 0; c < probes.width; ++c) {
            const std::size_t src = (r * sy) * train_width + c * sx;
            out.at(r * probes.width + c, 0) = full.at(src, 0);
            out.at(r * probes.width + c, 1) = full.at(src, 1);
        }
    }
    return out;
}

KernelMatrix compute_ntk(const NetworkSpec& spec, const ParamVector& params, const Tensor& probes,
                         std::optional<GridShape> grid, std::size_t cap) {
    if (probes.rank() != 2) throw DimensionError("probes must be [n x d], got " + to_string(probes.shape()));
    const std::size_t n = probes.dim(0);
    if (n > cap) {
        throw ResourceError("probe count " + std::to_string(n) + " exceeds the NTK probe cap of " +
                            std::to_string(cap));
    }
    const GridShape g = grid.value_or(GridShape{1, n});
    if (g.count() != n) {
        throw DimensionError("grid " + std::to_string(g.height) + "x" + std::to_string(g.width) + " does not hold " +
                             std::to_string(n) + " probes");
    }
    // Each dense layer contributes (D·Dᵀ) ⊙ (A·Aᵀ + 1), so the n×p Jacobian
    // is never formed.
    Tensor k({n, n});
    double* kd = k.data().data();
    std::vector<double> dd(n * n), aa(n * n);
    for (const auto& f : jacobian_factors(spec, params, probes)) {
        const std::size_t out = f.deltas.dim(1), in = f.inputs.dim(1);
        gemm(n, n, out, f.deltas.data().data(), out, f.deltas.data().data(), out, dd.data(), n, false, Op::none,
             Op::transpose);
        gemm(n, n, in, f.inputs.data().data(), in, f.inputs.data().data(), in, aa.data(), n, false, Op::none,
             Op::transpose);
        const double bias = f.has_bias ? 1.0 : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i; j < n; ++j) kd[i * n + j] += dd[i * n + j] * (aa[i * n + j] + bias);
        }
    }
    // The upper triangle is complete; mirroring it makes K exactly symmetric.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) kd[j * n + i] = kd[i * n + j];
    }
    return KernelMatrix{std::move(k), g};
}

namespace {

void check_square(const Tensor& a, const char* what) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw DimensionError(std::string(what) + " expects a square matrix, got " + to_string(a.shape()));
    }
}

// Sorts descending and returns eigenvectors as columns. `rows` holds one
// eigenvector per row.
SymmetricEigen sorted_descending(const std::vector<double>& values, const std::vector<double>& rows, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    SymmetricEigen out{Tensor({n}), Tensor({n, n})};
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.values[j] = values[src];
        for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + j] = rows[src * n + i];
    }
    return out;
}

}  // namespace

SymmetricEigen symmetric_eigen_ql(const Tensor& a) {
    check_square(a, "symmetric_eigen_ql");
    const std::size_t n = a.dim(0);
    if (n == 0) return {Tensor({0}), Tensor({0, 0})};
    if (!a.all_finite()) throw NumericError("symmetric_eigen_ql: matrix has non-finite entries");

    // w holds the transpose of the accumulated orthogonal transform, so every
    // inner loop walks a contiguous row.
    std::vector<double> w(a.values());
    auto W = [&](std::size_t r, std::size_t c) -> double& { return w[r * n + c]; };
    std::vector<double> d(n), e(n);

    // Householder reduction to tridiagonal form.
    for (std::size_t j = 0; j < n; ++j) d[j] = W(j, n - 1);
    for (std::size_t i = n - 1; i > 0; --i) {
        double scale = 0.0, h = 0.0;
        for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (std::size_t j = 0; j < i; ++j) {
                d[j] = W(j, i - 1);
                W(j, i) = 0.0;
                W(i, j) = 0.0;
            }
        } else {
            for (std::size_t k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0) g = -g;
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                W(i, j) = f;
                g = e[j] + W(j, j) * f;
                const double* col = &W(j, 0);
                for (std::size_t k = j + 1; k < i; ++k) {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                double* col = &W(j, 0);
                for (std::size_t k = j; k < i; ++k) col[k] -= (f * e[k] + g * d[k]);
                d[j] = W(j, i - 1);
                W(j, i) = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        W(i, n - 1) = W(i, i);
        W(i, i) = 1.0;
        const double h = d[i + 1];
        if (h != 0.0) {
            const double* vi = &W(i + 1, 0);
            for (std::size_t k = 0; k <= i; ++k) d[k] = vi[k] / h;
            for (std::size_t j = 0; j <= i; ++j) {
                double* vj = &W(j, 0);
                double g = 0.0;
                for (std::size_t k = 0; k <= i; ++k) g += vi[k] * vj[k];
                for (std::size_t k = 0; k <= i; ++k) vj[k] -= g * d[k];
            }
        }
        for (std::size_t k = 0; k <= i; ++k) W(i + 1, k) = 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = W(j, n - 1);
        W(j, n - 1) = 0.0;
    }
    W(n - 1, n - 1) = 1.0;
    e[0] = 0.0;

    // Implicit QL on the tridiagonal matrix.
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;
    double f = 0.0, tst1 = 0.0;
    constexpr double eps = 0x1.0p-52;
    constexpr int max_iter = 60;
    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        std::size_t m = l;
        while (m < n) {
            if (std::abs(e[m]) <= eps * tst1) break;
            ++m;
        }
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > max_iter) {
                    std::ostringstream os;
                    os << "symmetric_eigen_ql: no convergence for eigenvalue " << l << " after " << max_iter
                       << " iterations (residual off-diagonal " << std::abs(e[l]) << ")";
                    throw NumericError(os.str());
                }
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::size_t i = m; i-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    double* vi = &W(i, 0);
                    double* vi1 = &W(i + 1, 0);
                    for (std::size_t k = 0; k < n; ++k) {
                        const double t = vi1[k];
                        vi1[k] = s * vi[k] + c * t;
                        vi[k] = c * vi[k] - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
    return sorted_descending(d, w, n);
}

SymmetricEigen symmetric_eigen_jacobi(const Tensor& a, double tol, int max_sweeps) {
    check_square(a, "symmetric_eigen_jacobi");
    const std::size_t n = a.dim(0);
    if (n == 0) return {Tensor({0}), Tensor({0, 0})};
    if (!a.all_finite()) throw NumericError("symmetric_eigen_jacobi: matrix has non-finite entries");

    std::vector<double> m(a.values());
    // v holds eigenvectors as rows.
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    const double norm = frobenius_norm(a);
    const double target = tol * norm;

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i != j) s += m[i * n + j] * m[i * n + j];
            }
        }
        return std::sqrt(s);
    };

    double off = off_norm();
    int sweep = 0;
    while (off > target) {
        if (sweep++ >= max_sweeps) {
            std::ostringstream os;
            os << "symmetric_eigen_jacobi: off-diagonal norm " << off << " still above " << target << " after "
               << max_sweeps << " sweeps";
            throw NumericError(os.str());
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m[p * n + q];
                if (apq == 0.0) continue;
                const double theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = m[r * n + p], arq = m[r * n + q];
                    const double np = c * arp - s * arq;
                    const double nq = s * arp + c * arq;
                    m[r * n + p] = m[p * n + r] = np;
                    m[r * n + q] = m[q * n + r] = nq;
                }
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = m[q * n + p] = 0.0;
                double* vp = &v[p * n];
                double* vq = &v[q * n];
                for (std::size_t k = 0; k < n; ++k) {
                    const double x = vp[k], y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
            }
        }
        off = off_norm();
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = m[i * n + i];
    return sorted_descending(values, v, n);
}

NtkSpectrum eigendecompose(const KernelMatrix& kernel, EigenMethod method) {
    check_square(kernel.k, "eigendecompose");
    auto eig = method == EigenMethod::jacobi ? symmetric_eigen_jacobi(kernel.k) : symmetric_eigen_ql(kernel.k);
    return NtkSpectrum{std::move(eig.values), std::move(eig.vectors), kernel.grid};
}

double reconstruction_residual(const Tensor& k, const NtkSpectrum& spectrum) {
    const std::size_t n = spectrum.eigenvalues.size();
    Tensor scaled = spectrum.eigenvectors;  // U Λ
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scaled[i * n + j] *= spectrum.eigenvalues[j];
    }
    const Tensor rebuilt = matmul(scaled, transpose(spectrum.eigenvectors));
    double diff = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) diff += (k[i] - rebuilt[i]) * (k[i] - rebuilt[i]);
    const double norm = frobenius_norm(k);
    return norm == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / norm;
}

double orthonormality_error(const NtkSpectrum& spectrum) {
    const std::size_t n = spectrum.eigenvalues.size();
    const Tensor gram = matmul(transpose(spectrum.eigenvectors), spectrum.eigenvectors);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            worst = std::max(worst, std::abs(gram[i * n + j] - (i == j ? 1.0 : 0.0)));
        }
    }
    return worst;
}

DecayRatio decay_ratio(const NtkSpectrum& spectrum, std::size_t k) {
    const std::size_t n = spectrum.eigenvalues.size();
    if (k < 1 || k > n) {
        throw ParameterError("decay_ratio: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
    const double lk = spectrum.eigenvalues[k - 1];
    if (!(lk > 0.0)) return {std::numeric_limits<double>::infinity(), true};
    return {spectrum.eigenvalues[0] / lk, false};
}

double effective_rank(const NtkSpectrum& spectrum) {
    double total = 0.0;
    for (double l : spectrum.eigenvalues.data()) total += std::max(l, 0.0);
    if (!(total > 0.0)) throw ParameterError("effective_rank: spectrum has no positive eigenvalue");
    double entropy = 0.0;
    for (double l : spectrum.eigenvalues.data()) {
        const double p = std::max(l, 0.0) / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

double band_width(const KernelMatrix& kernel) {
    check_square(kernel.k, "band_width");
    const std::size_t n = kernel.k.dim(0);
    if (n == 0) throw ParameterError("band_width: empty kernel");
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diag = kernel.k[i * n + i];
        if (!(diag > 0.0)) {
            throw NumericError("band_width: diagonal entry " + std::to_string(i) + " is not positive");
        }
        const double threshold = 0.5 * diag;
        const double* row = kernel.k.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(row[j]) >= threshold) ++total;
        }
    }
    return static_cast<double>(total) / static_cast<double>(n);
}

namespace {

// Direct (non-fast) DFT of a real h×w image, separable over rows then
// columns, returning the uncentred power.
std::vector<double> dft_power(const double* img, std::size_t h, std::size_t w) {
    auto twiddles = [](std::size_t len) {
        std::vector<double> c(len), s(len);
        for (std::size_t k = 0; k < len; ++k) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
            c[k] = std::cos(angle);
            s[k] = std::sin(angle);
        }
        return std::pair{c, s};
    };
    const auto [cw, sw] = twiddles(w);
    const auto [ch, sh] = twiddles(h);

    std::vector<double> re(h * w, 0.0), im(h * w, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        const double* row = img + r * w;
        for (std::size_t kx = 0; kx < w; ++kx) {
            double sr = 0.0, si = 0.0;
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t idx = (kx * x) % w;
                sr += row[x] * cw[idx];
                si += row[x] * sw[idx];
            }
            re[r * w + kx] = sr;
            im[r * w + kx] = si;
        }
    }
    std::vector<double> power(h * w, 0.0);
    for (std::size_t kx = 0; kx < w; ++kx) {
        for (std::size_t ky = 0; ky < h; ++ky) {
            double sr = 0.0, si = 0.0;
            for (std::size_t y = 0; y < h; ++y) {
                const std::size_t idx = (ky * y) % h;
                const double a = re[y * w + kx], b = im[y * w + kx];
                sr += a * ch[idx] - b * sh[idx];
                si += a * sh[idx] + b * ch[idx];
            }
            power[ky * w + kx] = sr * sr + si * si;
        }
    }
    return power;
}

}  // namespace

Tensor eigvec_spectrum(const NtkSpectrum& spectrum, std::size_t index) {
    const std::size_t n = spectrum.eigenvalues.size();
    if (index >= n) {
        throw ParameterError("eigvec_spectrum: index " + std::to_string(index) + " out of range for " +
                             std::to_string(n) + " modes");
    }
    const std::size_t h = spectrum.grid.height, w = spectrum.grid.width;
    if (h * w != n) throw DimensionError("eigvec_spectrum: grid does not match the number of modes");
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = spectrum.eigenvectors[i * n + index];
    const auto power = dft_power(u.data(), h, w);
    Tensor centred({h, w});
    for (std::size_t ky = 0; ky < h; ++ky) {
        for (std::size_t kx = 0; kx < w; ++kx) {
            centred.at((ky + h / 2) % h, (kx + w / 2) % w) = power[ky * w + kx];
        }
    }
    return centred;
}

double freq_centroid(const Tensor& power) {
    if (power.rank() != 2) throw DimensionError("freq_centroid expects an h×w power image");
    const std::size_t h = power.dim(0), w = power.dim(1);
    double total = 0.0, weighted = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
        const double fy = static_cast<double>(r) - static_cast<double>(h / 2);
        for (std::size_t c = 0; c < w; ++c) {
            const double p = power.at(r, c);
            if (p < 0.0) throw ParameterError("freq_centroid: negative power");
            const double fx = static_cast<double>(c) - static_cast<double>(w / 2);
            total += p;
            weighted += p * std::sqrt(fx * fx + fy * fy);
        }
    }
    if (!(total > 0.0)) throw ParameterError("freq_centroid: power image is all zero");
    return weighted / total;
}

SpectralReport spectral_report(const KernelMatrix& kernel, const NtkSpectrum& spectrum,
                               const std::vector<std::size_t>& decay_ks) {
    SpectralReport report;
    const std::size_t n = spectrum.eigenvalues.size();
    for (auto k : decay_ks) {
        if (k <= n) {
            report.decay_ks.push_back(k);
            report.decay_ratios.push_back(decay_ratio(spectrum, k));
        }
    }
    report.effective_rank = effective_rank(spectrum);
    report.band_width = band_width(kernel);
    report.eigvec_freq_centroids = Tensor({n});
    for (std::size_t i = 0; i < n; ++i) {
        report.eigvec_freq_centroids[i] = freq_centroid(eigvec_spectrum(spectrum, i));
    }
    return report;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw ParameterError("spearman: need two equal-length samples");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace noiseinit
