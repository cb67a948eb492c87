#include "noiseinit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Core>

#include "noiseinit/error.hpp"

namespace noiseinit {

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + to_string(shape_) + " holds " +
                             std::to_string(element_count(shape_)) + " elements but data has " +
                             std::to_string(data_.size()));
    }
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
    }
    return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) noexcept {
    if (a.shape_ != b.shape_) return false;
    return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), b.data_.end(),
                      [](double x, double y) {
                          return std::memcmp(&x, &y, sizeof(double)) == 0;
                      });
}

void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda,
          const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate, Op op_a, Op op_b) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) {
            for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
        }
        return;
    }
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Stride = Eigen::OuterStride<>;
    using ConstMap = Eigen::Map<const RowMajor, 0, Stride>;
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    const bool ta = op_a == Op::transpose, tb = op_b == Op::transpose;
    ConstMap am(a, ta ? ei(k) : ei(m), ta ? ei(m) : ei(k), Stride(ei(lda)));
    ConstMap bm(b, tb ? ei(n) : ei(k), tb ? ei(k) : ei(n), Stride(ei(ldb)));
    Eigen::Map<RowMajor, 0, Stride> cm(c, ei(m), ei(n), Stride(ei(ldc)));
    const auto run = [&](const auto& lhs, const auto& rhs) {
        if (accumulate) {
            cm.noalias() += lhs * rhs;
        } else {
            cm.noalias() = lhs * rhs;
        }
    };
    if (ta && tb) {
        run(am.transpose(), bm.transpose());
    } else if (ta) {
        run(am.transpose(), bm);
    } else if (tb) {
        run(am, bm.transpose());
    } else {
        run(am, bm);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    gemm(m, n, k, a.data().data(), k, b.data().data(), n, c.data().data(), n, false);
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + to_string(a.shape()));
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor t({c, r});
    constexpr std::size_t tile = 32;
    for (std::size_t i0 = 0; i0 < r; i0 += tile) {
        for (std::size_t j0 = 0; j0 < c; j0 += tile) {
            const std::size_t i1 = std::min(r, i0 + tile), j1 = std::min(c, j0 + tile);
            for (std::size_t i = i0; i < i1; ++i) {
                for (std::size_t j = j0; j < j1; ++j) t[j * r + i] = a[i * c + j];
            }
        }
    }
    return t;
}

namespace {

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t filters, ksize;
    std::size_t out_h, out_w;
    int stride, padding;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.rank() != 3) throw DimensionError("conv2d input must be C×H×W, got " + to_string(input.shape()));
    if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
        throw DimensionError("conv2d kernels must be F×C×k×k, got " + to_string(kernels.shape()));
    }
    if (kernels.dim(1) != input.dim(0)) {
        throw DimensionError("conv2d channel mismatch: input " + to_string(input.shape()) + ", kernels " +
                             to_string(kernels.shape()));
    }
    if (stride != 1 && stride != 2) throw ParameterError("conv2d stride must be 1 or 2, got " + std::to_string(stride));
    if (padding < 0) throw ParameterError("conv2d padding must be non-negative");
    ConvGeometry g{};
    g.channels = input.dim(0);
    g.height = input.dim(1);
    g.width = input.dim(2);
    g.filters = kernels.dim(0);
    g.ksize = kernels.dim(2);
    g.stride = stride;
    g.padding = padding;
    const std::size_t ph = g.height + 2 * static_cast<std::size_t>(padding);
    const std::size_t pw = g.width + 2 * static_cast<std::size_t>(padding);
    if (g.ksize > ph || g.ksize > pw) {
        throw DimensionError("conv2d kernel " + to_string(kernels.shape()) + " larger than padded input " +
                             to_string(input.shape()));
    }
    g.out_h = (ph - g.ksize) / static_cast<std::size_t>(stride) + 1;
    g.out_w = (pw - g.ksize) / static_cast<std::size_t>(stride) + 1;
    return g;
}

// cols[(c·k + ki)·k + kj][oy·out_w + ox] = padded input sample.
std::vector<double> im2col(const Tensor& input, const ConvGeometry& g) {
    const std::size_t ncol = g.out_h * g.out_w;
    std::vector<double> cols(g.channels * g.ksize * g.ksize * ncol, 0.0);
    const auto in = input.data();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.ksize; ++ki) {
            for (std::size_t kj = 0; kj < g.ksize; ++kj) {
                double* dst = cols.data() + ((c * g.ksize + ki) * g.ksize + kj) * ncol;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - g.padding;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    const double* src = in.data() + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - g.padding;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        dst[oy * g.out_w + ox] = src[ix];
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_accumulate(const std::vector<double>& cols, const ConvGeometry& g, Tensor& input_grad) {
    const std::size_t ncol = g.out_h * g.out_w;
    auto out = input_grad.data();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.ksize; ++ki) {
            for (std::size_t kj = 0; kj < g.ksize; ++kj) {
                const double* src = cols.data() + ((c * g.ksize + ki) * g.ksize + kj) * ncol;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - g.padding;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    double* dst = out.data() + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - g.padding;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        dst[ix] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    const auto g = conv_geometry(input, kernels, stride, padding);
    const std::size_t ncol = g.out_h * g.out_w;
    const std::size_t depth = g.channels * g.ksize * g.ksize;
    Tensor out({g.filters, g.out_h, g.out_w});
    if (g.ksize == 1 && stride == 1 && padding == 0) {
        gemm(g.filters, ncol, depth, kernels.data().data(), depth, input.data().data(), ncol,
             out.data().data(), ncol, false);
        return out;
    }
    const auto cols = im2col(input, g);
    gemm(g.filters, ncol, depth, kernels.data().data(), depth, cols.data(), ncol, out.data().data(), ncol, false);
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& output_grad,
                            int stride, int padding) {
    const auto g = conv_geometry(input, kernels, stride, padding);
    if (output_grad.shape() != Shape{g.filters, g.out_h, g.out_w}) {
        throw DimensionError("conv2d_backward output_grad " + to_string(output_grad.shape()) + " does not match " +
                             to_string(Shape{g.filters, g.out_h, g.out_w}));
    }
    const std::size_t ncol = g.out_h * g.out_w;
    const std::size_t depth = g.channels * g.ksize * g.ksize;
    const bool pointwise = g.ksize == 1 && stride == 1 && padding == 0;

    std::vector<double> cols = pointwise ? input.values() : im2col(input, g);
    // dK = dOut · colsᵀ
    Conv2dGrads grads{Tensor(input.shape()), Tensor(kernels.shape())};
    gemm(g.filters, depth, ncol, output_grad.data().data(), ncol, cols.data(), ncol, grads.kernels.data().data(),
         depth, false, Op::none, Op::transpose);

    // dcols = Kᵀ · dOut
    std::vector<double> dcols(depth * ncol);
    gemm(depth, ncol, g.filters, kernels.data().data(), depth, output_grad.data().data(), ncol, dcols.data(), ncol,
         false, Op::transpose);
    if (pointwise) {
        grads.input = Tensor(input.shape(), std::move(dcols));
    } else {
        col2im_accumulate(dcols, g, grads.input);
    }
    return grads;
}

namespace {

struct Planes {
    std::size_t channels, height, width;
};

Planes planes_of(const Tensor& t, const char* op) {
    if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
    if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
    throw DimensionError(std::string(op) + " expects H×W or C×H×W, got " + to_string(t.shape()));
}

Shape planes_shape(const Tensor& like, std::size_t c, std::size_t h, std::size_t w) {
    if (like.rank() == 2) return {h, w};
    return {c, h, w};
}

}  // namespace

Tensor avg_pool(const Tensor& input, int factor) {
    if (factor < 1) throw ParameterError("avg_pool factor must be >= 1");
    const auto p = planes_of(input, "avg_pool");
    const auto f = static_cast<std::size_t>(factor);
    if (p.height % f || p.width % f) {
        throw DimensionError("avg_pool factor " + std::to_string(factor) + " does not divide " +
                             to_string(input.shape()));
    }
    const std::size_t oh = p.height / f, ow = p.width / f;
    Tensor out(planes_shape(input, p.channels, oh, ow));
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double sum = 0.0;
                for (std::size_t dy = 0; dy < f; ++dy) {
                    const std::size_t row = (c * p.height + oy * f + dy) * p.width + ox * f;
                    for (std::size_t dx = 0; dx < f; ++dx) sum += input[row + dx];
                }
                out[(c * oh + oy) * ow + ox] = sum * inv;
            }
        }
    }
    return out;
}

Tensor avg_pool_backward(const Tensor& output_grad, int factor) {
    if (factor < 1) throw ParameterError("avg_pool factor must be >= 1");
    const auto p = planes_of(output_grad, "avg_pool_backward");
    const auto f = static_cast<std::size_t>(factor);
    const std::size_t h = p.height * f, w = p.width * f;
    Tensor out(planes_shape(output_grad, p.channels, h, w));
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                out[(c * h + y) * w + x] = output_grad[(c * p.height + y / f) * p.width + x / f] * inv;
            }
        }
    }
    return out;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
    if (factor < 1) throw ParameterError("upsample factor must be >= 1");
    const auto p = planes_of(input, "upsample_nearest");
    const auto f = static_cast<std::size_t>(factor);
    const std::size_t h = p.height * f, w = p.width * f;
    Tensor out(planes_shape(input, p.channels, h, w));
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            const double* src = input.data().data() + (c * p.height + y / f) * p.width;
            double* dst = out.data().data() + (c * h + y) * w;
            for (std::size_t x = 0; x < w; ++x) dst[x] = src[x / f];
        }
    }
    return out;
}

Tensor upsample_nearest_backward(const Tensor& output_grad, int factor) {
    if (factor < 1) throw ParameterError("upsample factor must be >= 1");
    const auto p = planes_of(output_grad, "upsample_nearest_backward");
    const auto f = static_cast<std::size_t>(factor);
    if (p.height % f || p.width % f) {
        throw DimensionError("upsample gradient " + to_string(output_grad.shape()) + " not divisible by factor");
    }
    const std::size_t oh = p.height / f, ow = p.width / f;
    Tensor out(planes_shape(output_grad, p.channels, oh, ow));
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t y = 0; y < p.height; ++y) {
            for (std::size_t x = 0; x < p.width; ++x) {
                out[(c * oh + y / f) * ow + x / f] += output_grad[(c * p.height + y) * p.width + x];
            }
        }
    }
    return out;
}

double frobenius_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double mean(const Tensor& a) {
    if (a.empty()) return 0.0;
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s / static_cast<double>(a.size());
}

}  // namespace noiseinit
