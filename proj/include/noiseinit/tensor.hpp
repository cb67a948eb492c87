#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace noiseinit {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

// Dense row-major array of doubles. A plain value type: copies are deep and
// no operation mutates its arguments.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor full(Shape shape, double value);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t ch, std::size_t r, std::size_t c) const {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }
    double& at(std::size_t ch, std::size_t r, std::size_t c) {
        return data_[(ch * shape_[1] + r) * shape_[2] + c];
    }

    Tensor reshaped(Shape shape) const;
    bool all_finite() const noexcept;

    // Bitwise comparison of shape and payload.
    friend bool operator==(const Tensor& a, const Tensor& b) noexcept;

private:
    Shape shape_{0};
    std::vector<double> data_;
};

enum class Op { none, transpose };

// Row-major C[m×n] (+)= op(A)·op(B) with op(A) m×k and op(B) k×n; leading
// dimensions refer to the stored (untransposed) arrays. Backed by Eigen's
// blocked product kernel.
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda,
          const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate,
          Op op_a = Op::none, Op op_b = Op::none);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Cross-correlation (no kernel flip) of a C×H×W input with F×C×k×k kernels.
// Output is F×H'×W' with H' = (H + 2·padding − k) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

struct Conv2dGrads {
    Tensor input;
    Tensor kernels;
};

// Adjoint of conv2d: gradients of <conv2d(input, kernels), output_grad>.
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                            const Tensor& output_grad, int stride, int padding);

// Mean over non-overlapping factor×factor blocks of every channel. Accepts
// C×H×W or H×W input.
Tensor avg_pool(const Tensor& input, int factor);
// Adjoint of avg_pool: spreads each gradient entry over its block, scaled by 1/factor².
Tensor avg_pool_backward(const Tensor& output_grad, int factor);

// Nearest-neighbour upsampling of a C×H×W tensor, and its adjoint (block sums).
Tensor upsample_nearest(const Tensor& input, int factor);
Tensor upsample_nearest_backward(const Tensor& output_grad, int factor);

double frobenius_norm(const Tensor& a);
double max_abs(const Tensor& a);
double mean(const Tensor& a);

}  // namespace noiseinit
