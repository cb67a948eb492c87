#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "noiseinit/error.hpp"
#include "support.hpp"

using namespace noiseinit;
using testing::random_tensor;

namespace {

Tensor matmul_loops(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
            c.at(i, j) = s;
        }
    return c;
}

Tensor conv_loops(const Tensor& x, const Tensor& w, int stride, int pad) {
    const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2), f = w.dim(0), k = w.dim(2);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    Tensor out({f, oh, ow});
    for (std::size_t o = 0; o < f; ++o)
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t q = 0; q < ow; ++q) {
                double s = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < k; ++j) {
                            const long y = static_cast<long>(r * stride + i) - pad;
                            const long xx = static_cast<long>(q * stride + j) - pad;
                            if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                            s += x.at(ch, y, xx) * w[((o * c + ch) * k + i) * k + j];
                        }
                out.at(o, r, q) = s;
            }
    return out;
}

double max_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("tensor construction validates shape") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    const Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.at(1, 2) == 6.0);
    CHECK_THROWS_AS(t.dim(2), DimensionError);
    CHECK(Tensor::full({3}, 2.5)[2] == 2.5);
}

TEST_CASE("matmul") {
    const Tensor id = Tensor::matrix({{1, 0}, {0, 1}});
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(matmul(id, a) == a);
    CHECK(matmul(a, Tensor::matrix({{5}, {6}})) == Tensor::matrix({{17}, {39}}));

    const Tensor x = random_tensor({8, 8}, 1), y = random_tensor({8, 8}, 2);
    CHECK(max_diff(matmul(x, y), matmul_loops(x, y)) < 1e-14);

    const Tensor p = random_tensor({37, 300}, 3), q = random_tensor({300, 45}, 4);
    CHECK(max_diff(matmul(p, q), matmul_loops(p, q)) < 1e-12);

    try {
        matmul(Tensor({2, 3}), Tensor({2, 3}));
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul is associative on random 4x4 triples") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor a = random_tensor({4, 4}, 10 * s), b = random_tensor({4, 4}, 10 * s + 1),
                     c = random_tensor({4, 4}, 10 * s + 2);
        const Tensor l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
        Tensor d = l;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= r[i];
        CHECK(frobenius_norm(d) / frobenius_norm(l) < 1e-10);
    }
}

TEST_CASE("gemm transpose flags") {
    const Tensor a = random_tensor({5, 7}, 11), b = random_tensor({6, 7}, 12);
    Tensor c({5, 6});
    gemm(5, 6, 7, a.data().data(), 7, b.data().data(), 7, c.data().data(), 6, false, Op::none, Op::transpose);
    CHECK(max_diff(c, matmul_loops(a, transpose(b))) < 1e-14);
    Tensor d({7, 7});
    gemm(7, 7, 5, a.data().data(), 7, a.data().data(), 7, d.data().data(), 7, false, Op::transpose);
    CHECK(max_diff(d, matmul_loops(transpose(a), a)) < 1e-14);
}

TEST_CASE("conv2d") {
    SUBCASE("zero kernel gives zeros") {
        const Tensor out = conv2d(Tensor::full({1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}), 1, 1);
        CHECK(out == Tensor({1, 3, 3}));
    }
    SUBCASE("delta kernel is the identity") {
        Tensor k({1, 1, 3, 3});
        k[4] = 1.0;
        const Tensor x = random_tensor({1, 6, 5}, 5);
        CHECK(conv2d(x, k, 1, 1) == x);
    }
    SUBCASE("matches the direct loop") {
        const Tensor x = random_tensor({2, 5, 5}, 6), w = random_tensor({3, 2, 3, 3}, 7);
        CHECK(max_diff(conv2d(x, w, 1, 1), conv_loops(x, w, 1, 1)) < 1e-14);
        CHECK(max_diff(conv2d(x, w, 2, 1), conv_loops(x, w, 2, 1)) < 1e-14);
        CHECK(max_diff(conv2d(x, w, 1, 0), conv_loops(x, w, 1, 0)) < 1e-14);
        const Tensor p = random_tensor({3, 2, 1, 1}, 8);
        CHECK(max_diff(conv2d(x, p, 1, 0), conv_loops(x, p, 1, 0)) < 1e-14);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), 1, 0), DimensionError);
        CHECK_THROWS_AS(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), 3, 1), ParameterError);
        CHECK_THROWS_AS(conv2d(Tensor({2, 4, 4}), Tensor({1, 1, 3, 3}), 1, 1), DimensionError);
    }
}

TEST_CASE("conv2d_backward is the adjoint") {
    const Tensor x = random_tensor({2, 6, 6}, 20), w = random_tensor({3, 2, 3, 3}, 21);
    for (int stride : {1, 2}) {
        const Tensor y = conv2d(x, w, stride, 1);
        const Tensor g = random_tensor(y.shape(), 22);
        const auto grads = conv2d_backward(x, w, g, stride, 1);
        // <conv(x, w), g> is bilinear: both adjoints reproduce it.
        const double lhs = testing::dot(y, g);
        CHECK(testing::dot(grads.input, x) == doctest::Approx(lhs).epsilon(1e-12));
        CHECK(testing::dot(grads.kernels, w) == doctest::Approx(lhs).epsilon(1e-12));
    }
}

TEST_CASE("avg_pool") {
    const Tensor flat = avg_pool(Tensor::full({2, 8, 8}, 0.3), 4);
    CHECK(flat.shape() == Shape{2, 2, 2});
    CHECK(max_diff(flat, Tensor::full({2, 2, 2}, 0.3)) < 1e-15);
    CHECK(avg_pool(Tensor::full({1, 4, 4}, 0.25), 2) == Tensor::full({1, 2, 2}, 0.25));
    CHECK(avg_pool(Tensor::matrix({{1, 2}, {3, 4}}), 2) == Tensor::matrix({{2.5}}));
    CHECK_THROWS_AS(avg_pool(Tensor({1, 6, 6}), 4), DimensionError);

    const Tensor x = random_tensor({1, 8, 8}, 30);
    const Tensor p = avg_pool(x, 4);
    for (std::size_t br = 0; br < 2; ++br)
        for (std::size_t bc = 0; bc < 2; ++bc) {
            double s = 0.0;
            for (std::size_t r = 0; r < 4; ++r)
                for (std::size_t c = 0; c < 4; ++c) s += x.at(0, 4 * br + r, 4 * bc + c);
            CHECK(std::abs(p.at(0, br, bc) - s / 16.0) < 1e-15);
        }
    CHECK(std::abs(mean(p) - mean(x)) < 1e-12);

    const Tensor g = random_tensor(p.shape(), 31);
    CHECK(testing::dot(avg_pool_backward(g, 4), x) == doctest::Approx(testing::dot(g, p)).epsilon(1e-13));
    CHECK(avg_pool(x, 1) == x);
}

TEST_CASE("upsample_nearest and its adjoint") {
    const Tensor x = Tensor({1, 1, 2}, {1.0, 2.0});
    CHECK(upsample_nearest(x, 2) == Tensor({1, 2, 4}, {1, 1, 2, 2, 1, 1, 2, 2}));
    const Tensor y = random_tensor({2, 3, 3}, 40);
    const Tensor g = random_tensor({2, 6, 6}, 41);
    CHECK(testing::dot(upsample_nearest(y, 2), g) ==
          doctest::Approx(testing::dot(y, upsample_nearest_backward(g, 2))).epsilon(1e-13));
}

TEST_CASE("sample_gaussian") {
    Rng rng(7);
    const Tensor s = sample_gaussian(rng, {100000}, 0.0, 1.0);
    const double m = mean(s);
    double var = 0.0;
    for (double v : s.data()) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(s.size()));
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(sd - 1.0) < 0.01);

    Rng a(42), b(42);
    CHECK(sample_gaussian(a, {4}, 0.0, 1.0) == sample_gaussian(b, {4}, 0.0, 1.0));

    CHECK_THROWS_AS(sample_gaussian(rng, {3}, 0.0, 0.0), ParameterError);
    CHECK_THROWS_AS(sample_gaussian(rng, {3}, 0.0, -1.0), ParameterError);
}

TEST_CASE("sample_gaussian passes a Kolmogorov-Smirnov check") {
    Rng rng(123);
    const Tensor s = sample_gaussian(rng, {10000}, 0.0, 1.0);
    std::vector<double> v(s.values());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-v[i] / std::sqrt(2.0));
        d = std::max({d, std::abs(cdf - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - cdf)});
    }
    CHECK(d < 0.02);
}

TEST_CASE("sample_uniform") {
    Rng rng(9);
    const Tensor s = sample_uniform(rng, {100000}, 0.0, 1.0);
    CHECK(std::all_of(s.data().begin(), s.data().end(), [](double v) { return v >= 0.0 && v < 1.0; }));
    CHECK(std::abs(mean(s) - 0.5) < 0.005);

    const double lo = 2.0, hi = std::nextafter(2.0, 3.0);
    const Tensor narrow = sample_uniform(rng, {1000}, lo, hi);
    CHECK(std::all_of(narrow.data().begin(), narrow.data().end(), [&](double v) { return v == lo; }));

    CHECK_THROWS_AS(sample_uniform(rng, {2}, 1.0, 1.0), ParameterError);
    CHECK_THROWS_AS(sample_uniform(rng, {2}, 1.0, 0.0), ParameterError);
}

TEST_CASE("sampling is a pure function of seed and call sequence") {
    auto draw = [](std::uint64_t seed) {
        Rng r(seed);
        Tensor a = sample_uniform(r, {64}, -1.0, 1.0);
        Tensor b = sample_gaussian(r, {65}, 0.5, 2.0);
        return std::make_pair(a, b);
    };
    CHECK(draw(5) == draw(5));
    CHECK(!(draw(5).first == draw(6).first));
    CHECK(derive_seed(1, "init") != derive_seed(1, "noise_target"));
    CHECK(derive_seed(1, "init") != derive_seed(2, "init"));
    CHECK(derive_seed(1, "init") == derive_seed(1, "init"));
}

TEST_CASE("rng stream is pinned") {
    // Frozen first outputs: guards against accidental changes to the
    // generator or its seeding.
    Rng r(0);
    const std::uint64_t first = r.next_u64();
    Rng again(0);
    CHECK(again.next_u64() == first);
    CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}
