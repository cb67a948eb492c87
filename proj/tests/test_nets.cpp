#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "doctest.h"
#include "noiseinit/adam.hpp"
#include "noiseinit/error.hpp"
#include "support.hpp"

using namespace noiseinit;
using testing::random_tensor;

namespace {

ParamVector random_params(const NetworkSpec& spec, std::uint64_t seed, double scale = 0.5) {
    auto p = ParamVector::zeros(spec);
    p.values = random_tensor(p.values.shape(), seed, -scale, scale);
    return p;
}

double fd_gradient_error(const NetworkSpec& spec, const ParamVector& params, const Tensor& input,
                         std::uint64_t seed) {
    const Tensor out = forward(spec, params, input);
    const Tensor g = random_tensor(out.shape(), seed);
    const ParamVector analytic = backward(spec, params, input, g);
    const Tensor numeric =
        testing::central_difference([&](const ParamVector& p) { return forward(spec, p, input); }, g, params);
    return testing::max_relative_error(analytic.values, numeric);
}

}  // namespace

TEST_CASE("spec validation") {
    CHECK_NOTHROW(validate(NetworkSpec{MlpSpec{}}));
    CHECK_NOTHROW(validate(NetworkSpec{CnnSpec{}}));
    MlpSpec m;
    m.hidden_dim = 0;
    CHECK_THROWS_AS(validate(NetworkSpec{m}), ParameterError);
    m = MlpSpec{};
    m.omega0 = 0.0;
    CHECK_THROWS_AS(validate(NetworkSpec{m}), ParameterError);

    CnnSpec c = testing::small_cnn();
    c.encoder_channels = {3, 0};
    CHECK_THROWS_AS(validate(NetworkSpec{c}), ParameterError);
    c = testing::small_cnn();
    c.decoder_channels = {4};
    CHECK_THROWS_AS(validate(NetworkSpec{c}), ParameterError);
    c = testing::small_cnn();
    c.height = 6;
    CHECK_THROWS_AS(validate(NetworkSpec{c}), ParameterError);
    c = testing::small_cnn();
    c.input_channels = 0;
    CHECK_THROWS_AS(validate(NetworkSpec{c}), ParameterError);
}

TEST_CASE("parameter layout") {
    const NetworkSpec mlp = testing::small_mlp();
    // 2→8→8→1: (8·2 + 8) + (8·8 + 8) + (8 + 1)
    CHECK(parameter_count(mlp) == 105);
    const auto layout = param_layout(mlp);
    CHECK(layout.front().name == "hidden0.weight");
    CHECK(layout.back().name == "head.bias");
    CHECK(parameter_count(NetworkSpec{LinearSpec{3}}) == 3);
    CHECK(spec_hash(mlp) == spec_hash(testing::small_mlp()));
    CHECK(spec_hash(mlp) != spec_hash(testing::small_mlp(9)));
}

TEST_CASE("flatten and unflatten round-trip bit-identically") {
    for (const NetworkSpec& spec : {NetworkSpec{testing::small_mlp()}, NetworkSpec{testing::small_cnn()}}) {
        const auto p = random_params(spec, 3);
        const auto blocks = p.unflatten();
        CHECK(blocks.size() == p.layout.size());
        const auto back = ParamVector::flatten(blocks, p.layout);
        CHECK(back.values == p.values);
    }
    const auto p = random_params(testing::small_mlp(), 4);
    auto blocks = p.unflatten();
    blocks.pop_back();
    CHECK_THROWS_AS(ParamVector::flatten(blocks, p.layout), DimensionError);
}

TEST_CASE("init_siren") {
    MlpSpec spec;
    spec.hidden_dim = 256;
    spec.num_hidden_layers = 3;
    spec.omega0 = 30.0;
    const double bound = siren_hidden_bound(256, 30.0);
    CHECK(bound == doctest::Approx(std::sqrt(6.0 / 256.0) / 30.0));
    CHECK(bound == doctest::Approx(0.00510).epsilon(1e-3));

    Rng a(11), b(11);
    const auto p = init_siren(spec, a);
    CHECK(init_siren(spec, b).values == p.values);

    for (const auto& blk : p.layout) {
        const auto s = p.slice(blk.name);
        const double worst = std::accumulate(s.begin(), s.end(), 0.0,
                                             [](double m, double v) { return std::max(m, std::abs(v)); });
        if (blk.name == "hidden0.weight") {
            CHECK(worst <= 0.5);
            CHECK(worst > 0.45);
        } else if (blk.shape.size() == 2) {
            CHECK(worst <= bound);
            CHECK(worst > 0.9 * bound);
        } else {
            CHECK(worst == 0.0);
        }
    }
}

TEST_CASE("init_cnn") {
    const CnnSpec spec = testing::small_cnn();
    Rng a(5), b(5);
    const auto p = init_cnn(spec, a);
    CHECK(init_cnn(spec, b).values == p.values);
    for (const auto& blk : p.layout) {
        const auto s = p.slice(blk.name);
        const double worst = std::accumulate(s.begin(), s.end(), 0.0,
                                             [](double m, double v) { return std::max(m, std::abs(v)); });
        if (blk.shape.size() == 4) {
            CHECK(worst <= kaiming_bound(blk.shape[1] * blk.shape[2] * blk.shape[3]));
            CHECK(worst > 0.0);
        } else {
            CHECK(worst == 0.0);
        }
    }
    CnnSpec bad = spec;
    bad.skip_channels = 0;
    Rng r(1);
    CHECK_THROWS_AS(init_cnn(bad, r), ParameterError);
}

TEST_CASE("forward on zero parameters") {
    const NetworkSpec mlp = testing::small_mlp();
    const Tensor coords = random_tensor({5, 2}, 1);
    const Tensor y = forward(mlp, ParamVector::zeros(mlp), coords);
    CHECK(y == Tensor({5, 1}));

    const NetworkSpec cnn = testing::small_cnn();
    const Tensor z = forward(cnn, ParamVector::zeros(cnn), random_tensor(input_shape(cnn), 2, 0.0, 0.1));
    CHECK(z.shape() == Shape{1, 8, 8});
    CHECK(std::all_of(z.data().begin(), z.data().end(), [](double v) { return v == 0.5; }));
}

TEST_CASE("forward matches a hand-evaluated sine chain") {
    MlpSpec spec;
    spec.hidden_dim = 2;
    spec.num_hidden_layers = 1;
    spec.omega0 = 30.0;
    auto p = ParamVector::zeros(spec);
    const double w[4] = {0.1, -0.2, 0.05, 0.3}, b[2] = {0.01, -0.02}, v[2] = {0.7, -1.1}, c = 0.25;
    std::copy(w, w + 4, p.slice("hidden0.weight").begin());
    std::copy(b, b + 2, p.slice("hidden0.bias").begin());
    std::copy(v, v + 2, p.slice("head.weight").begin());
    p.slice("head.bias")[0] = c;

    const double x0 = 0.5, x1 = -0.5;
    const double h0 = std::sin(30.0 * (0.1 * x0 - 0.2 * x1 + 0.01));
    const double h1 = std::sin(30.0 * (0.05 * x0 + 0.3 * x1 - 0.02));
    const double expected = 0.7 * h0 - 1.1 * h1 + 0.25;
    const Tensor y = forward(spec, p, Tensor::matrix({{x0, x1}}));
    CHECK(y[0] == doctest::Approx(expected).epsilon(1e-14));

    CHECK_THROWS_AS(forward(spec, p, Tensor::matrix({{1.0, 2.0, 3.0}})), DimensionError);
}

TEST_CASE("forward is deterministic") {
    const NetworkSpec cnn = testing::small_cnn();
    const auto p = random_params(cnn, 8);
    const Tensor in = random_tensor(input_shape(cnn), 9);
    CHECK(forward(cnn, p, in) == forward(cnn, p, in));
}

TEST_CASE("backward matches central differences") {
    SUBCASE("sine MLP 2-8-8-1") {
        const NetworkSpec spec = testing::small_mlp();
        Rng rng(21);
        CHECK(fd_gradient_error(spec, init_params(spec, rng), random_tensor({6, 2}, 22), 23) < 1e-6);
    }
    SUBCASE("sine MLP with random biases and two outputs") {
        MlpSpec m = testing::small_mlp();
        m.out_dim = 2;
        m.omega0 = 3.0;
        const NetworkSpec spec = m;
        CHECK(fd_gradient_error(spec, random_params(spec, 24), random_tensor({4, 2}, 25), 26) < 1e-6);
    }
    SUBCASE("identity MLP") {
        MlpSpec m = testing::small_mlp();
        m.activation = Activation::identity;
        const NetworkSpec spec = m;
        CHECK(fd_gradient_error(spec, random_params(spec, 27), random_tensor({4, 2}, 28), 29) < 1e-6);
    }
    SUBCASE("CNN on an 8x8 input") {
        const NetworkSpec spec = testing::small_cnn();
        Rng rng(30);
        CHECK(fd_gradient_error(spec, init_params(spec, rng), random_tensor(input_shape(spec), 31, 0.0, 1.0), 32) <
              1e-6);
    }
}

TEST_CASE("backward with zero cotangent is zero") {
    const NetworkSpec spec = testing::small_cnn();
    const auto p = random_params(spec, 40);
    const Tensor in = random_tensor(input_shape(spec), 41);
    const auto g = backward(spec, p, in, Tensor({1, 8, 8}));
    CHECK(g.values == Tensor(p.values.shape()));
    CHECK_THROWS_AS(backward(spec, p, in, Tensor({1, 4, 4})), DimensionError);
}

TEST_CASE("backward on linear models matches the least-squares gradient") {
    SUBCASE("f = theta^T x") {
        const NetworkSpec spec = LinearSpec{3};
        const auto p = random_params(spec, 50);
        const Tensor x = random_tensor({7, 3}, 51), y = random_tensor({7, 1}, 52);
        const Tensor r = forward(spec, p, x);
        Tensor cot({7, 1});
        for (std::size_t i = 0; i < 7; ++i) cot[i] = 2.0 * (r[i] - y[i]);
        const auto g = backward(spec, p, x, cot);
        // ∇θ Σ (θᵀx_i − y_i)² = 2 Xᵀ(Xθ − y)
        for (std::size_t j = 0; j < 3; ++j) {
            double expected = 0.0;
            for (std::size_t i = 0; i < 7; ++i) {
                double pred = 0.0;
                for (std::size_t t = 0; t < 3; ++t) pred += x.at(i, t) * p.values[t];
                expected += 2.0 * (pred - y[i]) * x.at(i, j);
            }
            CHECK(g.values[j] == doctest::Approx(expected).epsilon(1e-13));
        }
    }
    SUBCASE("one identity hidden layer") {
        MlpSpec m = testing::small_mlp(3, 1);
        m.activation = Activation::identity;
        const NetworkSpec spec = m;
        const auto p = random_params(spec, 53);
        const Tensor x = random_tensor({5, 2}, 54), y = random_tensor({5, 1}, 55);
        const Tensor w = Tensor(Shape{3, 2}, std::vector<double>(p.slice("hidden0.weight").begin(),
                                                                  p.slice("hidden0.weight").end()));
        const auto b = p.slice("hidden0.bias");
        const auto v = p.slice("head.weight");
        const double c = p.slice("head.bias")[0];

        Tensor hidden({5, 3});
        Tensor resid({5, 1});
        for (std::size_t i = 0; i < 5; ++i) {
            double f = c;
            for (std::size_t u = 0; u < 3; ++u) {
                hidden.at(i, u) = w.at(u, 0) * x.at(i, 0) + w.at(u, 1) * x.at(i, 1) + b[u];
                f += v[u] * hidden.at(i, u);
            }
            resid[i] = 2.0 * (f - y[i]);
        }
        const auto g = backward(spec, p, x, resid);
        for (std::size_t u = 0; u < 3; ++u) {
            double gv = 0.0, gb = 0.0, gw0 = 0.0, gw1 = 0.0;
            for (std::size_t i = 0; i < 5; ++i) {
                gv += resid[i] * hidden.at(i, u);
                gb += resid[i] * v[u];
                gw0 += resid[i] * v[u] * x.at(i, 0);
                gw1 += resid[i] * v[u] * x.at(i, 1);
            }
            CHECK(g.slice("head.weight")[u] == doctest::Approx(gv).epsilon(1e-13));
            CHECK(g.slice("hidden0.bias")[u] == doctest::Approx(gb).epsilon(1e-13));
            CHECK(g.slice("hidden0.weight")[2 * u] == doctest::Approx(gw0).epsilon(1e-13));
            CHECK(g.slice("hidden0.weight")[2 * u + 1] == doctest::Approx(gw1).epsilon(1e-13));
        }
        double gc = 0.0;
        for (std::size_t i = 0; i < 5; ++i) gc += resid[i];
        CHECK(g.slice("head.bias")[0] == doctest::Approx(gc).epsilon(1e-13));
    }
}

TEST_CASE("jacobian_row") {
    const NetworkSpec spec = testing::small_mlp();
    Rng rng(60);
    const auto p = init_params(spec, rng);
    const Tensor x = Tensor::matrix({{0.3, -0.7}});
    const Tensor row = jacobian_row(spec, p, x);
    CHECK(row == backward(spec, p, x, Tensor::full({1, 1}, 1.0)).values);

    const Tensor numeric = testing::central_difference([&](const ParamVector& q) { return forward(spec, q, x); },
                                                       Tensor::full({1, 1}, 1.0), p);
    CHECK(testing::max_relative_error(row, numeric) < 1e-6);

    const NetworkSpec lin = LinearSpec{3};
    const Tensor xl = Tensor::vector({1.5, -2.0, 0.25});
    CHECK(jacobian_row(lin, random_params(lin, 61), xl) == xl);

    MlpSpec two = testing::small_mlp();
    two.out_dim = 2;
    Rng r2(62);
    CHECK_THROWS_AS(jacobian_row(two, init_siren(two, r2), x), UnsupportedError);
}

TEST_CASE("batched jacobian and its factors") {
    const NetworkSpec spec = testing::small_mlp();
    Rng rng(63);
    const auto p = init_params(spec, rng);
    const Tensor probes = random_tensor({6, 2}, 64);
    const Tensor jac = jacobian(spec, p, probes);
    CHECK(jac.shape() == Shape{6, parameter_count(spec)});
    for (std::size_t i = 0; i < 6; ++i) {
        const Tensor row = jacobian_row(spec, p, Tensor::matrix({{probes.at(i, 0), probes.at(i, 1)}}));
        for (std::size_t j = 0; j < row.size(); ++j) CHECK(jac.at(i, j) == doctest::Approx(row[j]).epsilon(1e-14));
    }

    // Reassemble J from its per-layer factors.
    const auto factors = jacobian_factors(spec, p, probes);
    CHECK(factors.size() == 3);
    std::size_t col = 0;
    double worst = 0.0;
    for (const auto& f : factors) {
        const std::size_t out = f.deltas.dim(1), in = f.inputs.dim(1);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t r = 0; r < out; ++r)
                for (std::size_t c = 0; c < in; ++c)
                    worst = std::max(worst, std::abs(jac.at(i, col + r * in + c) - f.deltas.at(i, r) * f.inputs.at(i, c)));
            if (f.has_bias)
                for (std::size_t r = 0; r < out; ++r)
                    worst = std::max(worst, std::abs(jac.at(i, col + out * in + r) - f.deltas.at(i, r)));
        }
        col += out * in + (f.has_bias ? out : 0);
    }
    CHECK(col == parameter_count(spec));
    CHECK(worst < 1e-14);

    CHECK_THROWS_AS(jacobian_factors(testing::small_cnn(), random_params(testing::small_cnn(), 1),
                                     random_tensor(input_shape(testing::small_cnn()), 2)),
                    UnsupportedError);
}

TEST_CASE("adam_step") {
    const NetworkSpec spec = LinearSpec{1};
    auto params = ParamVector::zeros(spec);

    SUBCASE("zero gradient leaves parameters and advances t") {
        params.values[0] = 0.75;
        auto [s, p] = adam_step(AdamState::fresh(1, {0.01}), params, ParamVector::zeros(spec));
        CHECK(p.values == params.values);
        CHECK(s.t == 1);
    }
    SUBCASE("first step is -lr for a unit gradient") {
        auto g = ParamVector::zeros(spec);
        g.values[0] = 1.0;
        auto [s, p] = adam_step(AdamState::fresh(1, {0.01}), params, g);
        CHECK(p.values[0] == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-15));
        CHECK(s.m[0] == doctest::Approx(0.1));
        CHECK(s.v[0] == doctest::Approx(0.001));
    }
    SUBCASE("lr 0 is bit-identical") {
        params.values[0] = 0.123;
        auto g = ParamVector::zeros(spec);
        g.values[0] = 3.0;
        AdamState s = AdamState::fresh(1, {0.0});
        for (int i = 0; i < 3; ++i) std::tie(s, params) = adam_step(s, params, g);
        CHECK(params.values[0] == 0.123);
        CHECK(s.t == 3);
    }
    SUBCASE("five steps on theta^2") {
        // Reference stepped independently in double precision.
        const double expected[5] = {0.9000000005, 0.8004122286917928, 0.7015862729460303, 0.603939060573746,
                                    0.507963659264342};
        params.values[0] = 1.0;
        AdamState s = AdamState::fresh(1, {0.1});
        for (double want : expected) {
            auto g = ParamVector::zeros(spec);
            g.values[0] = 2.0 * params.values[0];
            std::tie(s, params) = adam_step(s, params, g);
            CHECK(params.values[0] == doctest::Approx(want).epsilon(1e-14));
            CHECK(s.v[0] >= 0.0);
        }
        CHECK(s.t == 5);
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(adam_step(AdamState::fresh(2, {0.1}), params, ParamVector::zeros(spec)), DimensionError);
    }
}
