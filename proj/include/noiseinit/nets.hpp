#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "noiseinit/rng.hpp"
#include "noiseinit/tensor.hpp"

namespace noiseinit {

enum class Activation { sine, identity };

// Coordinate MLP. `num_hidden_layers` counts the activated layers, the first
// of which consumes the coordinates; a linear head follows. A sine layer
// computes sin(omega0 · (W h + b)); an identity layer computes W h + b.
struct MlpSpec {
    std::size_t in_dim = 2;
    std::size_t hidden_dim = 256;
    std::size_t num_hidden_layers = 3;
    std::size_t out_dim = 1;
    double omega0 = 30.0;
    Activation activation = Activation::sine;
};

// Hourglass conv net with skip connections:
//   encoder level l: 3×3 stride-2 conv + leaky ReLU
//   decoder stage j: nearest ×2 upsample, concat 1×1-conv skip from the
//                    matching encoder level, 3×3 conv + leaky ReLU
//   head: 1×1 conv + sigmoid
struct CnnSpec {
    std::size_t input_channels = 8;
    std::size_t height = 64;
    std::size_t width = 64;
    std::vector<std::size_t> encoder_channels{16, 32};
    std::vector<std::size_t> decoder_channels{32, 16};
    std::size_t skip_channels = 4;
    std::size_t output_channels = 1;
    double leaky_slope = 0.1;
};

// f(x; θ) = θᵀx, used as a closed-form reference model.
struct LinearSpec {
    std::size_t in_dim = 2;
};

using NetworkSpec = std::variant<MlpSpec, CnnSpec, LinearSpec>;

void validate(const NetworkSpec& spec);
// Canonical one-line description; stable across runs and used for hashing.
std::string describe(const NetworkSpec& spec);
std::uint64_t spec_hash(const NetworkSpec& spec);
std::size_t output_dim(const NetworkSpec& spec);
// Expected shape of one forward input (batch size `n` for coordinate models).
Shape input_shape(const NetworkSpec& spec, std::size_t n = 1);

struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    Shape shape;
};
using ParamLayout = std::vector<ParamBlock>;

ParamLayout param_layout(const NetworkSpec& spec);
std::size_t parameter_count(const NetworkSpec& spec);

// Flat parameter state θ together with the layout that maps slices to layers.
struct ParamVector {
    Tensor values;
    ParamLayout layout;

    std::size_t size() const noexcept { return values.size(); }
    std::vector<Tensor> unflatten() const;
    static ParamVector flatten(const std::vector<Tensor>& blocks, ParamLayout layout);
    static ParamVector zeros(const NetworkSpec& spec);

    const ParamBlock& block(const std::string& name) const;
    std::span<const double> slice(const std::string& name) const;
    std::span<double> slice(const std::string& name);
};

ParamVector init_siren(const MlpSpec& spec, Rng& rng);
ParamVector init_cnn(const CnnSpec& spec, Rng& rng);
ParamVector init_params(const NetworkSpec& spec, Rng& rng);

// Uniform bound of the SIREN hidden/head layers, √(6/fan_in)/ω₀.
double siren_hidden_bound(std::size_t fan_in, double omega0);
// Kaiming-uniform bound of conv kernels, √(6/fan_in).
double kaiming_bound(std::size_t fan_in);

// Jacobian of a scalar-output dense layer over n inputs: the weight column
// (r, c) of row i is deltas(i, r)·inputs(i, c), the bias column r is
// deltas(i, r).
struct DenseJacobianFactors {
    Tensor deltas;  // n×out
    Tensor inputs;  // n×in
    bool has_bias = true;
};

// One forward evaluation with its activations cached, so the reverse pass
// can reuse them.
class ForwardPass {
public:
    ForwardPass(const NetworkSpec& spec, const ParamVector& params, const Tensor& input);
    ~ForwardPass();
    ForwardPass(ForwardPass&&) noexcept;
    ForwardPass& operator=(ForwardPass&&) noexcept;

    const Tensor& output() const;
    // Gradient of <output, output_grad> with respect to every parameter.
    ParamVector backward(const Tensor& output_grad) const;
    // Row i is ∇θ f(x_i) for a scalar-output coordinate model.
    Tensor jacobian() const;
    std::vector<DenseJacobianFactors> jacobian_factors() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

Tensor forward(const NetworkSpec& spec, const ParamVector& params, const Tensor& input);
ParamVector backward(const NetworkSpec& spec, const ParamVector& params, const Tensor& input,
                     const Tensor& output_grad);
// ∇θ f(x) for a single input x ([d] or [1×d]); requires a scalar output.
Tensor jacobian_row(const NetworkSpec& spec, const ParamVector& params, const Tensor& x);
// Stacked Jacobian rows for a batch of probes [n×d] → [n×p].
Tensor jacobian(const NetworkSpec& spec, const ParamVector& params, const Tensor& probes);
// Per-layer factors of the same Jacobian, without materialising n×p.
std::vector<DenseJacobianFactors> jacobian_factors(const NetworkSpec& spec, const ParamVector& params,
                                                   const Tensor& probes);

}  // namespace noiseinit
