#include "noiseinit/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "noiseinit/error.hpp"
#include "vecmath.hpp"

namespace noiseinit {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void validate_mlp(const MlpSpec& s) {
    if (s.in_dim < 1 || s.hidden_dim < 1 || s.num_hidden_layers < 1 || s.out_dim < 1) {
        throw ParameterError("mlp spec: all dimensions must be >= 1");
    }
    if (!(s.omega0 > 0.0)) throw ParameterError("mlp spec: omega0 must be > 0");
}

void validate_cnn(const CnnSpec& s) {
    if (s.input_channels < 1 || s.skip_channels < 1 || s.output_channels < 1) {
        throw ParameterError("cnn spec: channel counts must be >= 1");
    }
    if (s.encoder_channels.empty()) throw ParameterError("cnn spec: need at least one encoder level");
    if (s.encoder_channels.size() != s.decoder_channels.size()) {
        throw ParameterError("cnn spec: encoder and decoder lists must have equal length");
    }
    for (auto c : s.encoder_channels) {
        if (c < 1) throw ParameterError("cnn spec: zero-channel encoder level");
    }
    for (auto c : s.decoder_channels) {
        if (c < 1) throw ParameterError("cnn spec: zero-channel decoder stage");
    }
    const std::size_t scale = std::size_t{1} << s.encoder_channels.size();
    if (s.height < 1 || s.width < 1 || s.height % scale || s.width % scale) {
        throw ParameterError("cnn spec: spatial dims " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                             " not divisible by " + std::to_string(scale));
    }
    if (s.leaky_slope < 0.0) throw ParameterError("cnn spec: leaky slope must be >= 0");
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

// Channel count of encoder feature level k (level 0 is the net input).
std::size_t level_channels(const CnnSpec& s, std::size_t k) {
    return k == 0 ? s.input_channels : s.encoder_channels[k - 1];
}

std::size_t decoder_in_channels(const CnnSpec& s, std::size_t j) {
    const std::size_t up = j == 0 ? s.encoder_channels.back() : s.decoder_channels[j - 1];
    return up + s.skip_channels;
}

}  // namespace

void validate(const NetworkSpec& spec) {
    std::visit(overloaded{
                   [](const MlpSpec& s) { validate_mlp(s); },
                   [](const CnnSpec& s) { validate_cnn(s); },
                   [](const LinearSpec& s) {
                       if (s.in_dim < 1) throw ParameterError("linear spec: in_dim must be >= 1");
                   },
               },
               spec);
}

std::string describe(const NetworkSpec& spec) {
    return std::visit(overloaded{
                          [](const MlpSpec& s) {
                              std::ostringstream os;
                              os.precision(17);
                              os << "mlp in=" << s.in_dim << " hidden=" << s.hidden_dim
                                 << " layers=" << s.num_hidden_layers << " out=" << s.out_dim
                                 << " omega0=" << s.omega0
                                 << " act=" << (s.activation == Activation::sine ? "sine" : "identity");
                              return os.str();
                          },
                          [](const CnnSpec& s) {
                              std::ostringstream os;
                              os.precision(17);
                              os << "cnn in=" << s.input_channels << " hw=" << s.height << "x" << s.width
                                 << " enc=" << join(s.encoder_channels) << " dec=" << join(s.decoder_channels)
                                 << " skip=" << s.skip_channels << " out=" << s.output_channels
                                 << " slope=" << s.leaky_slope;
                              return os.str();
                          },
                          [](const LinearSpec& s) { return "linear in=" + std::to_string(s.in_dim); },
                      },
                      spec);
}

std::uint64_t spec_hash(const NetworkSpec& spec) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : describe(spec)) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::size_t output_dim(const NetworkSpec& spec) {
    return std::visit(overloaded{
                          [](const MlpSpec& s) { return s.out_dim; },
                          [](const CnnSpec& s) { return s.output_channels * s.height * s.width; },
                          [](const LinearSpec&) { return std::size_t{1}; },
                      },
                      spec);
}

Shape input_shape(const NetworkSpec& spec, std::size_t n) {
    return std::visit(overloaded{
                          [n](const MlpSpec& s) { return Shape{n, s.in_dim}; },
                          [](const CnnSpec& s) { return Shape{s.input_channels, s.height, s.width}; },
                          [n](const LinearSpec& s) { return Shape{n, s.in_dim}; },
                      },
                      spec);
}

ParamLayout param_layout(const NetworkSpec& spec) {
    validate(spec);
    ParamLayout layout;
    std::size_t offset = 0;
    auto add = [&](std::string name, Shape shape) {
        const std::size_t n = element_count(shape);
        layout.push_back({std::move(name), offset, std::move(shape)});
        offset += n;
    };
    std::visit(overloaded{
                   [&](const MlpSpec& s) {
                       std::size_t fan_in = s.in_dim;
                       for (std::size_t l = 0; l < s.num_hidden_layers; ++l) {
                           add("hidden" + std::to_string(l) + ".weight", {s.hidden_dim, fan_in});
                           add("hidden" + std::to_string(l) + ".bias", {s.hidden_dim});
                           fan_in = s.hidden_dim;
                       }
                       add("head.weight", {s.out_dim, s.hidden_dim});
                       add("head.bias", {s.out_dim});
                   },
                   [&](const CnnSpec& s) {
                       const std::size_t levels = s.encoder_channels.size();
                       for (std::size_t l = 0; l < levels; ++l) {
                           add("enc" + std::to_string(l) + ".weight",
                               {s.encoder_channels[l], level_channels(s, l), 3, 3});
                           add("enc" + std::to_string(l) + ".bias", {s.encoder_channels[l]});
                       }
                       for (std::size_t k = 0; k < levels; ++k) {
                           add("skip" + std::to_string(k) + ".weight", {s.skip_channels, level_channels(s, k), 1, 1});
                           add("skip" + std::to_string(k) + ".bias", {s.skip_channels});
                       }
                       for (std::size_t j = 0; j < levels; ++j) {
                           add("dec" + std::to_string(j) + ".weight",
                               {s.decoder_channels[j], decoder_in_channels(s, j), 3, 3});
                           add("dec" + std::to_string(j) + ".bias", {s.decoder_channels[j]});
                       }
                       add("head.weight", {s.output_channels, s.decoder_channels.back(), 1, 1});
                       add("head.bias", {s.output_channels});
                   },
                   [&](const LinearSpec& s) { add("weight", {s.in_dim}); },
               },
               spec);
    return layout;
}

std::size_t parameter_count(const NetworkSpec& spec) {
    const auto layout = param_layout(spec);
    return layout.empty() ? 0 : layout.back().offset + element_count(layout.back().shape);
}

std::vector<Tensor> ParamVector::unflatten() const {
    std::vector<Tensor> blocks;
    blocks.reserve(layout.size());
    for (const auto& b : layout) {
        const auto n = element_count(b.shape);
        if (b.offset + n > values.size()) throw DimensionError("param layout exceeds value length");
        const auto first = values.values().begin() + static_cast<std::ptrdiff_t>(b.offset);
        blocks.emplace_back(b.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
    }
    return blocks;
}

ParamVector ParamVector::flatten(const std::vector<Tensor>& blocks, ParamLayout layout) {
    if (blocks.size() != layout.size()) throw DimensionError("flatten: block count does not match layout");
    std::size_t total = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].shape() != layout[i].shape || layout[i].offset != total) {
            throw DimensionError("flatten: block '" + layout[i].name + "' has shape " +
                                 to_string(blocks[i].shape()) + ", layout expects " + to_string(layout[i].shape));
        }
        total += blocks[i].size();
    }
    std::vector<double> values;
    values.reserve(total);
    for (const auto& b : blocks) values.insert(values.end(), b.values().begin(), b.values().end());
    return ParamVector{Tensor({total}, std::move(values)), std::move(layout)};
}

ParamVector ParamVector::zeros(const NetworkSpec& spec) {
    auto layout = param_layout(spec);
    const std::size_t p = layout.empty() ? 0 : layout.back().offset + element_count(layout.back().shape);
    return ParamVector{Tensor({p}), std::move(layout)};
}

const ParamBlock& ParamVector::block(const std::string& name) const {
    for (const auto& b : layout) {
        if (b.name == name) return b;
    }
    throw ParameterError("no parameter block named '" + name + "'");
}

std::span<const double> ParamVector::slice(const std::string& name) const {
    const auto& b = block(name);
    return values.data().subspan(b.offset, element_count(b.shape));
}

std::span<double> ParamVector::slice(const std::string& name) {
    const auto& b = block(name);
    return values.data().subspan(b.offset, element_count(b.shape));
}

double siren_hidden_bound(std::size_t fan_in, double omega0) {
    return std::sqrt(6.0 / static_cast<double>(fan_in)) / omega0;
}

double kaiming_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

namespace {

void fill_uniform(std::span<double> dst, Rng& rng, double bound) {
    const auto sample = sample_uniform(rng, {dst.size()}, -bound, bound);
    std::copy(sample.values().begin(), sample.values().end(), dst.begin());
}

}  // namespace

ParamVector init_siren(const MlpSpec& spec, Rng& rng) {
    auto params = ParamVector::zeros(spec);
    for (const auto& b : params.layout) {
        if (b.shape.size() != 2) continue;  // biases stay zero
        const std::size_t fan_in = b.shape[1];
        const double bound = b.name == "hidden0.weight" ? 1.0 / static_cast<double>(fan_in)
                                                        : siren_hidden_bound(fan_in, spec.omega0);
        fill_uniform(params.values.data().subspan(b.offset, element_count(b.shape)), rng, bound);
    }
    return params;
}

ParamVector init_cnn(const CnnSpec& spec, Rng& rng) {
    auto params = ParamVector::zeros(spec);
    for (const auto& b : params.layout) {
        if (b.shape.size() != 4) continue;
        const std::size_t fan_in = b.shape[1] * b.shape[2] * b.shape[3];
        fill_uniform(params.values.data().subspan(b.offset, element_count(b.shape)), rng, kaiming_bound(fan_in));
    }
    return params;
}

ParamVector init_params(const NetworkSpec& spec, Rng& rng) {
    return std::visit(overloaded{
                          [&](const MlpSpec& s) { return init_siren(s, rng); },
                          [&](const CnnSpec& s) { return init_cnn(s, rng); },
                          [&](const LinearSpec& s) {
                              auto params = ParamVector::zeros(s);
                              fill_uniform(params.values.data(), rng, 1.0 / std::sqrt(static_cast<double>(s.in_dim)));
                              return params;
                          },
                      },
                      spec);
}

// ---------------------------------------------------------------------------
// Forward / reverse passes
// ---------------------------------------------------------------------------

namespace {

void check_params(const NetworkSpec& spec, const ParamVector& params) {
    const std::size_t p = parameter_count(spec);
    if (params.size() != p) {
        throw DimensionError("parameter vector has " + std::to_string(params.size()) + " entries, spec '" +
                             describe(spec) + "' needs " + std::to_string(p));
    }
}

Tensor as_batch(const Tensor& input, std::size_t in_dim, const char* what) {
    if (input.rank() == 1 && input.size() == in_dim) return input.reshaped({1, in_dim});
    if (input.rank() != 2 || input.dim(1) != in_dim) {
        throw DimensionError(std::string(what) + ": input " + to_string(input.shape()) + " does not match [n x " +
                             std::to_string(in_dim) + "]");
    }
    return input;
}

Tensor block_tensor(const ParamVector& params, const std::string& name) {
    const auto& b = params.block(name);
    const auto s = params.slice(name);
    return Tensor(b.shape, std::vector<double>(s.begin(), s.end()));
}

// Y = X Wᵀ + b for X [n×in], W [out×in].
Tensor affine_rows(const Tensor& x, const Tensor& w, std::span<const double> bias) {
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor y({n, out});
    for (std::size_t i = 0; i < n; ++i) std::copy(bias.begin(), bias.end(), y.data().begin() + i * out);
    gemm(n, out, in, x.data().data(), in, w.data().data(), in, y.data().data(), out, true, Op::none, Op::transpose);
    return y;
}

void add_channel_bias(Tensor& t, std::span<const double> bias) {
    const std::size_t plane = t.dim(1) * t.dim(2);
    for (std::size_t c = 0; c < t.dim(0); ++c) {
        double* p = t.data().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
}

void channel_sums(const Tensor& g, std::span<double> dst) {
    const std::size_t plane = g.dim(1) * g.dim(2);
    for (std::size_t c = 0; c < g.dim(0); ++c) {
        double s = 0.0;
        const double* p = g.data().data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        dst[c] = s;
    }
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : slope * v;
    return y;
}

Tensor leaky_relu_backward(const Tensor& pre, const Tensor& g, double slope) {
    Tensor out = g;
    auto o = out.data();
    const auto p = pre.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (!(p[i] > 0.0)) o[i] *= slope;
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.values().begin(), a.values().end(), out.data().begin());
    std::copy(b.values().begin(), b.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first) {
    const std::size_t plane = t.dim(1) * t.dim(2);
    const auto mid = t.values().begin() + static_cast<std::ptrdiff_t>(first * plane);
    return {Tensor({first, t.dim(1), t.dim(2)}, std::vector<double>(t.values().begin(), mid)),
            Tensor({t.dim(0) - first, t.dim(1), t.dim(2)}, std::vector<double>(mid, t.values().end()))};
}

void store(ParamVector& grads, const std::string& name, const Tensor& t) {
    auto dst = grads.slice(name);
    std::copy(t.values().begin(), t.values().end(), dst.begin());
}

void add_into(Tensor& acc, const Tensor& t) {
    auto a = acc.data();
    const auto b = t.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

struct MlpPass {
    MlpSpec spec;
    std::vector<Tensor> weights;  // hidden0..hiddenL-1, head
    std::vector<Tensor> acts;     // acts[0] = x, acts[l + 1] = output of hidden layer l
    std::vector<Tensor> phases;   // argument of the activation per hidden layer
    Tensor output;

    MlpPass(const MlpSpec& s, const ParamVector& params, const Tensor& input) : spec(s) {
        acts.push_back(as_batch(input, s.in_dim, "mlp forward"));
        const bool sine = s.activation == Activation::sine;
        for (std::size_t l = 0; l < s.num_hidden_layers; ++l) {
            const std::string name = "hidden" + std::to_string(l);
            weights.push_back(block_tensor(params, name + ".weight"));
            Tensor z = affine_rows(acts.back(), weights.back(), params.slice(name + ".bias"));
            Tensor a(z.shape());
            if (sine) {
                detail::scaled_sin(z.data().data(), a.data().data(), z.size(), s.omega0);
            } else {
                a = z;
            }
            phases.push_back(std::move(z));
            acts.push_back(std::move(a));
        }
        weights.push_back(block_tensor(params, "head.weight"));
        output = affine_rows(acts.back(), weights.back(), params.slice("head.bias"));
    }

    // Gradients of the affine pre-activations W h + b, head last.
    std::vector<Tensor> deltas(const Tensor& output_grad) const {
        const std::size_t n = output.dim(0);
        std::vector<Tensor> d(spec.num_hidden_layers + 1);
        d.back() = output_grad;
        Tensor upstream = output_grad;
        for (std::size_t l = spec.num_hidden_layers; l-- > 0;) {
            const Tensor& w = weights[l + 1];
            const std::size_t out = w.dim(0), in = w.dim(1);
            Tensor da({n, in});
            gemm(n, in, out, upstream.data().data(), out, w.data().data(), in, da.data().data(), in, false);
            if (spec.activation == Activation::sine) {
                detail::mul_scaled_cos(da.data().data(), phases[l].data().data(), da.size(), spec.omega0);
            }
            d[l] = da;
            upstream = std::move(da);
        }
        return d;
    }

    ParamVector backward(const ParamVector& like, const Tensor& output_grad) const {
        if (output_grad.shape() != output.shape()) {
            throw DimensionError("mlp backward: output_grad " + to_string(output_grad.shape()) + " vs output " +
                                 to_string(output.shape()));
        }
        ParamVector grads{Tensor(like.values.shape()), like.layout};
        const auto d = deltas(output_grad);
        const std::size_t n = output.dim(0);
        for (std::size_t l = 0; l <= spec.num_hidden_layers; ++l) {
            const std::string name = l == spec.num_hidden_layers ? "head" : "hidden" + std::to_string(l);
            const Tensor& a = acts[l];
            const std::size_t out = d[l].dim(1), in = a.dim(1);
            const Tensor& dl = d[l];
            auto gw = grads.slice(name + ".weight");
            gemm(out, in, n, dl.data().data(), out, a.data().data(), in, gw.data(), in, false, Op::transpose);
            auto gb = grads.slice(name + ".bias");
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t r = 0; r < out; ++r) gb[r] += dl[i * out + r];
            }
        }
        return grads;
    }

    Tensor jacobian(const ParamVector& params) const {
        if (spec.out_dim != 1) {
            throw UnsupportedError("NTK Jacobian needs a scalar-output network (out_dim = " +
                                   std::to_string(spec.out_dim) + "); analyse each channel separately");
        }
        const std::size_t n = output.dim(0), p = params.size();
        const auto d = deltas(Tensor::full({n, 1}, 1.0));
        Tensor jac({n, p});
        for (std::size_t l = 0; l <= spec.num_hidden_layers; ++l) {
            const std::string name = l == spec.num_hidden_layers ? "head" : "hidden" + std::to_string(l);
            const std::size_t w_off = params.block(name + ".weight").offset;
            const std::size_t b_off = params.block(name + ".bias").offset;
            const Tensor& a = acts[l];
            const std::size_t out = d[l].dim(1), in = a.dim(1);
            for (std::size_t i = 0; i < n; ++i) {
                double* row = jac.data().data() + i * p;
                const double* ai = a.data().data() + i * in;
                for (std::size_t r = 0; r < out; ++r) {
                    const double dz = d[l][i * out + r];
                    double* dst = row + w_off + r * in;
                    for (std::size_t c = 0; c < in; ++c) dst[c] = dz * ai[c];
                    row[b_off + r] = dz;
                }
            }
        }
        return jac;
    }

    std::vector<DenseJacobianFactors> factors() const {
        if (spec.out_dim != 1) {
            throw UnsupportedError("NTK Jacobian needs a scalar-output network (out_dim = " +
                                   std::to_string(spec.out_dim) + "); analyse each channel separately");
        }
        auto d = deltas(Tensor::full({output.dim(0), 1}, 1.0));
        std::vector<DenseJacobianFactors> out;
        for (std::size_t l = 0; l <= spec.num_hidden_layers; ++l) out.push_back({std::move(d[l]), acts[l], true});
        return out;
    }
};

struct CnnPass {
    CnnSpec spec;
    std::vector<Tensor> features;   // features[0] = input, features[l + 1] = encoder level l output
    std::vector<Tensor> enc_pre;
    std::vector<Tensor> skip_pre, skip_out;  // indexed by feature level
    std::vector<Tensor> dec_in, dec_pre, dec_out;
    Tensor output;
    const ParamVector* params = nullptr;

    Tensor conv(const std::string& name, const Tensor& x, int stride, int padding) const {
        Tensor y = conv2d(x, block_tensor(*params, name + ".weight"), stride, padding);
        add_channel_bias(y, params->slice(name + ".bias"));
        return y;
    }

    CnnPass(const CnnSpec& s, const ParamVector& p, const Tensor& input) : spec(s), params(&p) {
        if (input.shape() != Shape{s.input_channels, s.height, s.width}) {
            throw DimensionError("cnn forward: input " + to_string(input.shape()) + " does not match " +
                                 to_string(Shape{s.input_channels, s.height, s.width}));
        }
        const std::size_t levels = s.encoder_channels.size();
        features.push_back(input);
        for (std::size_t l = 0; l < levels; ++l) {
            enc_pre.push_back(conv("enc" + std::to_string(l), features.back(), 2, 1));
            features.push_back(leaky_relu(enc_pre.back(), s.leaky_slope));
        }
        skip_pre.resize(levels);
        skip_out.resize(levels);
        for (std::size_t k = 0; k < levels; ++k) {
            skip_pre[k] = conv("skip" + std::to_string(k), features[k], 1, 0);
            skip_out[k] = leaky_relu(skip_pre[k], s.leaky_slope);
        }
        const Tensor* up_src = &features.back();
        for (std::size_t j = 0; j < levels; ++j) {
            dec_in.push_back(concat_channels(upsample_nearest(*up_src, 2), skip_out[levels - 1 - j]));
            dec_pre.push_back(conv("dec" + std::to_string(j), dec_in.back(), 1, 1));
            dec_out.push_back(leaky_relu(dec_pre.back(), s.leaky_slope));
            up_src = &dec_out.back();
        }
        output = conv("head", dec_out.back(), 1, 0);
        for (double& v : output.data()) v = 1.0 / (1.0 + std::exp(-v));
    }

    ParamVector backward(const Tensor& output_grad) const {
        if (output_grad.shape() != output.shape()) {
            throw DimensionError("cnn backward: output_grad " + to_string(output_grad.shape()) + " vs output " +
                                 to_string(output.shape()));
        }
        ParamVector grads{Tensor(params->values.shape()), params->layout};
        const std::size_t levels = spec.encoder_channels.size();
        const double slope = spec.leaky_slope;

        auto conv_back = [&](const std::string& name, const Tensor& x, const Tensor& g, int stride, int padding) {
            auto cg = conv2d_backward(x, block_tensor(*params, name + ".weight"), g, stride, padding);
            store(grads, name + ".weight", cg.kernels);
            channel_sums(g, grads.slice(name + ".bias"));
            return std::move(cg.input);
        };

        Tensor g_head = output_grad;
        {
            auto g = g_head.data();
            const auto y = output.data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        }
        Tensor g_up = conv_back("head", dec_out.back(), g_head, 1, 0);

        std::vector<Tensor> g_features;
        g_features.reserve(levels + 1);
        for (std::size_t k = 0; k <= levels; ++k) g_features.emplace_back(features[k].shape());

        for (std::size_t j = levels; j-- > 0;) {
            const Tensor g_pre = leaky_relu_backward(dec_pre[j], g_up, slope);
            const Tensor g_in = conv_back("dec" + std::to_string(j), dec_in[j], g_pre, 1, 1);
            const std::size_t up_channels = dec_in[j].dim(0) - spec.skip_channels;
            auto [g_upsampled, g_skip] = split_channels(g_in, up_channels);

            const std::size_t k = levels - 1 - j;
            const Tensor g_skip_pre = leaky_relu_backward(skip_pre[k], g_skip, slope);
            add_into(g_features[k], conv_back("skip" + std::to_string(k), features[k], g_skip_pre, 1, 0));

            Tensor g_src = upsample_nearest_backward(g_upsampled, 2);
            if (j == 0) {
                add_into(g_features[levels], g_src);
            } else {
                g_up = std::move(g_src);
            }
        }
        for (std::size_t l = levels; l-- > 0;) {
            const Tensor g_pre = leaky_relu_backward(enc_pre[l], g_features[l + 1], slope);
            add_into(g_features[l], conv_back("enc" + std::to_string(l), features[l], g_pre, 2, 1));
        }
        return grads;
    }
};

struct LinearPass {
    LinearSpec spec;
    Tensor x;
    Tensor output;

    LinearPass(const LinearSpec& s, const ParamVector& params, const Tensor& input)
        : spec(s), x(as_batch(input, s.in_dim, "linear forward")) {
        const std::size_t n = x.dim(0);
        output = Tensor({n, 1});
        gemm(n, 1, s.in_dim, x.data().data(), s.in_dim, params.values.data().data(), 1, output.data().data(), 1,
             false);
    }

    ParamVector backward(const ParamVector& like, const Tensor& output_grad) const {
        if (output_grad.shape() != output.shape()) {
            throw DimensionError("linear backward: output_grad " + to_string(output_grad.shape()) + " vs output " +
                                 to_string(output.shape()));
        }
        ParamVector grads{Tensor(like.values.shape()), like.layout};
        const std::size_t n = x.dim(0);
        gemm(1, spec.in_dim, n, output_grad.data().data(), 1, x.data().data(), spec.in_dim,
             grads.values.data().data(), spec.in_dim, false, Op::transpose);
        return grads;
    }

    Tensor jacobian() const { return x; }
};

}  // namespace

struct ForwardPass::Impl {
    std::variant<MlpPass, CnnPass, LinearPass> pass;
    ParamVector params;
};

ForwardPass::ForwardPass(const NetworkSpec& spec, const ParamVector& params, const Tensor& input) {
    check_params(spec, params);
    impl_ = std::unique_ptr<Impl>(new Impl{
        std::visit(overloaded{
                       [&](const MlpSpec& s) -> decltype(Impl::pass) { return MlpPass(s, params, input); },
                       [&](const CnnSpec& s) -> decltype(Impl::pass) { return CnnPass(s, params, input); },
                       [&](const LinearSpec& s) -> decltype(Impl::pass) { return LinearPass(s, params, input); },
                   },
                   spec),
        params});
    if (auto* cnn = std::get_if<CnnPass>(&impl_->pass)) cnn->params = &impl_->params;
}

ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

const Tensor& ForwardPass::output() const {
    return std::visit([](const auto& p) -> const Tensor& { return p.output; }, impl_->pass);
}

ParamVector ForwardPass::backward(const Tensor& output_grad) const {
    return std::visit(overloaded{
                          [&](const MlpPass& p) { return p.backward(impl_->params, output_grad); },
                          [&](const CnnPass& p) { return p.backward(output_grad); },
                          [&](const LinearPass& p) { return p.backward(impl_->params, output_grad); },
                      },
                      impl_->pass);
}

Tensor ForwardPass::jacobian() const {
    return std::visit(overloaded{
                          [&](const MlpPass& p) { return p.jacobian(impl_->params); },
                          [](const CnnPass&) -> Tensor {
                              throw UnsupportedError(
                                  "NTK Jacobian needs a scalar-output coordinate network; the conv net emits an image");
                          },
                          [](const LinearPass& p) { return p.jacobian(); },
                      },
                      impl_->pass);
}

std::vector<DenseJacobianFactors> ForwardPass::jacobian_factors() const {
    return std::visit(overloaded{
                          [](const MlpPass& p) { return p.factors(); },
                          [](const CnnPass&) -> std::vector<DenseJacobianFactors> {
                              throw UnsupportedError(
                                  "NTK Jacobian needs a scalar-output coordinate network; the conv net emits an image");
                          },
                          [](const LinearPass& p) {
                              return std::vector<DenseJacobianFactors>{
                                  {Tensor::full({p.x.dim(0), 1}, 1.0), p.x, false}};
                          },
                      },
                      impl_->pass);
}

Tensor forward(const NetworkSpec& spec, const ParamVector& params, const Tensor& input) {
    return ForwardPass(spec, params, input).output();
}

ParamVector backward(const NetworkSpec& spec, const ParamVector& params, const Tensor& input,
                     const Tensor& output_grad) {
    return ForwardPass(spec, params, input).backward(output_grad);
}

Tensor jacobian_row(const NetworkSpec& spec, const ParamVector& params, const Tensor& x) {
    if (output_dim(spec) != 1) {
        throw UnsupportedError("jacobian_row needs a scalar-output network (spec '" + describe(spec) +
                               "'); use per-channel mode");
    }
    const Tensor jac = ForwardPass(spec, params, x).jacobian();
    if (jac.dim(0) != 1) throw DimensionError("jacobian_row expects a single input, got " + to_string(x.shape()));
    return jac.reshaped({jac.dim(1)});
}

Tensor jacobian(const NetworkSpec& spec, const ParamVector& params, const Tensor& probes) {
    if (output_dim(spec) != 1) {
        throw UnsupportedError("jacobian needs a scalar-output network (spec '" + describe(spec) + "')");
    }
    return ForwardPass(spec, params, probes).jacobian();
}

std::vector<DenseJacobianFactors> jacobian_factors(const NetworkSpec& spec, const ParamVector& params,
                                                   const Tensor& probes) {
    if (output_dim(spec) != 1) {
        throw UnsupportedError("jacobian needs a scalar-output network (spec '" + describe(spec) + "')");
    }
    return ForwardPass(spec, params, probes).jacobian_factors();
}

}  // namespace noiseinit
