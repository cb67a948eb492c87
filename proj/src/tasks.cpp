#include "noiseinit/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <vector>

#include "noiseinit/adam.hpp"
#include "noiseinit/error.hpp"
#include "noiseinit/ntk.hpp"

namespace noiseinit {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) {
        throw DimensionError("psnr shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    if (!(peak > 0.0)) throw ParameterError("psnr: peak must be > 0");
    if (a.empty()) throw ParameterError("psnr: empty images");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = sum / static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(10.0 * std::log10(peak * peak / mse), kPsnrCap);
}

NoiseDistribution NoiseDistribution::parse(const std::string& text) {
    const auto colon = text.find(':');
    const auto comma = text.find(',', colon == std::string::npos ? 0 : colon);
    if (colon == std::string::npos || comma == std::string::npos) {
        throw ConfigError("noise must look like gaussian:MEAN,STD or uniform:LO,HI, got '" + text + "'");
    }
    const std::string kind = text.substr(0, colon);
    double a = 0.0, b = 0.0;
    try {
        std::size_t used = 0;
        const std::string first = text.substr(colon + 1, comma - colon - 1);
        const std::string second = text.substr(comma + 1);
        a = std::stod(first, &used);
        if (used != first.size()) throw std::invalid_argument(first);
        b = std::stod(second, &used);
        if (used != second.size()) throw std::invalid_argument(second);
    } catch (const std::exception&) {
        throw ConfigError("noise parameters are not numbers in '" + text + "'");
    }
    if (kind == "gaussian") {
        if (!(b > 0.0)) throw ConfigError("gaussian noise needs std > 0");
        return gaussian(a, b);
    }
    if (kind == "uniform") {
        if (!(a < b)) throw ConfigError("uniform noise needs lo < hi");
        return uniform(a, b);
    }
    throw ConfigError("unknown noise kind '" + kind + "' (gaussian or uniform)");
}

std::string NoiseDistribution::to_string() const {
    std::ostringstream os;
    os.precision(17);
    os << (kind == Kind::gaussian ? "gaussian:" : "uniform:") << a << ',' << b;
    return os.str();
}

Tensor NoiseDistribution::sample(Rng& rng, const Shape& shape) const {
    return kind == Kind::gaussian ? sample_gaussian(rng, shape, a, b) : sample_uniform(rng, shape, a, b);
}

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::represent: return "represent";
        case TaskKind::superres: return "superres";
        case TaskKind::denoise: return "denoise";
        case TaskKind::inpaint: return "inpaint";
    }
    return "?";
}

TaskKind parse_task_kind(const std::string& text) {
    for (auto k : {TaskKind::represent, TaskKind::superres, TaskKind::denoise, TaskKind::inpaint}) {
        if (to_string(k) == text) return k;
    }
    throw ConfigError("unknown task '" + text + "' (represent, superres, denoise, inpaint)");
}

namespace {

struct LossEval {
    double loss = 0.0;
    Tensor output_grad;
};

// Mean of squared (optionally masked) residuals and its gradient. Every
// task loss goes through here so that the M ≡ 1 and factor-1 reductions are
// bit-identical to the plain loss.
LossEval squared_error(const Tensor& prediction, const Tensor& target, const Tensor* mask) {
    if (prediction.size() != target.size() || (mask && mask->size() != target.size())) {
        throw DimensionError("loss shape mismatch: prediction " + to_string(prediction.shape()) + ", target " +
                             to_string(target.shape()));
    }
    const std::size_t n = target.size();
    LossEval out{0.0, Tensor(prediction.shape())};
    if (n == 0) return out;
    // The residual is staged first so the reduction below is one branch-free
    // loop: masked and unmasked losses then compile to the same arithmetic.
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = prediction[i] - target[i];
    if (mask) {
        for (std::size_t i = 0; i < n; ++i) r[i] *= (*mask)[i];
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += r[i] * r[i];
    const double scale = 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out.output_grad[i] = scale * r[i];
    if (mask) {
        for (std::size_t i = 0; i < n; ++i) out.output_grad[i] *= (*mask)[i];
    }
    out.loss = sum / static_cast<double>(n);
    return out;
}

using Objective = std::function<LossEval(const Tensor& output)>;
using ImageOf = std::function<Tensor(const Tensor& output)>;

struct LoopResult {
    ParamVector params;
    TrainingTrace trace;
    Tensor last_output;
};

// Full-batch Adam from a fresh optimiser state. Records the state after
// 0..iterations updates.
LoopResult optimise(const NetworkSpec& spec, ParamVector params, const Tensor& input, std::size_t iterations,
                    double lr, const std::function<Objective(std::size_t)>& objective_at, const ImageOf& image_of,
                    const std::optional<Tensor>& reference, ReferenceKind reference_kind) {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be > 0");
    AdamState adam = AdamState::fresh(params.size(), AdamHyper{lr});
    LoopResult result{std::move(params), TrainingTrace{{}, reference ? reference_kind : ReferenceKind::none}, {}};
    result.trace.records.reserve(iterations + 1);
    for (std::size_t it = 0;; ++it) {
        ForwardPass pass(spec, result.params, input);
        const LossEval eval = objective_at(it)(pass.output());
        if (!std::isfinite(eval.loss)) {
            throw NumericError("loss became non-finite at iteration " + std::to_string(it));
        }
        TraceRecord record{it, eval.loss, std::nullopt};
        if (reference) record.psnr = psnr(image_of(pass.output()), *reference);
        result.trace.records.push_back(record);
        if (it == iterations) {
            result.last_output = pass.output();
            break;
        }
        const ParamVector grads = pass.backward(eval.output_grad);
        adam_update(adam, result.params.values.data(), grads.values.data());
    }
    return result;
}

const CnnSpec& require_cnn(const NetworkSpec& spec, const char* task) {
    const auto* cnn = std::get_if<CnnSpec>(&spec);
    if (!cnn) throw ParameterError(std::string(task) + " needs a conv net spec, got '" + describe(spec) + "'");
    if (cnn->output_channels != 1) throw ParameterError(std::string(task) + " expects a single-channel conv net");
    return *cnn;
}

void require_image(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " must be an h×w image, got " + to_string(t.shape()));
    if (!t.all_finite()) throw ParameterError(std::string(what) + " has non-finite pixels");
}

Tensor cnn_image(const Tensor& output) { return output.reshaped({output.dim(1), output.dim(2)}); }

TaskResult finish(LoopResult loop, const ImageOf& image_of) {
    TaskResult r;
    r.output = image_of(loop.last_output);
    r.peak_psnr_iter = loop.trace.peak_psnr_iter();
    r.params = std::move(loop.params);
    r.trace = std::move(loop.trace);
    return r;
}

Objective fixed(Tensor target, std::optional<Tensor> mask = std::nullopt) {
    return [target = std::move(target), mask = std::move(mask)](const Tensor& out) {
        return squared_error(out, target, mask ? &*mask : nullptr);
    };
}

}  // namespace

double masked_mse(const Tensor& prediction, const Tensor& target, const std::optional<Tensor>& mask) {
    return squared_error(prediction, target, mask ? &*mask : nullptr).loss;
}

Tensor task_input(const NetworkSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed) {
    validate(spec);
    if (const auto* cnn = std::get_if<CnnSpec>(&spec)) {
        if (cnn->height != height || cnn->width != width) {
            throw DimensionError("conv net is built for " + std::to_string(cnn->height) + "x" +
                                 std::to_string(cnn->width) + " but the task needs " + std::to_string(height) + "x" +
                                 std::to_string(width));
        }
        Rng rng(derive_seed(seed, "net_input"));
        return sample_uniform(rng, {cnn->input_channels, height, width}, 0.0, 0.1);
    }
    if (const auto* mlp = std::get_if<MlpSpec>(&spec); mlp && mlp->in_dim != 2) {
        throw ParameterError("image coordinates are 2-D but the MLP takes " + std::to_string(mlp->in_dim));
    }
    if (const auto* lin = std::get_if<LinearSpec>(&spec); lin && lin->in_dim != 2) {
        throw ParameterError("image coordinates are 2-D but the linear model takes " + std::to_string(lin->in_dim));
    }
    return coordinate_grid(height, width);
}

PretrainResult pretrain(const NetworkSpec& spec, ParamVector params, const PretrainConfig& cfg,
                        const Tensor& net_input) {
    if (!(cfg.lr > 0.0)) throw ParameterError("pretrain: learning rate must be > 0");
    const Tensor initial_output = forward(spec, params, net_input);
    Rng rng(derive_seed(cfg.seed, "noise_target"));
    PretrainResult result{std::move(params), {}, cfg.noise.sample(rng, initial_output.shape())};
    if (cfg.iterations == 0) return result;

    auto target = std::make_shared<Tensor>(result.noise_target);
    auto objective_at = [&](std::size_t it) -> Objective {
        if (cfg.resample_each_iter && it > 0) *target = cfg.noise.sample(rng, initial_output.shape());
        return [target](const Tensor& out) { return squared_error(out, *target, nullptr); };
    };
    auto loop = optimise(spec, std::move(result.params), net_input, cfg.iterations, cfg.lr, objective_at,
                         [](const Tensor& out) { return out; }, std::nullopt, ReferenceKind::none);
    result.params = std::move(loop.params);
    result.trace = std::move(loop.trace);
    result.noise_target = *target;
    return result;
}

TaskResult run_represent(const NetworkSpec& spec, ParamVector params, const Tensor& image, std::size_t iterations,
                         double lr) {
    const auto* mlp = std::get_if<MlpSpec>(&spec);
    if (!mlp) throw ParameterError("represent needs a coordinate MLP spec, got '" + describe(spec) + "'");
    if (mlp->in_dim != 2 || mlp->out_dim != 1) throw ParameterError("represent expects a 2 -> 1 MLP");
    require_image(image, "represent target");
    const std::size_t h = image.dim(0), w = image.dim(1);
    const Tensor coords = coordinate_grid(h, w);
    const Tensor target = image.reshaped({h * w, 1});
    const ImageOf image_of = [h, w](const Tensor& out) { return out.reshaped({h, w}); };
    const Objective objective = fixed(target);
    auto loop = optimise(spec, std::move(params), coords, iterations, lr,
                         [&](std::size_t) { return objective; }, image_of, image, ReferenceKind::target);
    return finish(std::move(loop), image_of);
}

TaskResult run_superres(const NetworkSpec& spec, ParamVector params, const Tensor& lr_image, int factor,
                        std::size_t iterations, double lr, std::uint64_t seed,
                        const std::optional<Tensor>& hr_reference) {
    const auto& cnn = require_cnn(spec, "superres");
    require_image(lr_image, "superres observation");
    if (factor < 1) throw ParameterError("superres factor must be >= 1");
    const auto f = static_cast<std::size_t>(factor);
    if (cnn.height != f * lr_image.dim(0) || cnn.width != f * lr_image.dim(1)) {
        throw DimensionError("superres factor mismatch: net output " + std::to_string(cnn.height) + "x" +
                             std::to_string(cnn.width) + " is not " + std::to_string(factor) + " x " +
                             to_string(lr_image.shape()));
    }
    if (hr_reference && hr_reference->shape() != Shape{cnn.height, cnn.width}) {
        throw DimensionError("superres reference must be " + std::to_string(cnn.height) + "x" +
                             std::to_string(cnn.width));
    }
    const Tensor input = task_input(spec, cnn.height, cnn.width, seed);
    const Tensor target = lr_image;
    const Objective objective = [target, factor](const Tensor& out) {
        const Tensor down = avg_pool(cnn_image(out), factor);
        LossEval eval = squared_error(down, target, nullptr);
        eval.output_grad = avg_pool_backward(eval.output_grad, factor).reshaped(out.shape());
        return eval;
    };
    auto loop = optimise(spec, std::move(params), input, iterations, lr, [&](std::size_t) { return objective; },
                         cnn_image, hr_reference, ReferenceKind::clean_ground_truth);
    return finish(std::move(loop), cnn_image);
}

TaskResult run_denoise(const NetworkSpec& spec, ParamVector params, const Tensor& noisy, std::size_t iterations,
                       double lr, std::uint64_t seed, const Tensor& clean_reference) {
    const auto& cnn = require_cnn(spec, "denoise");
    require_image(noisy, "denoise observation");
    if (noisy.shape() != Shape{cnn.height, cnn.width} || clean_reference.shape() != noisy.shape()) {
        throw DimensionError("denoise: observation " + to_string(noisy.shape()) + ", reference " +
                             to_string(clean_reference.shape()) + " and net output " + std::to_string(cnn.height) +
                             "x" + std::to_string(cnn.width) + " must agree");
    }
    const Tensor input = task_input(spec, cnn.height, cnn.width, seed);
    const Objective objective = fixed(noisy.reshaped({1, cnn.height, cnn.width}));
    auto loop = optimise(spec, std::move(params), input, iterations, lr, [&](std::size_t) { return objective; },
                         cnn_image, clean_reference, ReferenceKind::clean_ground_truth);
    return finish(std::move(loop), cnn_image);
}

TaskResult run_inpaint(const NetworkSpec& spec, ParamVector params, const Tensor& corrupted, const Tensor& mask,
                       std::size_t iterations, double lr, std::uint64_t seed,
                       const std::optional<Tensor>& clean_reference) {
    const auto& cnn = require_cnn(spec, "inpaint");
    require_image(corrupted, "inpaint observation");
    if (mask.shape() != corrupted.shape()) {
        throw DimensionError("inpaint mask " + to_string(mask.shape()) + " does not match image " +
                             to_string(corrupted.shape()));
    }
    for (double m : mask.data()) {
        if (m != 0.0 && m != 1.0) throw ParameterError("inpaint mask must be binary (0 or 1)");
    }
    if (corrupted.shape() != Shape{cnn.height, cnn.width}) {
        throw DimensionError("inpaint: image " + to_string(corrupted.shape()) + " does not match the net output");
    }
    if (clean_reference && clean_reference->shape() != corrupted.shape()) {
        throw DimensionError("inpaint reference shape mismatch");
    }
    const Tensor input = task_input(spec, cnn.height, cnn.width, seed);
    const Shape out_shape{1, cnn.height, cnn.width};
    const Objective objective = fixed(corrupted.reshaped(out_shape), mask.reshaped(out_shape));
    auto loop = optimise(spec, std::move(params), input, iterations, lr, [&](std::size_t) { return objective; },
                         cnn_image, clean_reference, ReferenceKind::clean_ground_truth);
    return finish(std::move(loop), cnn_image);
}

void validate(const TaskSpec& task) {
    require_image(task.target, "task target");
    if (task.mask.has_value() != (task.kind == TaskKind::inpaint)) {
        throw ParameterError(task.kind == TaskKind::inpaint ? "inpaint needs a mask"
                                                            : "only inpaint takes a mask");
    }
    if (task.mask) {
        if (task.mask->shape() != task.target.shape()) throw DimensionError("mask shape must match the target");
        for (double m : task.mask->data()) {
            if (m != 0.0 && m != 1.0) throw ParameterError("inpaint mask must be binary (0 or 1)");
        }
    }
    if (task.factor < 1) throw ParameterError("superres factor must be >= 1");
    if (task.kind != TaskKind::superres && task.factor != 1) throw ParameterError("factor applies to superres only");
    if (!(task.lr > 0.0)) throw ParameterError("learning rate must be > 0");
}

TaskResult run_task(const NetworkSpec& spec, ParamVector params, const TaskSpec& task) {
    validate(task);
    switch (task.kind) {
        case TaskKind::represent:
            return run_represent(spec, std::move(params), task.target, task.iterations, task.lr);
        case TaskKind::superres:
            return run_superres(spec, std::move(params), task.target, task.factor, task.iterations, task.lr,
                                task.seed, task.reference);
        case TaskKind::denoise:
            return run_denoise(spec, std::move(params), task.target, task.iterations, task.lr, task.seed,
                               task.reference.value_or(task.target));
        case TaskKind::inpaint:
            return run_inpaint(spec, std::move(params), task.target, *task.mask, task.iterations, task.lr, task.seed,
                               task.reference);
    }
    throw ParameterError("unknown task kind");
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

Tensor synthetic_image(std::size_t size, std::uint64_t seed) {
    if (size < 4) throw ParameterError("synthetic_image: size must be >= 4");
    Rng rng(derive_seed(seed, "synthetic_image"));
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.next_unit(); };
    Tensor img({size, size});
    const double angle = u(0.0, 2.0 * std::numbers::pi);
    struct Ellipse {
        double cx, cy, rx, ry, value;
    };
    std::vector<Ellipse> blobs;
    for (int i = 0; i < 4; ++i) blobs.push_back({u(-0.7, 0.7), u(-0.7, 0.7), u(0.12, 0.4), u(0.12, 0.4), u(0.05, 0.95)});
    const double rx0 = u(-0.8, 0.1), ry0 = u(-0.8, 0.1), rw = u(0.3, 0.6), rh = u(0.2, 0.5), rv = u(0.1, 0.9);
    const double tx = u(-0.5, 0.5), ty = u(-0.5, 0.5);
    const double freq = static_cast<double>(size) / 6.0;
    const double tex_angle = u(0.0, std::numbers::pi);
    const Tensor grain = sample_gaussian(rng, {size, size}, 0.0, 0.02);

    for (std::size_t r = 0; r < size; ++r) {
        const double y = -1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(size);
        for (std::size_t c = 0; c < size; ++c) {
            const double x = -1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(size);
            double v = 0.45 + 0.25 * (x * std::cos(angle) + y * std::sin(angle)) / std::numbers::sqrt2;
            if (x >= rx0 && x < rx0 + rw && y >= ry0 && y < ry0 + rh) v = rv;
            for (const auto& e : blobs) {
                const double dx = (x - e.cx) / e.rx, dy = (y - e.cy) / e.ry;
                if (dx * dx + dy * dy <= 1.0) v = 0.5 * v + 0.5 * e.value;
            }
            const double ddx = x - tx, ddy = y - ty;
            if (ddx * ddx + ddy * ddy < 0.09) {
                const double phase = std::numbers::pi * freq * (x * std::cos(tex_angle) + y * std::sin(tex_angle));
                v += 0.15 * std::sin(phase);
            }
            img.at(r, c) = std::clamp(v + grain.at(r, c), 0.0, 1.0);
        }
    }
    return img;
}

Tensor add_gaussian_noise(const Tensor& clean, double sigma, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "corruption"));
    const Tensor noise = sample_gaussian(rng, clean.shape(), 0.0, sigma);
    Tensor noisy = clean;
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = std::clamp(clean[i] + noise[i], 0.0, 1.0);
    return noisy;
}

Tensor rectangle_mask(std::size_t height, std::size_t width, std::size_t holes, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "mask"));
    Tensor mask = Tensor::full({height, width}, 1.0);
    for (std::size_t k = 0; k < holes; ++k) {
        const auto pick = [&](std::size_t lo, std::size_t hi) {
            return lo + static_cast<std::size_t>(rng.next_unit() * static_cast<double>(hi - lo + 1));
        };
        const std::size_t hh = pick(std::max<std::size_t>(1, height / 8), std::max<std::size_t>(1, height / 4));
        const std::size_t ww = pick(std::max<std::size_t>(1, width / 8), std::max<std::size_t>(1, width / 4));
        const std::size_t r0 = pick(0, height - std::min(hh, height));
        const std::size_t c0 = pick(0, width - std::min(ww, width));
        for (std::size_t r = r0; r < std::min(height, r0 + hh); ++r) {
            for (std::size_t c = c0; c < std::min(width, c0 + ww); ++c) mask.at(r, c) = 0.0;
        }
    }
    return mask;
}

}  // namespace noiseinit
