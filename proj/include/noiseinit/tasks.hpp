#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "noiseinit/nets.hpp"
#include "noiseinit/rng.hpp"
#include "noiseinit/tensor.hpp"
#include "noiseinit/trace.hpp"

namespace noiseinit {

inline constexpr double kPsnrCap = 99.0;

// 10·log10(peak² / MSE), capped at kPsnrCap (MSE = 0 yields the cap).
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct NoiseDistribution {
    enum class Kind { gaussian, uniform };
    Kind kind = Kind::gaussian;
    double a = 0.0;  // mean or lower bound
    double b = 1.0;  // standard deviation or upper bound

    static NoiseDistribution gaussian(double mean, double stddev) { return {Kind::gaussian, mean, stddev}; }
    static NoiseDistribution uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
    // "gaussian:MEAN,STD" or "uniform:LO,HI"
    static NoiseDistribution parse(const std::string& text);
    std::string to_string() const;

    Tensor sample(Rng& rng, const Shape& shape) const;
};

struct PretrainConfig {
    NoiseDistribution noise = NoiseDistribution::gaussian(0.0, 1.0);
    std::size_t iterations = 200;
    double lr = 1e-4;
    bool resample_each_iter = false;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    ParamVector params;
    TrainingTrace trace;
    Tensor noise_target;  // the ε used (the last draw when resampling)
};

// Fits f(net_input; θ) to a random-noise target with Adam on the MSE.
// Zero iterations return the parameters untouched and an empty trace.
PretrainResult pretrain(const NetworkSpec& spec, ParamVector params, const PretrainConfig& cfg,
                        const Tensor& net_input);

// Fixed network input of a task: the pixel-centre grid for coordinate
// models, U[0, 0.1) noise (seeded) for the conv net.
Tensor task_input(const NetworkSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed);

enum class TaskKind { represent, superres, denoise, inpaint };
std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

struct TaskSpec {
    TaskKind kind = TaskKind::represent;
    Tensor target;                    // y, h×w
    std::optional<Tensor> mask;       // inpaint only, binary, same shape as target
    std::optional<Tensor> reference;  // clean / high-resolution image for PSNR
    int factor = 1;                   // superres only
    std::size_t iterations = 0;
    double lr = 1e-4;
    std::uint64_t seed = 0;
};

void validate(const TaskSpec& task);

struct TaskResult {
    ParamVector params;
    TrainingTrace trace;
    Tensor output;  // final network image
    std::optional<std::size_t> peak_psnr_iter;
};

TaskResult run_task(const NetworkSpec& spec, ParamVector params, const TaskSpec& task);

TaskResult run_represent(const NetworkSpec& spec, ParamVector params, const Tensor& image, std::size_t iterations,
                         double lr);
TaskResult run_superres(const NetworkSpec& spec, ParamVector params, const Tensor& lr_image, int factor,
                        std::size_t iterations, double lr, std::uint64_t seed,
                        const std::optional<Tensor>& hr_reference = std::nullopt);
TaskResult run_denoise(const NetworkSpec& spec, ParamVector params, const Tensor& noisy, std::size_t iterations,
                       double lr, std::uint64_t seed, const Tensor& clean_reference);
TaskResult run_inpaint(const NetworkSpec& spec, ParamVector params, const Tensor& corrupted, const Tensor& mask,
                       std::size_t iterations, double lr, std::uint64_t seed,
                       const std::optional<Tensor>& clean_reference = std::nullopt);

// (1/n)·Σ (m ⊙ (prediction − target))², mask optional.
double masked_mse(const Tensor& prediction, const Tensor& target, const std::optional<Tensor>& mask = std::nullopt);

// Deterministic test-pattern image in [0, 1]: smooth shading, a few shapes,
// an oriented texture patch and fine grain.
Tensor synthetic_image(std::size_t size, std::uint64_t seed);
// Additive Gaussian noise, clipped to [0, 1].
Tensor add_gaussian_noise(const Tensor& clean, double sigma, std::uint64_t seed);
// Binary mask with `holes` rectangular zero regions.
Tensor rectangle_mask(std::size_t height, std::size_t width, std::size_t holes, std::uint64_t seed);

}  // namespace noiseinit
