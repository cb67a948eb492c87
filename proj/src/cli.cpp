#include "noiseinit/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "noiseinit/error.hpp"
#include "noiseinit/io.hpp"
#include "noiseinit/nets.hpp"
#include "noiseinit/ntk.hpp"
#include "noiseinit/tasks.hpp"

namespace noiseinit {

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

namespace {

namespace fs = std::filesystem;

enum class Command { init, pretrain, train, ntk, compare };

const char* command_name(Command c) {
    switch (c) {
        case Command::init: return "init";
        case Command::pretrain: return "pretrain";
        case Command::train: return "train";
        case Command::ntk: return "ntk";
        case Command::compare: return "compare";
    }
    return "?";
}

struct KeyInfo {
    const char* name;
    const char* help;
};

// Order here is the order of resolved.cfg.
const std::vector<KeyInfo> kKeys = {
    {"task", "represent | superres | denoise | inpaint"},
    {"seed", "master seed; init, noise-target, net-input and corruption seeds derive from it"},
    {"net", "siren | cnn"},
    {"hidden_dim", "SIREN width"},
    {"hidden_layers", "number of sine layers"},
    {"omega0", "SIREN frequency scale"},
    {"input_channels", "conv net input noise channels"},
    {"size", "image side for synthetic data, init and probe training grid"},
    {"image", "input image (PGM/PPM)"},
    {"reference", "clean / high-resolution reference image for PSNR"},
    {"mask", "binary inpainting mask image (0 = missing)"},
    {"factor", "super-resolution factor"},
    {"sigma", "denoising noise std (compare)"},
    {"holes", "rectangular holes in the inpainting mask (compare)"},
    {"init", "parameter file to start from"},
    {"noise", "pretraining target: gaussian:MEAN,STD or uniform:LO,HI"},
    {"resample_noise", "draw a fresh noise target every pretraining iteration"},
    {"pretrain_iters", "pretraining iterations (compare)"},
    {"pretrain_lr", "pretraining learning rate (compare)"},
    {"iters", "iterations of the command's optimisation phase"},
    {"lr", "Adam learning rate of the command's optimisation phase"},
    {"probe_size", "NTK probe grid side"},
    {"probe_cap", "maximum NTK probe count"},
    {"top_k", "eigenvector power images to write"},
    {"log_every", "keep every k-th trace row (plus the last)"},
    {"out", "output directory"},
};

using Settings = std::map<std::string, std::string>;

// Pulls typed values out of the user's settings, recording the resolved
// value of every key it touches. Keys the user set but nobody asked for are
// rejected by finish().
class Resolver {
public:
    explicit Resolver(Settings given) : given_(std::move(given)) {}

    bool has(const std::string& key) const { return given_.count(key) > 0; }

    std::string text(const std::string& key, const std::string& fallback) {
        const auto it = given_.find(key);
        return record(key, it == given_.end() ? fallback : it->second);
    }
    std::string required(const std::string& key) {
        const auto it = given_.find(key);
        if (it == given_.end() || it->second.empty()) throw ConfigError("missing required key '" + key + "'");
        return record(key, it->second);
    }
    std::optional<std::string> optional_text(const std::string& key) {
        const auto it = given_.find(key);
        if (it == given_.end()) return std::nullopt;
        return record(key, it->second);
    }
    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        const auto it = given_.find(key);
        if (it == given_.end()) return std::stoull(record(key, std::to_string(fallback)));
        const std::string& v = it->second;
        std::size_t used = 0;
        std::uint64_t out = 0;
        try {
            if (v.empty() || v[0] == '-' || v[0] == '+') throw std::invalid_argument(v);
            out = std::stoull(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != v.size()) throw ConfigError("key '" + key + "' needs a non-negative integer, got '" + v + "'");
        record(key, std::to_string(out));
        return out;
    }
    std::size_t count(const std::string& key, std::size_t fallback, std::size_t min = 0) {
        const auto v = u64(key, fallback);
        if (v < min) throw ConfigError("key '" + key + "' must be >= " + std::to_string(min));
        return static_cast<std::size_t>(v);
    }
    double real(const std::string& key, double fallback, bool positive) {
        const auto it = given_.find(key);
        double out = fallback;
        if (it != given_.end()) {
            const std::string& v = it->second;
            std::size_t used = 0;
            try {
                out = std::stod(v, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != v.size() || !std::isfinite(out)) {
                throw ConfigError("key '" + key + "' needs a number, got '" + v + "'");
            }
        }
        if (positive && !(out > 0.0)) throw ConfigError("key '" + key + "' must be > 0");
        record(key, format_double(out));
        return out;
    }
    bool flag(const std::string& key, bool fallback) {
        const auto it = given_.find(key);
        bool out = fallback;
        if (it != given_.end()) {
            const std::string& v = it->second;
            if (v == "true" || v == "1" || v == "yes") {
                out = true;
            } else if (v == "false" || v == "0" || v == "no") {
                out = false;
            } else {
                throw ConfigError("key '" + key + "' needs true or false, got '" + v + "'");
            }
        }
        record(key, out ? "true" : "false");
        return out;
    }

    void finish(Command cmd) const {
        for (const auto& [key, value] : given_) {
            if (!resolved_.count(key)) {
                throw ConfigError("key '" + key + "' does not apply to `" + command_name(cmd) +
                                  "` with this net/task");
            }
        }
    }

    std::string resolved_text(Command cmd) const {
        std::ostringstream os;
        os << "# noiseinit " << command_name(cmd) << " (resolved)\n";
        for (const auto& k : kKeys) {
            const auto it = resolved_.find(k.name);
            if (it == resolved_.end()) continue;
            os << k.name << " = " << quote(it->second) << '\n';
        }
        return os.str();
    }

private:
    static std::string quote(const std::string& v) {
        const bool plain = !v.empty() && v.find_first_of(" \t#;\"'") == std::string::npos;
        return plain ? v : "\"" + v + "\"";
    }
    std::string record(const std::string& key, std::string value) {
        resolved_[key] = value;
        return value;
    }

    Settings given_;
    std::map<std::string, std::string> resolved_;
};

struct NetChoice {
    bool siren = true;
    std::size_t hidden_dim = 256;
    std::size_t hidden_layers = 3;
    double omega0 = 30.0;
    std::size_t input_channels = 8;

    NetworkSpec spec(std::size_t height, std::size_t width) const {
        if (siren) {
            MlpSpec m;
            m.hidden_dim = hidden_dim;
            m.num_hidden_layers = hidden_layers;
            m.omega0 = omega0;
            return m;
        }
        CnnSpec c;
        c.input_channels = input_channels;
        c.height = height;
        c.width = width;
        return c;
    }
};

NetChoice resolve_net(Resolver& r, const std::string& net) {
    NetChoice n;
    if (net == "siren") {
        n.siren = true;
        n.hidden_dim = r.count("hidden_dim", 256, 1);
        n.hidden_layers = r.count("hidden_layers", 3, 1);
        n.omega0 = r.real("omega0", 30.0, true);
    } else if (net == "cnn") {
        n.siren = false;
        n.input_channels = r.count("input_channels", 8, 1);
    } else {
        throw ConfigError("key 'net' must be siren or cnn, got '" + net + "'");
    }
    return n;
}

std::string default_net(TaskKind task) { return task == TaskKind::represent ? "siren" : "cnn"; }

std::string task_net(Resolver& r, TaskKind task) {
    const std::string net = r.text("net", default_net(task));
    if (net != default_net(task)) {
        throw ConfigError("task " + to_string(task) + " runs on net " + default_net(task) + ", not '" + net + "'");
    }
    return net;
}

NoiseDistribution resolve_noise(Resolver& r, bool siren) {
    return NoiseDistribution::parse(r.text("noise", siren ? "gaussian:0,1" : "uniform:0,1"));
}

std::size_t default_pretrain_iters(bool siren, std::optional<TaskKind> task) {
    if (siren) return 200;
    return task == TaskKind::denoise ? 1000 : 500;
}

double default_lr(bool siren) { return siren ? 1e-4 : 1e-2; }

std::size_t default_train_iters(TaskKind task) { return task == TaskKind::represent ? 200 : 2000; }

ParamVector initial_params(const NetworkSpec& spec, std::uint64_t seed, const std::optional<std::string>& init) {
    if (init) return load_params(*init, spec);
    Rng rng(derive_seed(seed, "init"));
    return init_params(spec, rng);
}

void write_resolved(const Resolver& r, Command cmd, const fs::path& out) {
    fs::create_directories(out);
    write_file(out / "resolved.cfg", r.resolved_text(cmd));
}

void write_power_images(const NtkSpectrum& s, std::size_t top_k, const fs::path& dir) {
    const std::size_t k = std::min(top_k, s.eigenvalues.size());
    for (std::size_t i = 0; i < k; ++i) {
        Tensor p = eigvec_spectrum(s, i);
        const double peak = max_abs(p);
        for (double& v : p.data()) v = peak > 0.0 ? std::log1p(v) / std::log1p(peak) : 0.0;
        char name[32];
        std::snprintf(name, sizeof name, "power_%03zu.pgm", i + 1);
        save_image(p, dir / name);
    }
}

struct NtkRun {
    KernelMatrix kernel;
    NtkSpectrum spectrum;
    SpectralReport report;
};

NtkRun analyse_ntk(const NetworkSpec& spec, const ParamVector& params, std::size_t train_size,
                   std::size_t probe_size, std::size_t cap) {
    if (probe_size == 0 || train_size % probe_size != 0) {
        throw ConfigError("probe_size " + std::to_string(probe_size) + " must divide the grid side " +
                          std::to_string(train_size));
    }
    const GridShape grid{probe_size, probe_size};
    if (grid.count() > cap) {
        throw ResourceError("probe count " + std::to_string(grid.count()) + " exceeds the NTK probe cap of " +
                            std::to_string(cap));
    }
    const Tensor probes = probe_grid(train_size, train_size, grid);
    KernelMatrix k = compute_ntk(spec, params, probes, grid, cap);
    NtkSpectrum s = eigendecompose(k);
    SpectralReport rep = spectral_report(k, s, kDefaultDecayKs);
    return {std::move(k), std::move(s), std::move(rep)};
}

void write_ntk(const NtkRun& run, const fs::path& dir, std::size_t top_k, bool binaries) {
    fs::create_directories(dir);
    if (binaries) {
        save_matrix(run.kernel.k, dir / "kernel.bin");
        save_matrix(run.spectrum.eigenvalues, dir / "eigenvalues.bin");
        save_matrix(run.spectrum.eigenvectors, dir / "eigenvectors.bin");
    }
    write_eigenvalues_csv(run.spectrum, dir / "eigenvalues.csv");
    write_report_csv(run.report, dir / "report.csv");
    write_power_images(run.spectrum, top_k, dir);
}

std::string fmt(double v) { return format_double(v); }

// ---------------------------------------------------------------------------

int cmd_init(Resolver& r, std::ostream& out) {
    const std::uint64_t seed = r.u64("seed", 0);
    const NetChoice net = resolve_net(r, r.required("net"));
    const std::size_t size = r.count("size", 64, 1);
    const fs::path dir = r.text("out", "runs/init");
    r.finish(Command::init);

    const NetworkSpec spec = net.spec(size, size);
    validate(spec);
    const ParamVector params = initial_params(spec, seed, std::nullopt);
    write_resolved(r, Command::init, dir);
    save_params(params, spec, dir / "params.bin");
    out << "init: " << describe(spec) << ", " << params.size() << " parameters -> " << (dir / "params.bin").string()
        << '\n';
    return kExitOk;
}

int cmd_pretrain(Resolver& r, std::ostream& out) {
    const std::uint64_t seed = r.u64("seed", 0);
    const NetChoice net = resolve_net(r, r.required("net"));
    const std::size_t size = r.count("size", 64, 1);
    const auto init = r.optional_text("init");
    PretrainConfig cfg;
    cfg.noise = resolve_noise(r, net.siren);
    cfg.resample_each_iter = r.flag("resample_noise", false);
    cfg.iterations = r.count("iters", default_pretrain_iters(net.siren, std::nullopt));
    cfg.lr = r.real("lr", default_lr(net.siren), true);
    cfg.seed = seed;
    const std::size_t log_every = r.count("log_every", 1, 1);
    const fs::path dir = r.text("out", "runs/pretrain");
    r.finish(Command::pretrain);

    const NetworkSpec spec = net.spec(size, size);
    validate(spec);
    ParamVector params = initial_params(spec, seed, init);
    write_resolved(r, Command::pretrain, dir);
    const auto result = pretrain(spec, std::move(params), cfg, task_input(spec, size, size, seed));
    save_params(result.params, spec, dir / "params.bin");
    write_trace_csv(result.trace, dir / "pretrain_trace.csv", log_every);
    out << "pretrain: " << cfg.iterations << " iterations on " << cfg.noise.to_string();
    if (!result.trace.empty()) {
        out << ", loss " << fmt(result.trace.records.front().loss) << " -> " << fmt(result.trace.records.back().loss);
    }
    out << '\n';
    return kExitOk;
}

Tensor load_binary_mask(const std::string& path) {
    Tensor m = load_grayscale(path);
    for (double v : m.data()) {
        if (v != 0.0 && v != 1.0) throw ConfigError("mask '" + path + "' must be binary (black = missing, white = observed)");
    }
    return m;
}

int cmd_train(Resolver& r, TaskKind task, std::ostream& out) {
    r.text("task", to_string(task));
    const std::uint64_t seed = r.u64("seed", 0);
    const NetChoice net = resolve_net(r, task_net(r, task));
    const std::string image_path = r.required("image");
    const auto reference_path = r.optional_text("reference");
    std::optional<std::string> mask_path;
    if (task == TaskKind::inpaint) mask_path = r.required("mask");
    const int factor = task == TaskKind::superres ? static_cast<int>(r.count("factor", 4, 1)) : 1;
    const auto init = r.optional_text("init");
    const std::size_t iters = r.count("iters", default_train_iters(task));
    const double lr = r.real("lr", default_lr(net.siren), true);
    const std::size_t log_every = r.count("log_every", 1, 1);
    const fs::path dir = r.text("out", "runs/train");
    r.finish(Command::train);

    TaskSpec ts;
    ts.kind = task;
    ts.target = load_grayscale(image_path);
    if (reference_path) ts.reference = load_grayscale(*reference_path);
    if (mask_path) ts.mask = load_binary_mask(*mask_path);
    ts.factor = factor;
    ts.iterations = iters;
    ts.lr = lr;
    ts.seed = seed;
    validate(ts);
    const auto f = static_cast<std::size_t>(factor);
    const NetworkSpec spec = net.spec(ts.target.dim(0) * f, ts.target.dim(1) * f);
    validate(spec);
    ParamVector params = initial_params(spec, seed, init);
    write_resolved(r, Command::train, dir);
    const TaskResult result = run_task(spec, std::move(params), ts);
    save_params(result.params, spec, dir / "params.bin");
    write_trace_csv(result.trace, dir / "trace.csv", log_every);
    save_image(result.output, dir / "output.pgm");
    out << "train " << to_string(task) << ": " << iters << " iterations, loss "
        << fmt(result.trace.records.front().loss) << " -> " << fmt(result.trace.records.back().loss);
    if (result.peak_psnr_iter) {
        out << ", peak PSNR " << fmt(*result.trace.psnr_at(*result.peak_psnr_iter)) << " dB at iteration "
            << *result.peak_psnr_iter;
    }
    out << '\n';
    return kExitOk;
}

int cmd_ntk(Resolver& r, std::ostream& out) {
    const std::uint64_t seed = r.u64("seed", 0);
    const std::string net_name = r.text("net", "siren");
    if (net_name == "cnn") {
        throw UnsupportedError("the NTK analysis needs a scalar-output coordinate network; the conv net emits an image");
    }
    const NetChoice net = resolve_net(r, net_name);
    const std::size_t size = r.count("size", 64, 1);
    const auto init = r.optional_text("init");
    const std::size_t probe_size = r.count("probe_size", 32, 1);
    const std::size_t cap = r.count("probe_cap", kDefaultProbeCap, 1);
    const std::size_t top_k = r.count("top_k", 8);
    const fs::path dir = r.text("out", "runs/ntk");
    r.finish(Command::ntk);

    const NetworkSpec spec = net.spec(size, size);
    validate(spec);
    const ParamVector params = initial_params(spec, seed, init);
    const NtkRun run = analyse_ntk(spec, params, size, probe_size, cap);
    write_resolved(r, Command::ntk, dir);
    write_ntk(run, dir, top_k, true);
    out << "ntk: n=" << run.kernel.n() << ", decay_ratio@100 "
        << (run.report.decay_ratios.size() > 2 ? fmt(run.report.decay_ratios[2].value) : std::string("n/a"))
        << ", effective_rank " << fmt(run.report.effective_rank) << ", band_width " << fmt(run.report.band_width)
        << '\n';
    return kExitOk;
}

struct CompareData {
    Tensor clean;
    Tensor observation;
    std::optional<Tensor> mask;
    std::optional<Tensor> reference;
    std::size_t out_h = 0, out_w = 0;
};

CompareData compare_data(TaskKind task, const Tensor& clean, int factor, double sigma, std::size_t holes,
                         std::uint64_t seed) {
    CompareData d;
    d.clean = clean;
    d.out_h = clean.dim(0);
    d.out_w = clean.dim(1);
    switch (task) {
        case TaskKind::represent:
            d.observation = clean;
            break;
        case TaskKind::superres:
            d.observation = avg_pool(clean, factor);
            d.reference = clean;
            break;
        case TaskKind::denoise:
            d.observation = add_gaussian_noise(clean, sigma, seed);
            d.reference = clean;
            break;
        case TaskKind::inpaint: {
            d.mask = rectangle_mask(clean.dim(0), clean.dim(1), holes, seed);
            d.observation = clean;
            for (std::size_t i = 0; i < clean.size(); ++i) d.observation[i] *= (*d.mask)[i];
            d.reference = clean;
            break;
        }
    }
    return d;
}

void summary_row(std::ostringstream& os, const std::string& key, const std::optional<double>& v) {
    os << key << ',' << (v ? fmt(*v) : std::string()) << '\n';
}

int cmd_compare(Resolver& r, TaskKind task, std::ostream& out) {
    r.text("task", to_string(task));
    const std::uint64_t seed = r.u64("seed", 0);
    const NetChoice net = resolve_net(r, task_net(r, task));
    const auto image_path = r.optional_text("image");
    const std::size_t size = image_path ? 0 : r.count("size", 64, 4);
    const int factor = task == TaskKind::superres ? static_cast<int>(r.count("factor", 4, 1)) : 1;
    const double sigma = task == TaskKind::denoise ? r.real("sigma", 25.0 / 255.0, true) : 0.0;
    const std::size_t holes = task == TaskKind::inpaint ? r.count("holes", 4) : 0;
    PretrainConfig pcfg;
    pcfg.noise = resolve_noise(r, net.siren);
    pcfg.resample_each_iter = r.flag("resample_noise", false);
    pcfg.iterations = r.count("pretrain_iters", default_pretrain_iters(net.siren, task));
    pcfg.lr = r.real("pretrain_lr", default_lr(net.siren), true);
    pcfg.seed = seed;
    const std::size_t iters = r.count("iters", default_train_iters(task));
    const double lr = r.real("lr", default_lr(net.siren), true);
    std::size_t probe_size = 0, cap = 0, top_k = 0;
    if (net.siren) {
        probe_size = r.count("probe_size", 32, 1);
        cap = r.count("probe_cap", kDefaultProbeCap, 1);
        top_k = r.count("top_k", 8);
    }
    const std::size_t log_every = r.count("log_every", 1, 1);
    const fs::path dir = r.text("out", "runs/compare");
    r.finish(Command::compare);

    const Tensor clean = image_path ? load_grayscale(*image_path) : synthetic_image(size, seed);
    const CompareData data = compare_data(task, clean, factor, sigma, holes, seed);
    const NetworkSpec spec = net.spec(data.out_h, data.out_w);
    validate(spec);
    const ParamVector theta0 = initial_params(spec, seed, std::nullopt);

    TaskSpec ts;
    ts.kind = task;
    ts.target = data.observation;
    ts.mask = data.mask;
    ts.reference = data.reference;
    ts.factor = factor;
    ts.iterations = iters;
    ts.lr = lr;
    ts.seed = seed;
    validate(ts);

    write_resolved(r, Command::compare, dir);
    save_image(data.clean, dir / "clean.pgm");
    save_image(data.observation, dir / "observation.pgm");
    if (data.mask) save_image(*data.mask, dir / "mask.pgm");

    const fs::path dir_a = dir / "baseline", dir_b = dir / "pretrained";
    fs::create_directories(dir_a);
    fs::create_directories(dir_b);

    const TaskResult a = run_task(spec, theta0, ts);
    write_trace_csv(a.trace, dir_a / "trace.csv", log_every);
    save_image(a.output, dir_a / "output.pgm");
    save_params(a.params, spec, dir_a / "params.bin");
    out << "baseline: done (" << iters << " iterations)\n";

    const auto pre = pretrain(spec, theta0, pcfg, task_input(spec, data.out_h, data.out_w, seed));
    write_trace_csv(pre.trace, dir_b / "pretrain_trace.csv", log_every);
    save_params(pre.params, spec, dir_b / "pretrained_params.bin");
    const TaskResult b = run_task(spec, pre.params, ts);
    write_trace_csv(b.trace, dir_b / "trace.csv", log_every);
    save_image(b.output, dir_b / "output.pgm");
    save_params(b.params, spec, dir_b / "params.bin");
    out << "pretrained: done (" << pcfg.iterations << " pretraining + " << iters << " iterations)\n";

    std::ostringstream sum;
    sum << "metric,value\n";
    const auto cross = crossover_iter(a.trace, b.trace);
    summary_row(sum, "crossover_iter", cross ? std::optional<double>(static_cast<double>(*cross)) : std::nullopt);
    const auto peak_row = [&](const std::string& tag, const TaskResult& t) {
        const auto it = t.peak_psnr_iter;
        summary_row(sum, "peak_psnr_iter_" + tag, it ? std::optional<double>(static_cast<double>(*it)) : std::nullopt);
        summary_row(sum, "peak_psnr_" + tag, it ? t.trace.psnr_at(*it) : std::nullopt);
        summary_row(sum, "final_psnr_" + tag, t.trace.records.back().psnr);
    };
    peak_row("baseline", a);
    peak_row("pretrained", b);

    if (net.siren) {
        const std::size_t grid_side = data.out_h;
        if (data.out_h != data.out_w) throw ConfigError("the NTK probe grid needs a square image");
        const NtkRun ka = analyse_ntk(spec, theta0, grid_side, probe_size, cap);
        const NtkRun kb = analyse_ntk(spec, pre.params, grid_side, probe_size, cap);
        write_ntk(ka, dir / "ntk_init", top_k, false);
        write_ntk(kb, dir / "ntk_pretrained", top_k, false);
        const auto spectral_rows = [&](const std::string& tag, const SpectralReport& rep) {
            for (std::size_t i = 0; i < rep.decay_ks.size(); ++i) {
                const auto& d = rep.decay_ratios[i];
                summary_row(sum, "decay_ratio_" + std::to_string(rep.decay_ks[i]) + "_" + tag,
                            d.degenerate ? std::nullopt : std::optional<double>(d.value));
            }
            summary_row(sum, "effective_rank_" + tag, rep.effective_rank);
            summary_row(sum, "band_width_" + tag, rep.band_width);
        };
        spectral_rows("init", ka.report);
        spectral_rows("pretrained", kb.report);
    }
    write_file(dir / "summary.csv", sum.str());
    out << "compare " << to_string(task) << ": crossover_iter " << (cross ? std::to_string(*cross) : "none")
        << " -> " << (dir / "summary.csv").string() << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("noise-target pretraining, NTK spectra and single-image tasks", "noiseinit");
    app.fallthrough();
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "flat `key = value` file; command-line flags win");
    app.require_subcommand(1);

    std::map<std::string, std::string> storage;
    std::map<std::string, CLI::Option*> options;
    for (const auto& k : kKeys) {
        auto* opt = app.add_option(std::string("--") + k.name, storage[k.name], k.help);
        if (std::string(k.name) == "noise") opt->multi_option_policy(CLI::MultiOptionPolicy::Join)->delimiter(',');
        options[k.name] = opt;
    }
    std::string train_task, compare_task;
    auto* sub_init = app.add_subcommand("init", "write freshly initialised parameters");
    auto* sub_pre = app.add_subcommand("pretrain", "fit the net to a random-noise target");
    auto* sub_train = app.add_subcommand("train", "run one task");
    sub_train->add_option("task", train_task, "represent | superres | denoise | inpaint");
    auto* sub_ntk = app.add_subcommand("ntk", "empirical NTK spectrum and diagnostics");
    auto* sub_cmp = app.add_subcommand("compare", "random init vs noise-pretrained init on one task");
    sub_cmp->add_option("task", compare_task, "represent | superres | denoise | inpaint (default represent)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    Settings given;
    for (const auto& [name, opt] : options) {
        if (opt->count() > 0) given[name] = storage[name];
    }

    try {
        const auto pick_task = [&](const std::string& positional, bool required) -> std::optional<TaskKind> {
            if (!positional.empty()) {
                given["task"] = positional;
            }
            const auto it = given.find("task");
            if (it == given.end()) {
                if (required) throw ConfigError("missing required key 'task' (represent, superres, denoise, inpaint)");
                return std::nullopt;
            }
            return parse_task_kind(it->second);
        };
        if (sub_init->parsed()) {
            Resolver r(given);
            return cmd_init(r, out);
        }
        if (sub_pre->parsed()) {
            Resolver r(given);
            return cmd_pretrain(r, out);
        }
        if (sub_train->parsed()) {
            const TaskKind task = *pick_task(train_task, true);
            Resolver r(given);
            return cmd_train(r, task, out);
        }
        if (sub_ntk->parsed()) {
            Resolver r(given);
            return cmd_ntk(r, out);
        }
        if (sub_cmp->parsed()) {
            const TaskKind task = pick_task(compare_task, false).value_or(TaskKind::represent);
            Resolver r(given);
            return cmd_compare(r, task, out);
        }
        err << "error: no command\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const ResourceError& e) {
        err << "resource error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::bad_alloc&) {
        err << "resource error: out of memory\n";
        return kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

}  // namespace noiseinit
