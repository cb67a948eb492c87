#pragma once

#include <filesystem>
#include <string>

#include "noiseinit/nets.hpp"
#include "noiseinit/ntk.hpp"
#include "noiseinit/tensor.hpp"
#include "noiseinit/trace.hpp"

namespace noiseinit {

// Binary PGM (P5) / PPM (P6) images, 8- or 16-bit.
struct ImageFile {
    Tensor pixels;         // h×w (P5) or 3×h×w (P6), values in [0, 1]
    int source_depth = 8;  // bits per sample in the file
};

ImageFile load_image(const std::filesystem::path& path);
// Grayscale view of any supported image; colour is reduced with luma
// weights 0.299, 0.587, 0.114.
Tensor load_grayscale(const std::filesystem::path& path);
Tensor to_grayscale(const ImageFile& image);
ImageFile parse_image(const std::string& bytes);

// Writes an h×w (or 1×h×w) tensor as 8-bit P5, clamping to [0, 1] and
// rounding half up.
void save_image(const Tensor& image, const std::filesystem::path& path);
std::string encode_pgm(const Tensor& image);

// Matrix/tensor dump:
//   "NIMT"  4-byte magic
//   u32     rank (little-endian)
//   u64     dims[rank]
//   f64     payload, row-major, little-endian
void save_matrix(const Tensor& t, const std::filesystem::path& path);
Tensor load_matrix(const std::filesystem::path& path);
std::string encode_matrix(const Tensor& t);
Tensor decode_matrix(const std::string& bytes);

// Parameter file: one text line
//   "NIPARAMS v1 spec=<16 hex digits> length=<p>\n"
// followed by p little-endian f64 values.
void save_params(const ParamVector& params, const NetworkSpec& spec, const std::filesystem::path& path);
ParamVector load_params(const std::filesystem::path& path, const NetworkSpec& spec);

// Header `iter,loss,psnr`; floats with 17 significant digits; empty psnr
// field when the run had no reference. `log_every` > 1 keeps every k-th
// record plus the last.
void write_trace_csv(const TrainingTrace& trace, const std::filesystem::path& path, std::size_t log_every = 1);
std::string format_trace_csv(const TrainingTrace& trace, std::size_t log_every = 1);
TrainingTrace read_trace_csv(const std::filesystem::path& path);
TrainingTrace parse_trace_csv(const std::string& text);

void write_eigenvalues_csv(const NtkSpectrum& spectrum, const std::filesystem::path& path);
void write_report_csv(const SpectralReport& report, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string format_double(double v);

}  // namespace noiseinit
