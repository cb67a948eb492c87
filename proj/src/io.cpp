#include "noiseinit/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "noiseinit/error.hpp"

namespace noiseinit {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

namespace {

class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

    std::size_t offset() const noexcept { return pos_; }

    unsigned long read_uint(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        unsigned long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<unsigned long>(bytes_[pos_] - '0');
            if (value > 1'000'000'000UL) fail(std::string(what) + " is too large", start);
            ++pos_;
        }
        if (pos_ == start) fail(std::string("expected ") + what, start);
        return value;
    }

    void expect_single_whitespace() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            fail("expected whitespace after maxval", pos_);
        }
        ++pos_;
    }

    [[noreturn]] static void fail(const std::string& msg, std::size_t at) {
        throw FormatError("malformed PNM header at byte " + std::to_string(at) + ": " + msg);
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

ImageFile parse_image(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("unsupported image magic (expected P5 or P6)");
    std::size_t channels = 0;
    if (bytes[1] == '5') {
        channels = 1;
    } else if (bytes[1] == '6') {
        channels = 3;
    } else {
        throw FormatError(std::string("unsupported image magic 'P") + bytes[1] + "' (expected P5 or P6)");
    }
    HeaderReader header(bytes);
    const auto width = header.read_uint("width");
    const auto height = header.read_uint("height");
    const std::size_t maxval_at = header.offset();
    const auto maxval = header.read_uint("maxval");
    if (width == 0 || height == 0) HeaderReader::fail("zero image dimension", maxval_at);
    if (maxval == 0 || maxval > 65535) HeaderReader::fail("maxval must lie in [1, 65535]", maxval_at);
    header.expect_single_whitespace();

    const std::size_t bytes_per_sample = maxval < 256 ? 1 : 2;
    const std::size_t samples = width * height * channels;
    const std::size_t payload = header.offset();
    if (bytes.size() - payload < samples * bytes_per_sample) {
        throw FormatError("truncated PNM payload: need " + std::to_string(samples * bytes_per_sample) +
                          " bytes after offset " + std::to_string(payload) + ", have " +
                          std::to_string(bytes.size() - payload));
    }
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + payload);
    const double scale = 1.0 / static_cast<double>(maxval);
    std::vector<double> interleaved(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        unsigned value = bytes_per_sample == 1 ? src[i] : (unsigned{src[2 * i]} << 8) | src[2 * i + 1];
        value = std::min<unsigned>(value, static_cast<unsigned>(maxval));
        interleaved[i] = static_cast<double>(value) * scale;
    }
    ImageFile image;
    image.source_depth = bytes_per_sample == 1 ? 8 : 16;
    if (channels == 1) {
        image.pixels = Tensor({height, width}, std::move(interleaved));
    } else {
        Tensor planar({3, height, width});
        const std::size_t plane = width * height;
        for (std::size_t i = 0; i < plane; ++i) {
            for (std::size_t c = 0; c < 3; ++c) planar[c * plane + i] = interleaved[i * 3 + c];
        }
        image.pixels = std::move(planar);
    }
    return image;
}

ImageFile load_image(const std::filesystem::path& path) { return parse_image(read_file(path)); }

Tensor to_grayscale(const ImageFile& image) {
    const Tensor& px = image.pixels;
    if (px.rank() == 2) return px;
    const std::size_t h = px.dim(1), w = px.dim(2), plane = h * w;
    Tensor gray({h, w});
    for (std::size_t i = 0; i < plane; ++i) {
        gray[i] = 0.299 * px[i] + 0.587 * px[plane + i] + 0.114 * px[2 * plane + i];
    }
    return gray;
}

Tensor load_grayscale(const std::filesystem::path& path) { return to_grayscale(load_image(path)); }

std::string encode_pgm(const Tensor& image) {
    Tensor img = image;
    if (img.rank() == 3 && img.dim(0) == 1) img = img.reshaped({img.dim(1), img.dim(2)});
    if (img.rank() != 2) throw DimensionError("save_image expects an h×w image, got " + to_string(image.shape()));
    const std::string header =
        "P5\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
    std::string out = header;
    out.reserve(header.size() + img.size());
    for (double v : img.data()) {
        if (std::isnan(v)) throw ParameterError("save_image: NaN pixel");
        const double clamped = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(clamped * 255.0 + 0.5))));
    }
    return out;
}

void save_image(const Tensor& image, const std::filesystem::path& path) { write_file(path, encode_pgm(image)); }

// ---------------------------------------------------------------------------
// Little-endian binary helpers
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

    std::uint64_t u(int width, const char* what) {
        if (bytes_.size() - pos_ < static_cast<std::size_t>(width)) {
            throw FormatError(std::string("truncated file while reading ") + what + " at byte " +
                              std::to_string(pos_));
        }
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])} << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    double f64() {
        const std::uint64_t bits = u(8, "payload");
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    std::size_t offset() const noexcept { return pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_;
};

constexpr char kMatrixMagic[4] = {'N', 'I', 'M', 'T'};

}  // namespace

std::string encode_matrix(const Tensor& t) {
    std::string out(kMatrixMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_f64(out, v);
    return out;
}

Tensor decode_matrix(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMatrixMagic, 4) != 0) {
        throw FormatError("matrix file: bad magic (expected NIMT)");
    }
    ByteReader reader(bytes, 4);
    const auto rank = reader.u(4, "rank");
    if (rank > 8) throw FormatError("matrix file: implausible rank " + std::to_string(rank));
    Shape shape;
    std::size_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
        const auto d = reader.u(8, "dimension");
        shape.push_back(static_cast<std::size_t>(d));
        if (d != 0 && count > (bytes.size() / 8) / d + 1) {
            throw FormatError("matrix file: dimensions exceed file size");
        }
        count *= static_cast<std::size_t>(d);
    }
    if (reader.remaining() != count * 8) {
        throw FormatError("matrix file: payload holds " + std::to_string(reader.remaining()) + " bytes, dims need " +
                          std::to_string(count * 8));
    }
    std::vector<double> data(count);
    for (auto& v : data) v = reader.f64();
    return Tensor(std::move(shape), std::move(data));
}

void save_matrix(const Tensor& t, const std::filesystem::path& path) { write_file(path, encode_matrix(t)); }

Tensor load_matrix(const std::filesystem::path& path) { return decode_matrix(read_file(path)); }

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

void save_params(const ParamVector& params, const NetworkSpec& spec, const std::filesystem::path& path) {
    if (params.size() != parameter_count(spec)) {
        throw DimensionError("save_params: parameter vector does not match spec '" + describe(spec) + "'");
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(spec_hash(spec)));
    std::string out = "NIPARAMS v1 spec=" + std::string(hash) + " length=" + std::to_string(params.size()) + "\n";
    out.reserve(out.size() + params.size() * 8);
    for (double v : params.values.data()) put_f64(out, v);
    write_file(path, out);
}

ParamVector load_params(const std::filesystem::path& path, const NetworkSpec& spec) {
    const std::string bytes = read_file(path);
    const auto eol = bytes.find('\n');
    if (eol == std::string::npos || eol > 256) throw FormatError("params file: missing header line");
    std::istringstream header(bytes.substr(0, eol));
    std::string magic, version, spec_field, length_field;
    header >> magic >> version >> spec_field >> length_field;
    if (magic != "NIPARAMS" || version != "v1") throw FormatError("params file: bad magic/version");
    if (spec_field.rfind("spec=", 0) != 0 || length_field.rfind("length=", 0) != 0) {
        throw FormatError("params file: malformed header '" + bytes.substr(0, eol) + "'");
    }
    char expected[17];
    std::snprintf(expected, sizeof expected, "%016llx", static_cast<unsigned long long>(spec_hash(spec)));
    if (spec_field.substr(5) != expected) {
        throw FormatError("params file was written for a different network (spec hash " + spec_field.substr(5) +
                          ", expected " + expected + " for '" + describe(spec) + "')");
    }
    const std::string len_text = length_field.substr(7);
    char* end = nullptr;
    const unsigned long long length = std::strtoull(len_text.c_str(), &end, 10);
    if (len_text.empty() || *end != '\0') throw FormatError("params file: bad length field");
    auto params = ParamVector::zeros(spec);
    if (length != params.size()) {
        throw FormatError("params file length " + std::to_string(length) + " does not match spec size " +
                          std::to_string(params.size()));
    }
    ByteReader reader(bytes, eol + 1);
    if (reader.remaining() != length * 8) throw FormatError("params file: payload size mismatch");
    for (double& v : params.values.data()) {
        v = reader.f64();
        if (!std::isfinite(v)) throw FormatError("params file: non-finite parameter");
    }
    return params;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string format_trace_csv(const TrainingTrace& trace, std::size_t log_every) {
    if (log_every == 0) throw ParameterError("log_every must be >= 1");
    std::string out = "iter,loss,psnr\n";
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const auto& r = trace.records[i];
        const bool last = i + 1 == trace.records.size();
        if (r.iter % log_every != 0 && !last) continue;
        out += std::to_string(r.iter);
        out += ',';
        out += format_double(r.loss);
        out += ',';
        if (r.psnr) out += format_double(*r.psnr);
        out += '\n';
    }
    return out;
}

void write_trace_csv(const TrainingTrace& trace, const std::filesystem::path& path, std::size_t log_every) {
    write_file(path, format_trace_csv(trace, log_every));
}

namespace {

double parse_double(const std::string& field, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (field.empty() || *end != '\0') {
        throw FormatError("trace csv line " + std::to_string(line) + ": bad number '" + field + "'");
    }
    return v;
}

}  // namespace

TrainingTrace parse_trace_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "iter,loss,psnr") throw FormatError("trace csv: missing header");
    TrainingTrace trace;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) throw FormatError("trace csv line " + std::to_string(lineno) + ": need 3 fields");
        TraceRecord r;
        const std::string iter_text = line.substr(0, c1);
        char* end = nullptr;
        r.iter = std::strtoull(iter_text.c_str(), &end, 10);
        if (iter_text.empty() || *end != '\0') {
            throw FormatError("trace csv line " + std::to_string(lineno) + ": bad iter");
        }
        r.loss = parse_double(line.substr(c1 + 1, c2 - c1 - 1), lineno);
        const std::string psnr = line.substr(c2 + 1);
        if (!psnr.empty()) r.psnr = parse_double(psnr, lineno);
        trace.records.push_back(r);
    }
    return trace;
}

TrainingTrace read_trace_csv(const std::filesystem::path& path) { return parse_trace_csv(read_file(path)); }

void write_eigenvalues_csv(const NtkSpectrum& spectrum, const std::filesystem::path& path) {
    std::string out = "k,eigenvalue\n";
    for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i) {
        out += std::to_string(i + 1) + "," + format_double(spectrum.eigenvalues[i]) + "\n";
    }
    write_file(path, out);
}

void write_report_csv(const SpectralReport& report, const std::filesystem::path& path) {
    std::string out = "metric,value\n";
    for (std::size_t i = 0; i < report.decay_ks.size(); ++i) {
        out += "decay_ratio_" + std::to_string(report.decay_ks[i]) + "," +
               format_double(report.decay_ratios[i].value) + "\n";
    }
    out += "effective_rank," + format_double(report.effective_rank) + "\n";
    out += "band_width," + format_double(report.band_width) + "\n";
    for (std::size_t i = 0; i < report.eigvec_freq_centroids.size(); ++i) {
        out += "freq_centroid_" + std::to_string(i + 1) + "," + format_double(report.eigvec_freq_centroids[i]) + "\n";
    }
    write_file(path, out);
}

}  // namespace noiseinit
