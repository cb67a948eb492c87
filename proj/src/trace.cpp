#include "noiseinit/trace.hpp"

#include <algorithm>

namespace noiseinit {

std::vector<double> TrainingTrace::losses() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.loss);
    return out;
}

std::optional<std::size_t> TrainingTrace::peak_psnr_iter() const {
    std::optional<std::size_t> best;
    double best_psnr = 0.0;
    for (const auto& r : records) {
        if (!r.psnr) continue;
        if (!best || *r.psnr > best_psnr) {
            best = r.iter;
            best_psnr = *r.psnr;
        }
    }
    return best;
}

std::optional<double> TrainingTrace::psnr_at(std::size_t iter) const {
    for (const auto& r : records) {
        if (r.iter == iter) return r.psnr;
    }
    return std::nullopt;
}

std::optional<std::size_t> crossover_iter(const TrainingTrace& baseline, const TrainingTrace& challenger) {
    std::optional<std::size_t> lead_from;
    const std::size_t n = std::min(baseline.size(), challenger.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = baseline.records[i];
        const auto& b = challenger.records[i];
        if (a.iter != b.iter || !a.psnr || !b.psnr) return std::nullopt;
        if (*b.psnr > *a.psnr) {
            if (!lead_from) lead_from = b.iter;
        } else {
            lead_from.reset();
        }
    }
    return lead_from;
}

}  // namespace noiseinit
