#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace noiseinit {

enum class ReferenceKind { none, target, clean_ground_truth };

struct TraceRecord {
    std::size_t iter = 0;
    double loss = 0.0;
    std::optional<double> psnr;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// Per-iteration record of a run; record i holds the state after i updates.
struct TrainingTrace {
    std::vector<TraceRecord> records;
    ReferenceKind reference_kind = ReferenceKind::none;

    bool empty() const noexcept { return records.empty(); }
    std::size_t size() const noexcept { return records.size(); }
    std::vector<double> losses() const;
    // Iteration of the highest PSNR (first one on ties), if any PSNR was logged.
    std::optional<std::size_t> peak_psnr_iter() const;
    std::optional<double> psnr_at(std::size_t iter) const;
};

// First iteration from which `challenger` keeps a strictly higher PSNR than
// `baseline` through the last shared iteration. nullopt if it never takes a
// lasting lead (or there is no PSNR to compare).
std::optional<std::size_t> crossover_iter(const TrainingTrace& baseline, const TrainingTrace& challenger);

}  // namespace noiseinit
