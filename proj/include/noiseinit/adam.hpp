#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "noiseinit/nets.hpp"
#include "noiseinit/tensor.hpp"

namespace noiseinit {

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
    AdamHyper hyper;

    static AdamState fresh(std::size_t size, AdamHyper hyper);
};

// In-place update of `params` with bias-corrected Adam; advances state.t.
void adam_update(AdamState& state, std::span<double> params, std::span<const double> grads);

std::pair<AdamState, ParamVector> adam_step(AdamState state, ParamVector params, const ParamVector& grads);

}  // namespace noiseinit
