#include "noiseinit/adam.hpp"

#include <cmath>

#include "noiseinit/error.hpp"

namespace noiseinit {

AdamState AdamState::fresh(std::size_t size, AdamHyper hyper) {
    if (!(hyper.lr >= 0.0)) throw ParameterError("adam: learning rate must be >= 0");
    if (!(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0 && hyper.beta2 >= 0.0 && hyper.beta2 < 1.0)) {
        throw ParameterError("adam: betas must lie in [0, 1)");
    }
    if (!(hyper.eps > 0.0)) throw ParameterError("adam: eps must be > 0");
    return AdamState{Tensor({size}), Tensor({size}), 0, hyper};
}

void adam_update(AdamState& state, std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam: length mismatch (params " + std::to_string(params.size()) + ", grads " +
                             std::to_string(grads.size()) + ", state " + std::to_string(state.m.size()) + ")");
    }
    const auto& h = state.hyper;
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(h.beta1, t);
    const double correction2 = 1.0 - std::pow(h.beta2, t);
    auto m = state.m.data();
    auto v = state.v.data();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        params[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
}

std::pair<AdamState, ParamVector> adam_step(AdamState state, ParamVector params, const ParamVector& grads) {
    adam_update(state, params.values.data(), grads.values.data());
    return {std::move(state), std::move(params)};
}

}  // namespace noiseinit
