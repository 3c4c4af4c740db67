#pragma once

#include <cmath>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

// Adam with bias correction. Moment buffers are laid out parallel to the
// parameter list handed to the first adam_step call.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;
    struct Slot {
        std::vector<double> first_moment;
        std::vector<double> second_moment;
    };
    std::vector<Slot> slots;
};

inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
    if (!(lr > 0.0)) throw ParamError("adam_step: learning rate must be positive");
    if (state.slots.empty()) {
        state.slots.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.slots[i].first_moment.assign(params[i].numel(), 0.0);
            state.slots[i].second_moment.assign(params[i].numel(), 0.0);
        }
    }
    if (state.slots.size() != params.size())
        throw ContractError("adam_step: parameter list does not match optimizer state");
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = params[p];
        const std::vector<double>& g = w.grad();
        AdamState::Slot& slot = state.slots[p];
        if (slot.first_moment.size() != w.numel())
            throw ContractError("adam_step: parameter " + std::to_string(p) +
                                " changed size under the optimizer");
        double* vals = w.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            slot.first_moment[i] = state.beta1 * slot.first_moment[i] + (1.0 - state.beta1) * g[i];
            slot.second_moment[i] =
                state.beta2 * slot.second_moment[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = slot.first_moment[i] / bc1;
            const double vhat = slot.second_moment[i] / bc2;
            vals[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace mmgf
