#include "ssr/adam.hpp"

#include <cmath>

#include "ssr/errors.hpp"

namespace ssr::tensor {

AdamOutcome adam_step(std::span<Parameter> params, std::span<const Tensor> grads,
                      AdamState& state) {
    if (params.size() != grads.size()) {
        throw DataError("adam_step: " + std::to_string(params.size()) + " params but " +
                        std::to_string(grads.size()) + " grads");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].value.shape() != grads[i].shape()) {
            throw DataError("adam_step: grad for '" + params[i].name + "' has shape " +
                            shape_str(grads[i].shape()) + ", param is " +
                            shape_str(params[i].value.shape()));
        }
    }
    if (state.m.empty() && state.v.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DataError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].shape() != params[i].value.shape() ||
            state.v[i].shape() != params[i].value.shape()) {
            throw DataError("adam_step: moment shape mismatch for '" + params[i].name + "'");
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].frozen && !grads[i].all_finite()) {
            return {false, "non-finite gradient for '" + params[i].name + "'; step rejected"};
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const float b1 = state.beta1, b2 = state.beta2;
    const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(b1), t));
    const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(b2), t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].frozen) continue;
        float* p = params[i].value.data();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        const float* g = grads[i].data();
        const std::size_t n = grads[i].size();
        for (std::size_t k = 0; k < n; ++k) {
            m[k] = b1 * m[k] + (1.0f - b1) * g[k];
            v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
            const float mhat = m[k] / c1;
            const float vhat = v[k] / c2;
            p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
    return {true, {}};
}

}  // namespace ssr::tensor
