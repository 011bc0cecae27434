#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssr/tensor.hpp"

namespace ssr::tensor {

struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
};

struct AdamOutcome {
    bool applied = false;
    std::string incident;  // set when the step was rejected
};

/// One bias-corrected Adam update over `params` in place. Frozen parameters
/// keep their value and moments. Moments are zero-initialized on the first
/// call. A non-finite gradient rejects the whole step and leaves both params
/// and state untouched.
AdamOutcome adam_step(std::span<Parameter> params, std::span<const Tensor> grads,
                      AdamState& state);

}  // namespace ssr::tensor
