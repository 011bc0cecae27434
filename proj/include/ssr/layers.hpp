#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ssr/tensor.hpp"

namespace ssr::tensor {

enum class LayerKind {
    conv1d,
    tconv1d,
    conv2d,
    relu,
    residual_add,
    concat,
    elementwise_product,
};

std::string_view to_string(LayerKind kind);

// Layout conventions:
//   conv1d / tconv1d   input (batch, channels, length)
//   conv2d             input (batch, channels, height, width), square kernel
//   relu               any shape
//   residual_add       two equal shapes
//   concat             two inputs joined along axis 1
//   elementwise_product  a * b; b may have extent 1 on axis 1 (broadcast)
//
// Weights: conv1d (out, in, k), tconv1d (in, out, k), conv2d (out, in, k, k).
// Padding is zero padding. For tconv1d it is an explicit crop of `padding`
// samples from each end of the full transposed output.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int kernel_size = 1;
    int stride = 1;
    int in_channels = 0;
    int out_channels = 0;
    int padding = 0;
    bool has_bias = false;

    static LayerSpec conv1d(int in, int out, int kernel, int padding = 0, int stride = 1,
                            bool bias = true);
    static LayerSpec tconv1d(int in, int out, int kernel, int stride, int padding = 0,
                             bool bias = true);
    static LayerSpec conv2d(int in, int out, int kernel, int padding = 0, int stride = 1,
                            bool bias = true);
    static LayerSpec relu();
    static LayerSpec residual_add();
    static LayerSpec concat();
    static LayerSpec elementwise_product();

    bool has_params() const noexcept;
    std::size_t arity() const noexcept;

    /// Spatial/spectral output extent for one input extent. Throws DataError
    /// when the arithmetic yields an empty output.
    std::size_t output_length(std::size_t input_length) const;

    Shape weight_shape() const;
    Shape bias_shape() const;

    /// Throws DataError if the spec itself is malformed (stride < 1, ...).
    void validate() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ParamPair {
    Tensor weight;
    Tensor bias;
};

/// Everything backward() needs to reproduce the forward map exactly.
class Cache {
public:
    Cache() = default;
    bool valid() const noexcept { return valid_; }

private:
    friend struct CacheAccess;
    bool valid_ = false;
    LayerSpec spec_;
    std::vector<Tensor> inputs_;
    Tensor weight_;
    Shape output_shape_;
};

struct ForwardResult {
    Tensor output;
    Cache cache;
};

struct BackwardResult {
    std::vector<Tensor> grad_inputs;
    ParamPair grad_params;
};

ForwardResult forward(const LayerSpec& layer, std::span<const Tensor* const> inputs,
                      const ParamPair* params);

inline ForwardResult forward(const LayerSpec& layer, const Tensor& x, const ParamPair& params) {
    const Tensor* in[] = {&x};
    return forward(layer, in, &params);
}

inline ForwardResult forward(const LayerSpec& layer, const Tensor& x) {
    const Tensor* in[] = {&x};
    return forward(layer, in, nullptr);
}

inline ForwardResult forward(const LayerSpec& layer, const Tensor& a, const Tensor& b) {
    const Tensor* in[] = {&a, &b};
    return forward(layer, in, nullptr);
}

/// Throws DataError when the cache does not belong to `layer` or grad_out
/// has a different shape than the cached output.
BackwardResult backward(const LayerSpec& layer, const Tensor& grad_out, const Cache& cache);

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

/// Mean squared error and its gradient 2 (pred - target) / count.
LossResult l2_loss(const Tensor& pred, const Tensor& target);

}  // namespace ssr::tensor
