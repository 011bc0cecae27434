#include "ssr/layers.hpp"

#include <algorithm>
#include <string>

#include "ssr/errors.hpp"

namespace ssr::tensor {

struct CacheAccess {
    static Cache make(const LayerSpec& spec, std::vector<Tensor> inputs, Tensor weight,
                      Shape out_shape) {
        Cache c;
        c.valid_ = true;
        c.spec_ = spec;
        c.inputs_ = std::move(inputs);
        c.weight_ = std::move(weight);
        c.output_shape_ = std::move(out_shape);
        return c;
    }
    static const LayerSpec& spec(const Cache& c) { return c.spec_; }
    static const std::vector<Tensor>& inputs(const Cache& c) { return c.inputs_; }
    static const Tensor& weight(const Cache& c) { return c.weight_; }
    static const Shape& output_shape(const Cache& c) { return c.output_shape_; }
};

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv1d: return "conv1d";
        case LayerKind::tconv1d: return "tconv1d";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::residual_add: return "residual-add";
        case LayerKind::concat: return "concat";
        case LayerKind::elementwise_product: return "elementwise-product";
    }
    return "unknown";
}

LayerSpec LayerSpec::conv1d(int in, int out, int kernel, int padding, int stride, bool bias) {
    return {LayerKind::conv1d, kernel, stride, in, out, padding, bias};
}
LayerSpec LayerSpec::tconv1d(int in, int out, int kernel, int stride, int padding, bool bias) {
    return {LayerKind::tconv1d, kernel, stride, in, out, padding, bias};
}
LayerSpec LayerSpec::conv2d(int in, int out, int kernel, int padding, int stride, bool bias) {
    return {LayerKind::conv2d, kernel, stride, in, out, padding, bias};
}
LayerSpec LayerSpec::relu() { return {LayerKind::relu}; }
LayerSpec LayerSpec::residual_add() { return {LayerKind::residual_add}; }
LayerSpec LayerSpec::concat() { return {LayerKind::concat}; }
LayerSpec LayerSpec::elementwise_product() { return {LayerKind::elementwise_product}; }

bool LayerSpec::has_params() const noexcept {
    return kind == LayerKind::conv1d || kind == LayerKind::tconv1d || kind == LayerKind::conv2d;
}

std::size_t LayerSpec::arity() const noexcept {
    switch (kind) {
        case LayerKind::residual_add:
        case LayerKind::concat:
        case LayerKind::elementwise_product: return 2;
        default: return 1;
    }
}

void LayerSpec::validate() const {
    auto fail = [&](const std::string& what) {
        throw DataError(std::string(to_string(kind)) + ": " + what);
    };
    if (stride < 1) fail("stride must be >= 1");
    if (kernel_size < 1) fail("kernel_size must be >= 1");
    if (padding < 0) fail("padding must be >= 0");
    if (has_params() && (in_channels < 1 || out_channels < 1)) fail("channel counts must be >= 1");
}

std::size_t LayerSpec::output_length(std::size_t input_length) const {
    const long long L = static_cast<long long>(input_length);
    long long out = L;
    switch (kind) {
        case LayerKind::conv1d:
        case LayerKind::conv2d: {
            const long long span = L + 2LL * padding - kernel_size;
            out = span < 0 ? 0 : span / stride + 1;
            break;
        }
        case LayerKind::tconv1d:
            out = L < 1 ? 0 : static_cast<long long>(stride) * (L - 1) + kernel_size - 2LL * padding;
            break;
        default: break;
    }
    if (out < 1) {
        throw DataError(std::string(to_string(kind)) + ": input length " +
                        std::to_string(input_length) + " yields empty output");
    }
    return static_cast<std::size_t>(out);
}

Shape LayerSpec::weight_shape() const {
    const auto in = static_cast<std::size_t>(in_channels);
    const auto out = static_cast<std::size_t>(out_channels);
    const auto k = static_cast<std::size_t>(kernel_size);
    switch (kind) {
        case LayerKind::conv1d: return {out, in, k};
        case LayerKind::tconv1d: return {in, out, k};
        case LayerKind::conv2d: return {out, in, k, k};
        default: return {};
    }
}

Shape LayerSpec::bias_shape() const {
    if (!has_params() || !has_bias) return {};
    return {static_cast<std::size_t>(out_channels)};
}

namespace {

[[noreturn]] void shape_fail(const LayerSpec& layer, const std::string& what) {
    throw DataError(std::string(to_string(layer.kind)) + ": " + what);
}

void expect_rank(const LayerSpec& layer, const Tensor& x, std::size_t rank, const char* layout) {
    if (x.rank() != rank) {
        shape_fail(layer, "expected rank " + std::to_string(rank) + " input " + layout + ", got " +
                              shape_str(x.shape()));
    }
}

void expect_channels(const LayerSpec& layer, const Tensor& x) {
    if (x.dim(1) != static_cast<std::size_t>(layer.in_channels)) {
        shape_fail(layer, "input axis 1 (channels) is " + std::to_string(x.dim(1)) +
                              ", layer expects " + std::to_string(layer.in_channels));
    }
}

void expect_params(const LayerSpec& layer, const ParamPair* params) {
    if (!params) shape_fail(layer, "parameters required");
    if (params->weight.shape() != layer.weight_shape()) {
        shape_fail(layer, "weight shape " + shape_str(params->weight.shape()) + ", expected " +
                              shape_str(layer.weight_shape()));
    }
    if (params->bias.shape() != layer.bias_shape() &&
        !(layer.bias_shape().empty() && params->bias.empty())) {
        shape_fail(layer, "bias shape " + shape_str(params->bias.shape()) + ", expected " +
                              shape_str(layer.bias_shape()));
    }
}

// Valid output index range [lo, hi) such that 0 <= t*s + off < limit.
struct Range {
    long long lo, hi;
};

Range valid_range(long long off, long long stride, long long limit, long long count) {
    long long lo = 0;
    if (off < 0) lo = (-off + stride - 1) / stride;
    long long hi = count;
    // t*s + off <= limit - 1  =>  t <= (limit - 1 - off) / s
    const long long top = limit - 1 - off;
    if (top < 0) return {0, 0};
    hi = std::min(hi, top / stride + 1);
    return {lo, std::max(lo, hi)};
}

// ---- conv1d ----------------------------------------------------------------

Tensor conv1d_fwd(const LayerSpec& l, const Tensor& x, const ParamPair& p) {
    const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::size_t O = static_cast<std::size_t>(l.out_channels);
    const std::size_t K = static_cast<std::size_t>(l.kernel_size);
    const std::size_t Lo = l.output_length(L);
    const long long s = l.stride, pad = l.padding;
    Tensor y({N, O, Lo});
    const float* w = p.weight.data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            float* yr = y.data() + (n * O + o) * Lo;
            if (l.has_bias) std::fill(yr, yr + Lo, p.bias[o]);
            for (std::size_t i = 0; i < C; ++i) {
                const float* xr = x.data() + (n * C + i) * L;
                for (std::size_t j = 0; j < K; ++j) {
                    const float wv = w[(o * C + i) * K + j];
                    const long long off = static_cast<long long>(j) - pad;
                    const Range r = valid_range(off, s, static_cast<long long>(L),
                                                static_cast<long long>(Lo));
                    for (long long t = r.lo; t < r.hi; ++t) yr[t] += wv * xr[t * s + off];
                }
            }
        }
    }
    return y;
}

void conv1d_bwd(const LayerSpec& l, const Tensor& x, const Tensor& w, const Tensor& gy,
                Tensor& gx, ParamPair& gp) {
    const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::size_t O = gy.dim(1), Lo = gy.dim(2);
    const std::size_t K = static_cast<std::size_t>(l.kernel_size);
    const long long s = l.stride, pad = l.padding;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            const float* gr = gy.data() + (n * O + o) * Lo;
            if (l.has_bias) {
                float acc = 0.0f;
                for (std::size_t t = 0; t < Lo; ++t) acc += gr[t];
                gp.bias[o] += acc;
            }
            for (std::size_t i = 0; i < C; ++i) {
                const float* xr = x.data() + (n * C + i) * L;
                float* gxr = gx.data() + (n * C + i) * L;
                for (std::size_t j = 0; j < K; ++j) {
                    const std::size_t wi = (o * C + i) * K + j;
                    const float wv = w[wi];
                    const long long off = static_cast<long long>(j) - pad;
                    const Range r = valid_range(off, s, static_cast<long long>(L),
                                                static_cast<long long>(Lo));
                    float acc = 0.0f;
                    for (long long t = r.lo; t < r.hi; ++t) {
                        acc += gr[t] * xr[t * s + off];
                        gxr[t * s + off] += gr[t] * wv;
                    }
                    gp.weight[wi] += acc;
                }
            }
        }
    }
}

// ---- tconv1d ---------------------------------------------------------------

Tensor tconv1d_fwd(const LayerSpec& l, const Tensor& x, const ParamPair& p) {
    const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::size_t O = static_cast<std::size_t>(l.out_channels);
    const std::size_t K = static_cast<std::size_t>(l.kernel_size);
    const std::size_t Lo = l.output_length(L);
    const long long s = l.stride, pad = l.padding;
    Tensor y({N, O, Lo});
    const float* w = p.weight.data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            float* yr = y.data() + (n * O + o) * Lo;
            if (l.has_bias) std::fill(yr, yr + Lo, p.bias[o]);
            for (std::size_t i = 0; i < C; ++i) {
                const float* xr = x.data() + (n * C + i) * L;
                for (std::size_t j = 0; j < K; ++j) {
                    const float wv = w[(i * O + o) * K + j];
                    const long long off = static_cast<long long>(j) - pad;
                    // output index t*s + off for input index t
                    const Range r = valid_range(off, s, static_cast<long long>(Lo),
                                                static_cast<long long>(L));
                    for (long long t = r.lo; t < r.hi; ++t) yr[t * s + off] += wv * xr[t];
                }
            }
        }
    }
    return y;
}

void tconv1d_bwd(const LayerSpec& l, const Tensor& x, const Tensor& w, const Tensor& gy,
                 Tensor& gx, ParamPair& gp) {
    const std::size_t N = x.dim(0), C = x.dim(1), L = x.dim(2);
    const std::size_t O = gy.dim(1), Lo = gy.dim(2);
    const std::size_t K = static_cast<std::size_t>(l.kernel_size);
    const long long s = l.stride, pad = l.padding;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            const float* gr = gy.data() + (n * O + o) * Lo;
            if (l.has_bias) {
                float acc = 0.0f;
                for (std::size_t t = 0; t < Lo; ++t) acc += gr[t];
                gp.bias[o] += acc;
            }
            for (std::size_t i = 0; i < C; ++i) {
                const float* xr = x.data() + (n * C + i) * L;
                float* gxr = gx.data() + (n * C + i) * L;
                for (std::size_t j = 0; j < K; ++j) {
                    const std::size_t wi = (i * O + o) * K + j;
                    const float wv = w[wi];
                    const long long off = static_cast<long long>(j) - pad;
                    const Range r = valid_range(off, s, static_cast<long long>(Lo),
                                                static_cast<long long>(L));
                    float acc = 0.0f;
                    for (long long t = r.lo; t < r.hi; ++t) {
                        const float g = gr[t * s + off];
                        acc += g * xr[t];
                        gxr[t] += g * wv;
                    }
                    gp.weight[wi] += acc;
                }
            }
        }
    }
}

// ---- conv2d ----------------------------------------------------------------

Tensor conv2d_fwd(const LayerSpec& l, const Tensor& x, const ParamPair& p) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = static_cast<std::size_t>(l.out_channels);
    const std::size_t K = static_cast<std::size_t>(l.kernel_size);
    const std::size_t Ho = l.output_length(H), Wo = l.output_length(W);
    const long long s = l.stride, pad = l.padding;
    Tensor y({N, O, Ho, Wo});
    const float* w = p.weight.data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            float* yp = y.data() + (n * O + o) * Ho * Wo;
            if (l.has_bias) std::fill(yp, yp + Ho * Wo, p.bias[o]);
            for (std::size_t i = 0; i < C; ++i) {
                const float* xp = x.data() + (n * C + i) * H * W;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    const long long offy = static_cast<long long>(ky) - pad;
                    const Range ry = valid_range(offy, s, static_cast<long long>(H),
                                                 static_cast<long long>(Ho));
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const float wv = w[((o * C + i) * K + ky) * K + kx];
                        const long long offx = static_cast<long long>(kx) - pad;
                        const Range rx = valid_range(offx, s, static_cast<long long>(W),
                                                     static_cast<long long>(Wo));
                        for (long long oy = ry.lo; oy < ry.hi; ++oy) {
                            float* yr = yp + oy * static_cast<long long>(Wo);
                            const float* xr = xp + (oy * s + offy) * static_cast<long long>(W);
                            for (long long ox = rx.lo; ox < rx.hi; ++ox) {
                                yr[ox] += wv * xr[ox * s + offx];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_bwd(const LayerSpec& l, const Tensor& x, const Tensor& w, const Tensor& gy,
                Tensor& gx, ParamPair& gp) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
    const std::size_t K = static_cast<std::size_t>(l.kernel_size);
    const long long s = l.stride, pad = l.padding;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            const float* gp_ = gy.data() + (n * O + o) * Ho * Wo;
            if (l.has_bias) {
                float acc = 0.0f;
                for (std::size_t t = 0; t < Ho * Wo; ++t) acc += gp_[t];
                gp.bias[o] += acc;
            }
            for (std::size_t i = 0; i < C; ++i) {
                const float* xp = x.data() + (n * C + i) * H * W;
                float* gxp = gx.data() + (n * C + i) * H * W;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    const long long offy = static_cast<long long>(ky) - pad;
                    const Range ry = valid_range(offy, s, static_cast<long long>(H),
                                                 static_cast<long long>(Ho));
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const std::size_t wi = ((o * C + i) * K + ky) * K + kx;
                        const float wv = w[wi];
                        const long long offx = static_cast<long long>(kx) - pad;
                        const Range rx = valid_range(offx, s, static_cast<long long>(W),
                                                     static_cast<long long>(Wo));
                        float acc = 0.0f;
                        for (long long oy = ry.lo; oy < ry.hi; ++oy) {
                            const float* gr = gp_ + oy * static_cast<long long>(Wo);
                            const long long xrow = (oy * s + offy) * static_cast<long long>(W);
                            const float* xr = xp + xrow;
                            float* gxr = gxp + xrow;
                            for (long long ox = rx.lo; ox < rx.hi; ++ox) {
                                acc += gr[ox] * xr[ox * s + offx];
                                gxr[ox * s + offx] += gr[ox] * wv;
                            }
                        }
                        gp.weight[wi] += acc;
                    }
                }
            }
        }
    }
}

// ---- binary layers ---------------------------------------------------------

void check_binary(const LayerSpec& l, const Tensor& a, const Tensor& b) {
    switch (l.kind) {
        case LayerKind::residual_add:
            if (a.shape() != b.shape()) {
                shape_fail(l, "operand shapes differ: " + shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
            }
            break;
        case LayerKind::concat:
            if (a.rank() < 2 || a.rank() != b.rank()) {
                shape_fail(l, "operands need equal rank >= 2: " + shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
            }
            for (std::size_t ax = 0; ax < a.rank(); ++ax) {
                if (ax != 1 && a.dim(ax) != b.dim(ax)) {
                    shape_fail(l, "axis " + std::to_string(ax) + " differs: " +
                                      std::to_string(a.dim(ax)) + " vs " +
                                      std::to_string(b.dim(ax)));
                }
            }
            break;
        case LayerKind::elementwise_product:
            if (a.shape() == b.shape()) break;
            if (a.rank() < 2 || a.rank() != b.rank() || b.dim(1) != 1) {
                shape_fail(l, "operand shapes " + shape_str(a.shape()) + " and " +
                                  shape_str(b.shape()) +
                                  " neither match nor broadcast along axis 1");
            }
            for (std::size_t ax = 0; ax < a.rank(); ++ax) {
                if (ax != 1 && a.dim(ax) != b.dim(ax)) {
                    shape_fail(l, "axis " + std::to_string(ax) + " differs: " +
                                      std::to_string(a.dim(ax)) + " vs " +
                                      std::to_string(b.dim(ax)));
                }
            }
            break;
        default: break;
    }
}

// Outer extent (axis 0) and inner extent (axes 2..) for axis-1 manipulations.
std::pair<std::size_t, std::size_t> outer_inner(const Tensor& t) {
    std::size_t inner = 1;
    for (std::size_t ax = 2; ax < t.rank(); ++ax) inner *= t.dim(ax);
    return {t.dim(0), inner};
}

Tensor concat_fwd(const Tensor& a, const Tensor& b) {
    Shape shape = a.shape();
    shape[1] = a.dim(1) + b.dim(1);
    Tensor y(shape);
    const auto [outer, inner] = outer_inner(a);
    const std::size_t ca = a.dim(1) * inner, cb = b.dim(1) * inner;
    for (std::size_t n = 0; n < outer; ++n) {
        std::copy_n(a.data() + n * ca, ca, y.data() + n * (ca + cb));
        std::copy_n(b.data() + n * cb, cb, y.data() + n * (ca + cb) + ca);
    }
    return y;
}

Tensor product_fwd(const Tensor& a, const Tensor& b) {
    Tensor y(a.shape());
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
        return y;
    }
    const auto [outer, inner] = outer_inner(a);
    const std::size_t C = a.dim(1);
    for (std::size_t n = 0; n < outer; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t k = 0; k < inner; ++k) y[base + k] = a[base + k] * b[n * inner + k];
        }
    }
    return y;
}

}  // namespace

ForwardResult forward(const LayerSpec& layer, std::span<const Tensor* const> inputs,
                      const ParamPair* params) {
    layer.validate();
    if (inputs.size() != layer.arity()) {
        shape_fail(layer, "expected " + std::to_string(layer.arity()) + " input(s), got " +
                              std::to_string(inputs.size()));
    }
    for (const Tensor* t : inputs) {
        if (!t) shape_fail(layer, "null input");
    }
    const Tensor& x = *inputs[0];
    Tensor out;
    Tensor weight_copy;
    switch (layer.kind) {
        case LayerKind::conv1d:
        case LayerKind::tconv1d:
            expect_rank(layer, x, 3, "(batch, channels, length)");
            expect_channels(layer, x);
            expect_params(layer, params);
            out = layer.kind == LayerKind::conv1d ? conv1d_fwd(layer, x, *params)
                                                  : tconv1d_fwd(layer, x, *params);
            weight_copy = params->weight;
            break;
        case LayerKind::conv2d:
            expect_rank(layer, x, 4, "(batch, channels, height, width)");
            expect_channels(layer, x);
            expect_params(layer, params);
            out = conv2d_fwd(layer, x, *params);
            weight_copy = params->weight;
            break;
        case LayerKind::relu:
            out = x;
            for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
            break;
        case LayerKind::residual_add:
            check_binary(layer, x, *inputs[1]);
            out = x;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*inputs[1])[i];
            break;
        case LayerKind::concat:
            check_binary(layer, x, *inputs[1]);
            out = concat_fwd(x, *inputs[1]);
            break;
        case LayerKind::elementwise_product:
            check_binary(layer, x, *inputs[1]);
            out = product_fwd(x, *inputs[1]);
            break;
    }
    std::vector<Tensor> kept;
    // Cached inputs are only those the backward pass reads.
    switch (layer.kind) {
        case LayerKind::residual_add:
            kept.emplace_back(x.shape());
            kept.emplace_back(inputs[1]->shape());
            break;
        case LayerKind::concat:
            kept.emplace_back(x.shape());
            kept.emplace_back(inputs[1]->shape());
            break;
        default:
            for (const Tensor* t : inputs) kept.push_back(*t);
    }
    Shape out_shape = out.shape();
    return {std::move(out),
            CacheAccess::make(layer, std::move(kept), std::move(weight_copy), std::move(out_shape))};
}

BackwardResult backward(const LayerSpec& layer, const Tensor& grad_out, const Cache& cache) {
    if (!cache.valid()) shape_fail(layer, "backward called with an empty cache");
    if (!(CacheAccess::spec(cache) == layer)) {
        shape_fail(layer, "cache was produced by a different layer (" +
                              std::string(to_string(CacheAccess::spec(cache).kind)) + ")");
    }
    if (grad_out.shape() != CacheAccess::output_shape(cache)) {
        shape_fail(layer, "grad_out shape " + shape_str(grad_out.shape()) +
                              " does not match cached output " +
                              shape_str(CacheAccess::output_shape(cache)));
    }
    const auto& in = CacheAccess::inputs(cache);
    BackwardResult r;
    switch (layer.kind) {
        case LayerKind::conv1d:
        case LayerKind::tconv1d:
        case LayerKind::conv2d: {
            Tensor gx(in[0].shape());
            r.grad_params.weight = Tensor(layer.weight_shape());
            if (layer.has_bias) r.grad_params.bias = Tensor(layer.bias_shape());
            const Tensor& w = CacheAccess::weight(cache);
            if (layer.kind == LayerKind::conv1d) {
                conv1d_bwd(layer, in[0], w, grad_out, gx, r.grad_params);
            } else if (layer.kind == LayerKind::tconv1d) {
                tconv1d_bwd(layer, in[0], w, grad_out, gx, r.grad_params);
            } else {
                conv2d_bwd(layer, in[0], w, grad_out, gx, r.grad_params);
            }
            r.grad_inputs.push_back(std::move(gx));
            break;
        }
        case LayerKind::relu: {
            Tensor gx(in[0].shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = in[0][i] > 0.0f ? grad_out[i] : 0.0f;
            r.grad_inputs.push_back(std::move(gx));
            break;
        }
        case LayerKind::residual_add:
            r.grad_inputs = {grad_out, grad_out};
            break;
        case LayerKind::concat: {
            Tensor ga(in[0].shape()), gb(in[1].shape());
            const auto [outer, inner] = outer_inner(ga);
            const std::size_t ca = ga.dim(1) * inner, cb = gb.dim(1) * inner;
            for (std::size_t n = 0; n < outer; ++n) {
                std::copy_n(grad_out.data() + n * (ca + cb), ca, ga.data() + n * ca);
                std::copy_n(grad_out.data() + n * (ca + cb) + ca, cb, gb.data() + n * cb);
            }
            r.grad_inputs = {std::move(ga), std::move(gb)};
            break;
        }
        case LayerKind::elementwise_product: {
            const Tensor& a = in[0];
            const Tensor& b = in[1];
            Tensor ga(a.shape()), gb(b.shape());
            if (a.shape() == b.shape()) {
                for (std::size_t i = 0; i < a.size(); ++i) {
                    ga[i] = grad_out[i] * b[i];
                    gb[i] = grad_out[i] * a[i];
                }
            } else {
                const auto [outer, inner] = outer_inner(a);
                const std::size_t C = a.dim(1);
                for (std::size_t n = 0; n < outer; ++n) {
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t base = (n * C + c) * inner;
                        for (std::size_t k = 0; k < inner; ++k) {
                            ga[base + k] = grad_out[base + k] * b[n * inner + k];
                            gb[n * inner + k] += grad_out[base + k] * a[base + k];
                        }
                    }
                }
            }
            r.grad_inputs = {std::move(ga), std::move(gb)};
            break;
        }
    }
    return r;
}

LossResult l2_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw DataError("l2_loss: pred shape " + shape_str(pred.shape()) + " vs target " +
                        shape_str(target.shape()));
    }
    LossResult r{0.0, Tensor(pred.shape())};
    const std::size_t n = pred.size();
    if (n == 0) return r;
    double acc = 0.0;
    const float scale = 2.0f / static_cast<float>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float d = pred[i] - target[i];
        acc += static_cast<double>(d) * d;
        r.grad[i] = scale * d;
    }
    r.loss = acc / static_cast<double>(n);
    return r;
}

}  // namespace ssr::tensor
