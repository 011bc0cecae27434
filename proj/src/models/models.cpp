#include "ssr/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ssr/checksum.hpp"
#include "ssr/errors.hpp"

namespace ssr::models {

using nlohmann::json;
using tensor::LayerKind;
using tensor::ParamPair;

std::string to_string(ArchId id) { return id == ArchId::model1 ? "model1" : "model2"; }
std::string to_string(MergeDensity d) { return d == MergeDensity::hsi ? "d_hsi" : "d_rgb"; }

ArchConfig ArchConfig::defaults(int spectral_out, int hidden_features,
                                std::vector<double> wavelengths_nm) {
    ArchConfig cfg;
    cfg.spectral_out = spectral_out;
    cfg.hidden_features = hidden_features;
    int length = cfg.spectral_in;
    constexpr int kLayers = 4;
    for (int i = 0; i < kLayers; ++i) {
        const int in = i == 0 ? 1 : hidden_features;
        const int out = i == kLayers - 1 ? 1 : hidden_features;
        if (length * 2 <= spectral_out) {
            cfg.upscale_layers.push_back(LayerSpec::tconv1d(in, out, 4, 2, 1));
            length *= 2;
        } else if (i == kLayers - 1) {
            // stride 1, pad 1: output = length - 1 + k - 2
            cfg.upscale_layers.push_back(
                LayerSpec::tconv1d(in, out, std::max(1, spectral_out - length + 3), 1, 1));
            length = spectral_out;
        } else {
            cfg.upscale_layers.push_back(LayerSpec::tconv1d(in, out, 3, 1, 1));
        }
    }
    cfg.hfe_layers = {LayerSpec::conv1d(1, hidden_features, 3, 1),
                      LayerSpec::conv1d(hidden_features, 1, 3, 1)};
    if (wavelengths_nm.empty()) {
        if (spectral_out == 24) {
            wavelengths_nm = data::default_band_grid();
        } else {
            for (int c = 0; c < spectral_out; ++c) {
                wavelengths_nm.push_back(
                    spectral_out == 1 ? 575.0 : 460.0 + 230.0 * c / (spectral_out - 1));
            }
        }
    }
    cfg.output_wavelengths_nm = std::move(wavelengths_nm);
    return cfg;
}

std::vector<std::size_t> ArchConfig::upscale_lengths() const {
    std::vector<std::size_t> lengths{static_cast<std::size_t>(spectral_in)};
    for (const auto& l : upscale_layers) lengths.push_back(l.output_length(lengths.back()));
    return lengths;
}

void ArchConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("architecture: " + what); };
    if (spectral_in < 1 || spectral_out < 1) fail("spectral_in/out must be >= 1");
    if (hidden_features < 1) fail("hidden_features must be >= 1");
    if (upscale_layers.size() != 4) {
        fail("upscale stage needs exactly 4 transposed-conv layers, got " +
             std::to_string(upscale_layers.size()));
    }
    int channels = 1;
    for (std::size_t i = 0; i < upscale_layers.size(); ++i) {
        const auto& l = upscale_layers[i];
        if (l.kind != LayerKind::tconv1d) fail("upscale layer " + std::to_string(i) + " is not tconv1d");
        try {
            l.validate();
        } catch (const DataError& e) {
            fail(e.what());
        }
        if (l.in_channels != channels) {
            fail("upscale layer " + std::to_string(i) + " expects " +
                 std::to_string(l.in_channels) + " channels, previous layer gives " +
                 std::to_string(channels));
        }
        channels = l.out_channels;
    }
    if (channels != 1) fail("last upscale layer must output 1 feature channel");
    std::vector<std::size_t> lengths;
    try {
        lengths = upscale_lengths();
    } catch (const DataError& e) {
        fail(e.what());
    }
    if (lengths.back() != static_cast<std::size_t>(spectral_out)) {
        std::string seq;
        for (auto n : lengths) seq += (seq.empty() ? "" : "->") + std::to_string(n);
        fail("upscale lengths " + seq + " do not reach spectral_out=" + std::to_string(spectral_out));
    }
    if (hfe_layers.size() != 2) fail("HFE block needs exactly 2 conv1d layers");
    if (hfe_layers[0].in_channels != 1 || hfe_layers[1].out_channels != 1 ||
        hfe_layers[0].out_channels != hfe_layers[1].in_channels) {
        fail("HFE channel chain must be 1 -> F -> 1");
    }
    for (const auto& l : hfe_layers) {
        if (l.kind != LayerKind::conv1d) fail("HFE layers must be conv1d");
        try {
            l.validate();
            if (l.output_length(static_cast<std::size_t>(spectral_out)) !=
                static_cast<std::size_t>(spectral_out)) {
                fail("HFE layers must preserve the spectral length");
            }
        } catch (const DataError& e) {
            fail(e.what());
        }
    }
    if (merge_kernel < 1 || merge_kernel % 2 == 0) fail("merge_kernel must be odd and >= 1");
    if (output_wavelengths_nm.size() != static_cast<std::size_t>(spectral_out)) {
        fail("output_wavelengths_nm must list spectral_out entries");
    }
    for (std::size_t i = 1; i < output_wavelengths_nm.size(); ++i) {
        if (!(output_wavelengths_nm[i] > output_wavelengths_nm[i - 1])) {
            fail("output wavelengths must be strictly increasing");
        }
    }
}

namespace {

json layer_to_json(const LayerSpec& l) {
    return {{"kind", std::string(tensor::to_string(l.kind))},
            {"kernel_size", l.kernel_size},
            {"stride", l.stride},
            {"in_channels", l.in_channels},
            {"out_channels", l.out_channels},
            {"padding", l.padding},
            {"has_bias", l.has_bias}};
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec l;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "conv1d") l.kind = LayerKind::conv1d;
    else if (kind == "tconv1d") l.kind = LayerKind::tconv1d;
    else throw ConfigError("unsupported layer kind '" + kind + "' in architecture");
    l.kernel_size = j.at("kernel_size").get<int>();
    l.stride = j.at("stride").get<int>();
    l.in_channels = j.at("in_channels").get<int>();
    l.out_channels = j.at("out_channels").get<int>();
    l.padding = j.at("padding").get<int>();
    l.has_bias = j.at("has_bias").get<bool>();
    return l;
}

}  // namespace

json ArchConfig::to_json() const {
    json j;
    j["spectral_in"] = spectral_in;
    j["spectral_out"] = spectral_out;
    j["hidden_features"] = hidden_features;
    j["upscale_layers"] = json::array();
    for (const auto& l : upscale_layers) j["upscale_layers"].push_back(layer_to_json(l));
    j["hfe_layers"] = json::array();
    for (const auto& l : hfe_layers) j["hfe_layers"].push_back(layer_to_json(l));
    j["merge_kernel"] = merge_kernel;
    j["merge_density"] = to_string(merge_density);
    j["output_wavelengths_nm"] = output_wavelengths_nm;
    return j;
}

ArchConfig ArchConfig::from_json(const json& j) {
    ArchConfig cfg;
    try {
        cfg.spectral_in = j.at("spectral_in").get<int>();
        cfg.spectral_out = j.at("spectral_out").get<int>();
        cfg.hidden_features = j.at("hidden_features").get<int>();
        for (const auto& l : j.at("upscale_layers")) cfg.upscale_layers.push_back(layer_from_json(l));
        for (const auto& l : j.at("hfe_layers")) cfg.hfe_layers.push_back(layer_from_json(l));
        cfg.merge_kernel = j.at("merge_kernel").get<int>();
        const auto md = j.at("merge_density").get<std::string>();
        if (md == "d_hsi") cfg.merge_density = MergeDensity::hsi;
        else if (md == "d_rgb") cfg.merge_density = MergeDensity::rgb;
        else throw ConfigError("merge_density must be d_hsi or d_rgb");
        cfg.output_wavelengths_nm = j.at("output_wavelengths_nm").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("architecture JSON: ") + e.what());
    }
    return cfg;
}

std::string ArchConfig::digest() const { return to_hex(fnv1a64(to_json().dump())); }

const Parameter& NetworkParams::get(const std::string& name) const {
    if (auto i = index_of(name)) return entries[*i];
    throw DataError("no parameter named '" + name + "'");
}

Parameter& NetworkParams::get(const std::string& name) {
    if (auto i = index_of(name)) return entries[*i];
    throw DataError("no parameter named '" + name + "'");
}

std::optional<std::size_t> NetworkParams::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name == name) return i;
    }
    return std::nullopt;
}

std::size_t NetworkParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
}

namespace {

std::string up_name(std::size_t i) { return std::string(kModel1Prefix) + "up" + std::to_string(i); }
std::string hfe_name(std::size_t i) { return std::string(kModel1Prefix) + "hfe" + std::to_string(i); }
const std::string kMergeName = "merge";

void add_layer_params(NetworkParams& p, const std::string& base, const LayerSpec& l,
                      std::mt19937_64& rng, bool zero_weights) {
    Tensor w(l.weight_shape());
    if (!zero_weights) {
        double fan_in = static_cast<double>(l.in_channels) * l.kernel_size;
        if (l.kind == LayerKind::tconv1d) fan_in /= l.stride;
        if (l.kind == LayerKind::conv2d) fan_in *= l.kernel_size;
        std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
        for (float& v : w.values()) v = dist(rng);
    }
    p.entries.push_back({base + "/weight", std::move(w), false});
    if (l.has_bias) p.entries.push_back({base + "/bias", Tensor(l.bias_shape()), false});
}

LayerSpec merge_spec(const ArchConfig& cfg) {
    return LayerSpec::conv2d(2 * cfg.spectral_out, cfg.spectral_out, cfg.merge_kernel,
                             cfg.merge_kernel / 2);
}

ParamPair pair_of(const NetworkParams& p, const std::string& base, const LayerSpec& l) {
    ParamPair pp;
    pp.weight = p.get(base + "/weight").value;
    if (l.has_bias) pp.bias = p.get(base + "/bias").value;
    return pp;
}

void accumulate(std::vector<Tensor>& grads, const NetworkParams& p, const std::string& base,
                const LayerSpec& l, const ParamPair& g) {
    auto add = [&](const std::string& name, const Tensor& t) {
        auto idx = p.index_of(name);
        if (!idx) throw DataError("missing gradient slot for '" + name + "'");
        Tensor& dst = grads[*idx];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += t[i];
    };
    add(base + "/weight", g.weight);
    if (l.has_bias) add(base + "/bias", g.bias);
}

}  // namespace

NetworkParams build_model1(const ArchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    NetworkParams p;
    p.arch = ArchId::model1;
    p.config = cfg;
    p.config_digest = cfg.digest();
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < cfg.upscale_layers.size(); ++i) {
        add_layer_params(p, up_name(i), cfg.upscale_layers[i], rng, false);
    }
    for (std::size_t i = 0; i < cfg.hfe_layers.size(); ++i) {
        add_layer_params(p, hfe_name(i), cfg.hfe_layers[i], rng, false);
    }
    return p;
}

NetworkParams build_model2(const ArchConfig& cfg, std::uint64_t seed) {
    NetworkParams p = build_model1(cfg, seed);
    p.arch = ArchId::model2;
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    // Zero merge weights: an untrained merge stage reproduces Model 1 exactly.
    add_layer_params(p, kMergeName, merge_spec(cfg), rng, true);
    return p;
}

NetworkParams promote_to_model2(const NetworkParams& model1, std::uint64_t seed) {
    if (model1.arch != ArchId::model1) throw ConfigError("promote_to_model2 needs Model-1 params");
    NetworkParams p = build_model2(model1.config, seed);
    for (const auto& e : model1.entries) {
        Parameter& dst = p.get(e.name);
        if (dst.value.shape() != e.value.shape()) {
            throw DataError("shape drift for '" + e.name + "'");
        }
        dst.value = e.value;
    }
    return p;
}

void set_frozen(NetworkParams& params, const std::string& name_prefix, bool frozen) {
    std::size_t hits = 0;
    for (auto& e : params.entries) {
        if (e.name.rfind(name_prefix, 0) == 0) {
            e.frozen = frozen;
            ++hits;
        }
    }
    if (hits == 0) {
        std::set<std::string> prefixes;
        for (const auto& e : params.entries) {
            for (std::size_t pos = e.name.find('/'); pos != std::string::npos;
                 pos = e.name.find('/', pos + 1)) {
                prefixes.insert(e.name.substr(0, pos + 1));
            }
        }
        std::string list;
        for (const auto& s : prefixes) list += (list.empty() ? "" : ", ") + s;
        throw ConfigError("no parameter matches prefix '" + name_prefix + "'; valid prefixes: " + list);
    }
}

std::vector<Tensor> zero_grads(const NetworkParams& params) {
    std::vector<Tensor> g;
    g.reserve(params.entries.size());
    for (const auto& e : params.entries) g.emplace_back(e.value.shape());
    return g;
}

// ---- execution ---------------------------------------------------------------

Tensor model1_forward(const NetworkParams& params, const Tensor& x, Model1Trace* trace) {
    const ArchConfig& cfg = params.config;
    if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != static_cast<std::size_t>(cfg.spectral_in)) {
        throw DataError("model1: expected pixel batch (P, 1, " + std::to_string(cfg.spectral_in) +
                        "), got " + tensor::shape_str(x.shape()));
    }
    Tensor h = x;
    const std::size_t n = cfg.upscale_layers.size();
    if (trace) {
        trace->upscale.clear();
        trace->upscale_relu.clear();
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& l = cfg.upscale_layers[i];
        auto r = tensor::forward(l, h, pair_of(params, up_name(i), l));
        if (trace) trace->upscale.push_back(std::move(r.cache));
        h = std::move(r.output);
        if (i + 1 < n) {
            auto a = tensor::forward(LayerSpec::relu(), h);
            if (trace) trace->upscale_relu.push_back(std::move(a.cache));
            h = std::move(a.output);
        }
    }
    const auto& l0 = cfg.hfe_layers[0];
    const auto& l1 = cfg.hfe_layers[1];
    auto f0 = tensor::forward(l0, h, pair_of(params, hfe_name(0), l0));
    auto fr = tensor::forward(LayerSpec::relu(), f0.output);
    auto f1 = tensor::forward(l1, fr.output, pair_of(params, hfe_name(1), l1));
    auto sum = tensor::forward(LayerSpec::residual_add(), f1.output, h);
    if (trace) {
        trace->hfe0 = std::move(f0.cache);
        trace->hfe_relu = std::move(fr.cache);
        trace->hfe1 = std::move(f1.cache);
        trace->shortcut = std::move(sum.cache);
    }
    return std::move(sum.output);
}

void model1_backward(const NetworkParams& params, const Tensor& grad_out, const Model1Trace& trace,
                     std::vector<Tensor>& grads) {
    const ArchConfig& cfg = params.config;
    if (grads.size() != params.entries.size()) throw DataError("gradient buffer size mismatch");
    auto gs = tensor::backward(LayerSpec::residual_add(), grad_out, trace.shortcut);
    const auto& l0 = cfg.hfe_layers[0];
    const auto& l1 = cfg.hfe_layers[1];
    auto g1 = tensor::backward(l1, gs.grad_inputs[0], trace.hfe1);
    accumulate(grads, params, hfe_name(1), l1, g1.grad_params);
    auto gr = tensor::backward(LayerSpec::relu(), g1.grad_inputs[0], trace.hfe_relu);
    auto g0 = tensor::backward(l0, gr.grad_inputs[0], trace.hfe0);
    accumulate(grads, params, hfe_name(0), l0, g0.grad_params);
    Tensor g = std::move(gs.grad_inputs[1]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0.grad_inputs[0][i];

    for (std::size_t i = cfg.upscale_layers.size(); i-- > 0;) {
        if (i + 1 < cfg.upscale_layers.size()) {
            g = std::move(tensor::backward(LayerSpec::relu(), g, trace.upscale_relu[i]).grad_inputs[0]);
        }
        const auto& l = cfg.upscale_layers[i];
        auto gl = tensor::backward(l, g, trace.upscale[i]);
        accumulate(grads, params, up_name(i), l, gl.grad_params);
        g = std::move(gl.grad_inputs[0]);
    }
}

Tensor pixels_to_planes(const Tensor& px, std::size_t width, std::size_t height) {
    const std::size_t P = px.dim(0), C = px.dim(2);
    if (P != width * height || px.dim(1) != 1) throw DataError("pixel batch does not match image dims");
    Tensor out({1, C, height, width});
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t c = 0; c < C; ++c) out[c * P + p] = px[p * C + c];
    }
    return out;
}

Tensor planes_to_pixels(const Tensor& planes) {
    const std::size_t C = planes.dim(1), P = planes.dim(2) * planes.dim(3);
    Tensor out({P, 1, C});
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t c = 0; c < C; ++c) out[p * C + c] = planes[c * P + p];
    }
    return out;
}

Tensor stack_to_pixels(const data::SpectralStack& stack) {
    const std::size_t P = stack.pixels(), C = stack.channels();
    Tensor out({P, 1, C});
    const auto v = stack.values();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < P; ++p) out[p * C + c] = v[c * P + p] / 255.0f;
    }
    return out;
}

Tensor stack_to_planes(const data::SpectralStack& stack) {
    Tensor out({1, stack.channels(), stack.height(), stack.width()});
    const auto v = stack.values();
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / 255.0f;
    return out;
}

Tensor density_to_planes(const data::DensityMap& d) {
    return Tensor({1, 1, d.height(), d.width()}, d.map.values);
}

Tensor model2_merge_forward(const NetworkParams& params, const Tensor& core,
                            const Tensor& density, const Tensor& sparse, Model2Trace* trace) {
    if (params.arch != ArchId::model2) throw ConfigError("merge stage needs Model-2 params");
    const ArchConfig& cfg = params.config;
    const std::size_t C = static_cast<std::size_t>(cfg.spectral_out);
    if (core.rank() != 4 || core.dim(0) != 1 || core.dim(1) != C) {
        throw DataError("model2: core prediction shape " + tensor::shape_str(core.shape()) +
                        " is not (1, " + std::to_string(C) + ", H, W)");
    }
    const std::size_t height = core.dim(2), width = core.dim(3);
    if (density.shape() != tensor::Shape{1, 1, height, width}) {
        throw DataError("model2: density shape " + tensor::shape_str(density.shape()) +
                        " does not match image " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
    if (sparse.shape() != core.shape()) {
        throw DataError("model2: sparse stack shape " + tensor::shape_str(sparse.shape()) +
                        " does not match " + tensor::shape_str(core.shape()));
    }
    Tensor dmap = density;
    if (cfg.merge_density == MergeDensity::rgb) {
        for (float& v : dmap.values()) v = 1.0f - v;
    }
    auto prod = tensor::forward(LayerSpec::elementwise_product(), core, dmap);
    auto cat = tensor::forward(LayerSpec::concat(), sparse, prod.output);
    const LayerSpec ms = merge_spec(cfg);
    auto merged = tensor::forward(ms, cat.output, pair_of(params, kMergeName, ms));
    auto sum = tensor::forward(LayerSpec::residual_add(), core, merged.output);
    if (trace) {
        trace->width = width;
        trace->height = height;
        trace->product = std::move(prod.cache);
        trace->concat = std::move(cat.cache);
        trace->merge = std::move(merged.cache);
        trace->add = std::move(sum.cache);
    }
    return std::move(sum.output);
}

Tensor model2_merge_backward(const NetworkParams& params, const Tensor& grad_out,
                             const Model2Trace& trace, std::vector<Tensor>& grads) {
    if (grads.size() != params.entries.size()) throw DataError("gradient buffer size mismatch");
    const LayerSpec ms = merge_spec(params.config);
    auto ga = tensor::backward(LayerSpec::residual_add(), grad_out, trace.add);
    auto gm = tensor::backward(ms, ga.grad_inputs[1], trace.merge);
    accumulate(grads, params, kMergeName, ms, gm.grad_params);
    auto gc = tensor::backward(LayerSpec::concat(), gm.grad_inputs[0], trace.concat);
    auto gp = tensor::backward(LayerSpec::elementwise_product(), gc.grad_inputs[1], trace.product);
    Tensor g_core = std::move(ga.grad_inputs[0]);
    for (std::size_t i = 0; i < g_core.size(); ++i) g_core[i] += gp.grad_inputs[0][i];
    return g_core;
}

Tensor model2_forward(const NetworkParams& params, const Tensor& rgb_px, const Tensor& density,
                      const Tensor& sparse, std::size_t width, std::size_t height,
                      Model2Trace* trace) {
    if (params.arch != ArchId::model2) throw ConfigError("model2_forward needs Model-2 params");
    if (rgb_px.rank() != 3 || rgb_px.dim(0) != width * height) {
        throw DataError("model2: RGB pixel batch " + tensor::shape_str(rgb_px.shape()) +
                        " does not match a " + std::to_string(width) + "x" +
                        std::to_string(height) + " image");
    }
    Tensor core_px = model1_forward(params, rgb_px, trace ? &trace->core : nullptr);
    Tensor out = model2_merge_forward(params, pixels_to_planes(core_px, width, height), density,
                                      sparse, trace);
    if (trace) trace->core_out = std::move(core_px);
    return out;
}

void model2_backward(const NetworkParams& params, const Tensor& grad_out, const Model2Trace& trace,
                     std::vector<Tensor>& grads) {
    Tensor g_core = model2_merge_backward(params, grad_out, trace, grads);
    // The shared layers are skipped when every one of them is frozen.
    bool any_live = false;
    for (const auto& e : params.entries) {
        if (e.name.rfind(kModel1Prefix, 0) == 0 && !e.frozen) any_live = true;
    }
    if (any_live) model1_backward(params, planes_to_pixels(g_core), trace.core, grads);
}

// ---- prediction --------------------------------------------------------------

namespace {

constexpr std::size_t kChunk = 4096;

}  // namespace

Tensor model1_run_chunked(const NetworkParams& params, const Tensor& px) {
    const std::size_t P = px.dim(0), Cin = px.dim(2);
    const std::size_t Cout = static_cast<std::size_t>(params.config.spectral_out);
    Tensor out({P, 1, Cout});
    for (std::size_t start = 0; start < P; start += kChunk) {
        const std::size_t n = std::min(kChunk, P - start);
        Tensor chunk({n, 1, Cin},
                     std::vector<float>(px.data() + start * Cin, px.data() + (start + n) * Cin));
        Tensor y = model1_forward(params, chunk, nullptr);
        std::copy_n(y.data(), y.size(), out.data() + start * Cout);
    }
    return out;
}

namespace {

data::SpectralStack planes_to_stack(const Tensor& planes, const ArchConfig& cfg,
                                    std::size_t width, std::size_t height) {
    std::vector<float> v(planes.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float x = planes[i] * 255.0f;
        if (!std::isfinite(x)) throw NumericalError("network produced a non-finite value");
        v[i] = x;
    }
    return data::SpectralStack(width, height, cfg.output_wavelengths_nm, std::move(v));
}

void check_rgb(const NetworkParams& params, const data::SpectralStack& rgb) {
    if (rgb.channels() != static_cast<std::size_t>(params.config.spectral_in)) {
        throw DataError("expected " + std::to_string(params.config.spectral_in) +
                        "-channel input, got " + std::to_string(rgb.channels()));
    }
}

}  // namespace

data::SpectralStack model1_predict(const NetworkParams& params, const data::SpectralStack& rgb) {
    check_rgb(params, rgb);
    Tensor y = model1_run_chunked(params, stack_to_pixels(rgb));
    return planes_to_stack(pixels_to_planes(y, rgb.width(), rgb.height()), params.config,
                           rgb.width(), rgb.height());
}

data::SpectralStack model2_predict(const NetworkParams& params, const data::SpectralStack& rgb,
                                   const data::DensityMap& d_hsi,
                                   const data::SpectralStack& sparse) {
    if (params.arch != ArchId::model2) throw ConfigError("model2_predict needs Model-2 params");
    check_rgb(params, rgb);
    const std::size_t W = rgb.width(), H = rgb.height();
    if (d_hsi.width() != W || d_hsi.height() != H || sparse.width() != W || sparse.height() != H) {
        throw DataError("model2: RGB, density map and sparse stack must share spatial dims");
    }
    if (sparse.channels() != static_cast<std::size_t>(params.config.spectral_out)) {
        throw DataError("model2: sparse stack has " + std::to_string(sparse.channels()) +
                        " bands, expected " + std::to_string(params.config.spectral_out));
    }
    Tensor core = pixels_to_planes(model1_run_chunked(params, stack_to_pixels(rgb)), W, H);
    Tensor y = model2_merge_forward(params, core, density_to_planes(d_hsi),
                                    stack_to_planes(sparse), nullptr);
    return planes_to_stack(y, params.config, W, H);
}

}  // namespace ssr::models
