#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssr/dataset.hpp"
#include "ssr/layers.hpp"
#include "ssr/tensor.hpp"

namespace ssr::models {

using tensor::LayerSpec;
using tensor::Parameter;
using tensor::Tensor;

enum class ArchId { model1, model2 };

/// Which density map multiplies the recovered stack in the merge stage.
enum class MergeDensity { hsi, rgb };

std::string to_string(ArchId id);
std::string to_string(MergeDensity d);

/// Network architecture. The upscale stage is four tconv1d layers along the
/// spectral axis (1 feature in, `hidden_features` between, 1 out); the HFE
/// block is conv1d -> relu -> conv1d with an additive shortcut; the merge
/// stage is one merge_kernel x merge_kernel conv2d from 2C to C channels.
struct ArchConfig {
    int spectral_in = 3;
    int spectral_out = 24;
    int hidden_features = 32;
    std::vector<LayerSpec> upscale_layers;
    std::vector<LayerSpec> hfe_layers;
    int merge_kernel = 5;
    MergeDensity merge_density = MergeDensity::hsi;
    std::vector<double> output_wavelengths_nm;

    /// Strides 2 (kernel 4, pad 1) until the next doubling would overshoot,
    /// then stride-1 layers; for 3 -> 24 this is (2, 2, 2, 1) with lengths
    /// 3 -> 6 -> 12 -> 24 -> 24.
    static ArchConfig defaults(int spectral_out = 24, int hidden_features = 32,
                               std::vector<double> wavelengths_nm = {});

    /// Throws ConfigError on any violation of the 3 -> C length arithmetic or
    /// layer chaining.
    void validate() const;

    /// Spectral lengths before and after each upscale layer.
    std::vector<std::size_t> upscale_lengths() const;

    nlohmann::json to_json() const;
    static ArchConfig from_json(const nlohmann::json& j);

    /// FNV-1a 64 over the canonical JSON form, hex encoded.
    std::string digest() const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct NetworkParams {
    ArchId arch = ArchId::model1;
    ArchConfig config;
    std::string config_digest;
    std::vector<Parameter> entries;

    const Parameter& get(const std::string& name) const;
    Parameter& get(const std::string& name);
    std::optional<std::size_t> index_of(const std::string& name) const;
    std::size_t parameter_count() const;

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

inline constexpr const char* kModel1Prefix = "model1core/";
inline constexpr const char* kMergePrefix = "merge/";

/// He-scaled normal weights, zero biases; deterministic per seed.
NetworkParams build_model1(const ArchConfig& cfg, std::uint64_t seed);

/// Model-1 entries plus a zero-initialized merge stage.
NetworkParams build_model2(const ArchConfig& cfg, std::uint64_t seed);

/// Model-2 parameters whose shared entries are copied from a trained Model 1.
NetworkParams promote_to_model2(const NetworkParams& model1, std::uint64_t seed);

/// Sets the freeze flag on every entry whose name starts with `name_prefix`.
/// Throws ConfigError listing the valid prefixes when nothing matches.
void set_frozen(NetworkParams& params, const std::string& name_prefix, bool frozen);

// ---- execution ---------------------------------------------------------------

/// Intermediate state of a Model-1 pass over a batch of pixel spectra.
struct Model1Trace {
    std::vector<tensor::Cache> upscale;
    std::vector<tensor::Cache> upscale_relu;
    tensor::Cache hfe0, hfe_relu, hfe1, shortcut;
};

/// x: (P, 1, spectral_in) normalized to [0, 1]; returns (P, 1, spectral_out).
Tensor model1_forward(const NetworkParams& params, const Tensor& x, Model1Trace* trace);

/// Accumulates parameter gradients (aligned with params.entries) for the
/// Model-1 entries.
void model1_backward(const NetworkParams& params, const Tensor& grad_out, const Model1Trace& trace,
                     std::vector<Tensor>& grads);

struct Model2Trace {
    Model1Trace core;
    Tensor core_out;  // (P, 1, C)
    std::size_t width = 0, height = 0;
    tensor::Cache product, concat, merge, add;
};

/// Normalized inputs: rgb (P, 1, 3), density (1, 1, H, W), sparse (1, C, H, W).
/// Returns (1, C, H, W).
Tensor model2_forward(const NetworkParams& params, const Tensor& rgb_px, const Tensor& density,
                      const Tensor& sparse, std::size_t width, std::size_t height,
                      Model2Trace* trace);

void model2_backward(const NetworkParams& params, const Tensor& grad_out, const Model2Trace& trace,
                     std::vector<Tensor>& grads);

/// Merge stage alone on a precomputed Model-1 prediction `core` (1, C, H, W).
Tensor model2_merge_forward(const NetworkParams& params, const Tensor& core,
                            const Tensor& density, const Tensor& sparse, Model2Trace* trace);

/// Accumulates merge-stage gradients and returns the gradient w.r.t. `core`.
Tensor model2_merge_backward(const NetworkParams& params, const Tensor& grad_out,
                             const Model2Trace& trace, std::vector<Tensor>& grads);

/// Model 1 over a pixel batch in fixed-size chunks (no trace).
Tensor model1_run_chunked(const NetworkParams& params, const Tensor& px);

/// Zero gradient buffers shaped like params.entries.
std::vector<Tensor> zero_grads(const NetworkParams& params);

// ---- layout helpers ----------------------------------------------------------

/// Stack values / 255 as (P, 1, C) pixel vectors in row-major pixel order.
Tensor stack_to_pixels(const data::SpectralStack& stack);
/// Stack values / 255 as (1, C, H, W).
Tensor stack_to_planes(const data::SpectralStack& stack);
Tensor density_to_planes(const data::DensityMap& d);
/// (P, 1, C) <-> (1, C, H, W)
Tensor pixels_to_planes(const Tensor& px, std::size_t width, std::size_t height);
Tensor planes_to_pixels(const Tensor& planes);

// ---- prediction --------------------------------------------------------------

data::SpectralStack model1_predict(const NetworkParams& params, const data::SpectralStack& rgb);

data::SpectralStack model2_predict(const NetworkParams& params, const data::SpectralStack& rgb,
                                   const data::DensityMap& d_hsi,
                                   const data::SpectralStack& sparse);

// ---- serialization -----------------------------------------------------------
//
// `<path>` is a JSON manifest (arch, config, digest, entries with name / shape /
// frozen / offset); `<path>.bin` holds the f32le payload in manifest order.

void save_params(const NetworkParams& params, const std::filesystem::path& path);

/// Verifies the stored digest against the stored config, the payload size and
/// checksum, and (if given) that the config matches `expected`.
NetworkParams load_params(const std::filesystem::path& path,
                          const std::optional<ArchConfig>& expected = std::nullopt);

}  // namespace ssr::models
