#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssr/dataset.hpp"
#include "ssr/models.hpp"

namespace ssr::train {

using data::Sample;
using data::ScalarMap;
using data::SpectralStack;
using models::ArchConfig;
using models::NetworkParams;

/// amplitude: 20 log10(255 / MSE); standard: 10 log10(255^2 / MSE).
enum class PsnrMode { amplitude, standard };

std::string to_string(PsnrMode m);
PsnrMode psnr_mode_from_string(const std::string& s);

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 256;      // pixel vectors per Model-1 step
    int max_epochs = 200;
    int plateau_patience = 20;
    std::uint64_t seed = 1;
    PsnrMode psnr_mode = PsnrMode::amplitude;
    std::size_t pixels_per_stack = 0;  // Model-1 pixel subsample per stack, 0 = all
    int stage_a_epochs = 0;            // Model-2 stage A cap, 0 = max_epochs
    double saturation_threshold = 250.0;
    double lr_decay = 1.0;             // per-epoch multiplicative lr factor, 1 = constant
    double model2_lr = 0.0;            // base lr for both Model-2 stages, 0 = lr

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys throw ConfigError.
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
    int epoch = 0;
    std::string split;  // "train" for Model 1, "stage_a" / "stage_b" for Model 2
    double loss = 0.0;  // MSE on the [0, 255] scale
    double psnr = 0.0;
};

struct TrainResult {
    NetworkParams params;
    std::vector<EpochLog> log;
    int epochs_run = 0;
    double final_loss = 0.0;  // full-pass training loss of the returned params
    bool diverged = false;
    std::string incident;
};

struct Model2Result : TrainResult {
    NetworkParams after_stage_a;
    double stage_a_loss = 0.0;
    double stage_b_loss = 0.0;
};

/// Model-1 training on per-pixel pairs: rgb (P, 1, 3) and target (P, 1, C),
/// both normalized to [0, 1].
TrainResult train_model1_pixels(const models::Tensor& rgb_px, const models::Tensor& target_px,
                                NetworkParams init, const TrainConfig& cfg);

/// Collects pixel pairs from every sample (subsampled per cfg) and trains.
TrainResult train_model1(const std::vector<Sample>& dataset, const ArchConfig& arch,
                         const TrainConfig& cfg);

/// Two-stage protocol: merge stage only with the shared layers frozen, then
/// everything. Stage B keeps its best full-pass checkpoint, starting from the
/// stage-A result, so stage_b_loss <= stage_a_loss.
Model2Result train_model2(const std::vector<Sample>& dataset, const NetworkParams& init_model1,
                          const TrainConfig& cfg);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

// ---- metrics -----------------------------------------------------------------

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// MSE == 0 maps to +infinity.
double psnr_from_mse(double mse, PsnrMode mode);

/// Mean squared error over all pixels and bands; shapes must match.
double mse(const SpectralStack& pred, const SpectralStack& gt);
double psnr(const SpectralStack& pred, const SpectralStack& gt, PsnrMode mode);

struct MapSummary {
    bool defined = false;  // false when every pixel is saturated
    double min = 0.0;
    double mean = 0.0;
    std::size_t counted = 0;
    std::size_t saturated = 0;
};

struct PsnrMapResult {
    ScalarMap map;
    std::vector<std::uint8_t> saturated;  // per pixel
    MapSummary summary;
};

/// Per-pixel PSNR over the bands. Pixels with any ground-truth band at or above
/// `saturation_threshold` are flagged and left out of the summary.
PsnrMapResult psnr_map(const SpectralStack& pred, const SpectralStack& gt, PsnrMode mode,
                       double saturation_threshold);

struct EvalReport {
    PsnrMode mode = PsnrMode::amplitude;
    std::vector<std::string> stack_ids;
    std::vector<double> per_stack_mse;
    std::vector<double> per_band_mse;  // pooled over every pixel of every stack
    std::vector<double> per_stack_psnr;  // in `mode`
    std::vector<double> per_band_psnr;
    double mean_psnr = 0.0;  // mean of per_stack_psnr
    std::vector<ScalarMap> psnr_maps;
    std::vector<MapSummary> map_summaries;
    bool saturation_mask_applied = true;
    double saturation_threshold = 250.0;

    /// Mean of per-stack PSNR in the other mode.
    double mean_psnr_in(PsnrMode m) const;
    /// Both modes side by side.
    nlohmann::json to_json() const;
};

using Predictor = std::function<SpectralStack(const Sample&)>;

EvalReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, PsnrMode mode,
                    double saturation_threshold, bool keep_maps = false);

/// Dispatches to model1_predict or model2_predict by params.arch.
EvalReport evaluate(const NetworkParams& params, const std::vector<Sample>& samples,
                    PsnrMode mode, double saturation_threshold, bool keep_maps = false);

// ---- cross-validation ----------------------------------------------------------

struct FoldResult {
    int fold = 0;
    std::vector<std::string> test_ids;
    bool ok = false;
    std::string error;
    EvalReport model1;
    EvalReport model2;
    double model1_train_loss = 0.0;
    double model2_stage_a_loss = 0.0;
    double model2_stage_b_loss = 0.0;
};

struct LoocvResult {
    std::vector<FoldResult> folds;
    double mean_psnr_model1 = 0.0;  // equal-weight mean over successful folds
    double mean_psnr_model2 = 0.0;
    std::vector<double> per_band_psnr_model1;
    std::vector<double> per_band_psnr_model2;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

/// k-fold cross-validation: both models are trained per fold on the train split
/// and evaluated on the held-out split. A failing fold is recorded and skipped.
LoocvResult run_loocv(const std::vector<Sample>& dataset, int k, const ArchConfig& arch,
                      const TrainConfig& cfg);

struct NamedDataset {
    std::string name;
    std::vector<Sample> samples;
};

struct TransferMatrix {
    std::vector<std::string> sources;
    std::vector<std::string> targets;
    std::vector<std::vector<double>> model1;  // [source][target], NaN when skipped
    std::vector<std::vector<double>> model2;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

/// Diagonal cells come from run_loocv with `k` folds; off-diagonal cells train
/// on the full source and test on the full target.
TransferMatrix transfer_matrix(const std::vector<NamedDataset>& datasets, int k,
                               const ArchConfig& arch, const TrainConfig& cfg);

}  // namespace ssr::train
