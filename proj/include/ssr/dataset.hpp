#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ssr::data {

/// Default band grid: 24 bands, 460..690 nm at 10 nm spacing.
std::vector<double> default_band_grid();

/// M x N x C image cube, band-sequential: index = (c * height + y) * width + x.
/// Values live in [0, 255]; everything written through the public surface is
/// clamped to that range and must be finite.
class SpectralStack {
public:
    SpectralStack() = default;
    SpectralStack(std::size_t width, std::size_t height, std::vector<double> wavelengths_nm);
    SpectralStack(std::size_t width, std::size_t height, std::vector<double> wavelengths_nm,
                  std::vector<float> values);

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t channels() const noexcept { return wavelengths_.size(); }
    std::size_t pixels() const noexcept { return width_ * height_; }
    const std::vector<double>& wavelengths_nm() const noexcept { return wavelengths_; }

    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return values_[(c * height_ + y) * width_ + x];
    }
    void set(std::size_t c, std::size_t y, std::size_t x, float value);

    std::span<const float> values() const noexcept { return values_; }
    std::span<const float> band(std::size_t c) const;

    friend bool operator==(const SpectralStack&, const SpectralStack&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> wavelengths_;
    std::vector<float> values_;
};

/// Unconstrained single-channel float image (PSNR maps, SaO2 maps, ...).
struct ScalarMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> values;

    ScalarMap() = default;
    ScalarMap(std::size_t w, std::size_t h, float fill = 0.0f)
        : width(w), height(h), values(w * h, fill) {}

    float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    float& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

    friend bool operator==(const ScalarMap&, const ScalarMap&) = default;
};

/// Map in [0, 1] marking where hyperspectral samples exist.
struct DensityMap {
    ScalarMap map;

    std::size_t width() const noexcept { return map.width; }
    std::size_t height() const noexcept { return map.height; }
    float at(std::size_t y, std::size_t x) const { return map.at(y, x); }

    /// D_rgb = 1 - D_hsi.
    DensityMap complement() const;

    friend bool operator==(const DensityMap&, const DensityMap&) = default;
};

struct CameraResponse {
    std::vector<double> wavelengths_nm;
    std::array<std::vector<double>, 3> rows;  // R, G, B weights per band
    std::string source_note;

    std::size_t bands() const noexcept { return wavelengths_nm.size(); }
    /// Scales each row to unit sum. Throws DataError on negative or all-zero rows.
    void normalize();
};

/// Gaussian R/G/B responses (centres 610/540/465 nm) over `wavelengths_nm`.
CameraResponse default_camera_response(const std::vector<double>& wavelengths_nm);

/// CSV: header row `channel,<wl_1>,...,<wl_C>` followed by rows R, G, B.
CameraResponse load_camera_response_csv(const std::filesystem::path& path);
void save_camera_response_csv(const CameraResponse& h, const std::filesystem::path& path);

struct Spot {
    int id = 0;
    double u = 0.0;  // column, subpixel
    double v = 0.0;  // row, subpixel
    double wavelength_nm = 0.0;

    friend bool operator==(const Spot&, const Spot&) = default;
};

class SpotSet {
public:
    SpotSet() = default;
    /// Rejects spots outside [0, width-1] x [0, height-1] and duplicate ids.
    SpotSet(std::vector<Spot> spots, std::size_t width, std::size_t height);

    const std::vector<Spot>& spots() const noexcept { return spots_; }
    std::size_t size() const noexcept { return spots_.size(); }
    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }

    friend bool operator==(const SpotSet&, const SpotSet&) = default;

private:
    std::vector<Spot> spots_;
    std::size_t width_ = 0;
    std::size_t height_ = 0;
};

/// CSV with header `id,u,v,wavelength_nm`.
SpotSet load_spots_csv(const std::filesystem::path& path, std::size_t width, std::size_t height);
void save_spots_csv(const SpotSet& spots, const std::filesystem::path& path);

// ---- stack files -------------------------------------------------------------
//
// `<stem>.json` header {width, height, channels, wavelengths_nm, dtype: "f32le",
// order: "band-sequential", payload: "<stem>.raw"} plus the raw sibling payload.

void save_stack(const SpectralStack& stack, const std::filesystem::path& header_path);
SpectralStack load_stack(const std::filesystem::path& header_path);

/// Same container for single-channel maps; values are stored as-is (no clamp).
void save_map(const ScalarMap& map, const std::filesystem::path& header_path);
ScalarMap load_map(const std::filesystem::path& header_path);

// ---- data synthesis ----------------------------------------------------------

/// R_k = sum_c h[k][c] * H[c] per pixel, clamped to [0, 255]. Output channels
/// are ordered by wavelength (B, G, R) to keep the band list increasing.
SpectralStack synthesize_rgb(const SpectralStack& hsi, const CameraResponse& h);

/// D(p) = max over spots exp(-|p - spot|^2 / (2 sigma^2)).
DensityMap make_density_map(const SpotSet& spots, double sigma_px, std::size_t width,
                            std::size_t height);

/// H_s = D_hsi * H, zeroed wherever D_hsi < threshold.
SpectralStack make_sparse_stack(const SpectralStack& hsi, const DensityMap& d_hsi,
                                double threshold);

// ---- augmentation ------------------------------------------------------------

enum class TransformKind { identity, flip_h, flip_v, rot90, rot180, rot270, crop };

struct Transform {
    TransformKind kind = TransformKind::identity;
    std::size_t x0 = 0, y0 = 0, width = 0, height = 0;  // crop window
};

struct AugmentOptions {
    bool flips = true;
    bool rotations = true;
    std::size_t crops = 1;
    std::size_t crop_width = 0;   // 0 disables crops
    std::size_t crop_height = 0;
};

/// Deterministic transform list for an image of the given size.
std::vector<Transform> augment_plan(std::size_t width, std::size_t height, std::uint64_t seed,
                                    const AugmentOptions& opts);

SpectralStack apply_transform(const SpectralStack& stack, const Transform& t);
ScalarMap apply_transform(const ScalarMap& map, const Transform& t);

/// Flips, 90-degree rotations and random crops; per-pixel spectra untouched.
std::vector<SpectralStack> augment(const SpectralStack& stack, std::uint64_t seed,
                                   const AugmentOptions& opts = {});

// ---- folds -------------------------------------------------------------------

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

/// k disjoint test folds over a seeded shuffle; fold sizes differ by at most 1,
/// larger folds first.
std::vector<Fold> split_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

// ---- synthetic scenes --------------------------------------------------------

/// One training/evaluation quadruple (H, R, D_hsi, H_s) plus its spot layout.
struct Sample {
    std::string id;
    SpectralStack hsi;
    SpectralStack rgb;
    DensityMap d_hsi;
    SpectralStack sparse;
    SpotSet spots;
};

struct SynthOptions {
    std::vector<double> wavelengths_nm = default_band_grid();
    std::uint64_t species_seed = 1;  // selects the endmember library
    int library_size = 6;
    int min_endmembers = 3;
    int max_endmembers = 5;
    int n_spots = 20;
    double sigma_px = 2.0;
    double threshold = 0.05;
    double max_band_step = 60.0;  // cap on |H[c+1] - H[c]| in [0,255] units
    bool use_custom_response = false;
    CameraResponse response;  // used when use_custom_response
};

std::vector<Sample> generate_synthetic_dataset(std::size_t n_stacks, std::size_t width,
                                               std::size_t height, std::uint64_t seed,
                                               const SynthOptions& opts = {});

/// Applies the same transform to every plane of a sample.
Sample apply_transform(const Sample& sample, const Transform& t);

// ---- dataset directories -----------------------------------------------------
//
// `manifest.json` lists every sample with the files holding its planes:
// `<id>_hsi`, `<id>_rgb`, `<id>_sparse` (stacks), `<id>_dhsi` (map) and
// `<id>_spots.csv`. The `hsi` entry may be absent for inputs without ground truth.

/// Writes all samples plus the manifest into `dir` (created if missing).
/// `generator_json` (a JSON object) is stored under the manifest key "generator".
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir,
                  const std::string& generator_json = "{}");

/// Loads every sample listed in the manifest; file names resolve relative to
/// the manifest's directory. With `require_ground_truth`, a sample without an
/// `hsi` entry is a DataError.
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path,
                                 bool require_ground_truth = true);

}  // namespace ssr::data
