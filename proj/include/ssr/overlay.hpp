#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssr/dataset.hpp"
#include "ssr/geometry.hpp"

namespace ssr::overlay {

// ---- narrow-band images ----------------------------------------------------------

struct BandChoice {
    double requested_nm = 0.0;
    std::size_t band = 0;
    double band_nm = 0.0;
    bool substituted = false;  // requested wavelength is not on the grid
    bool out_of_range = false;  // requested wavelength lies outside the grid
};

struct NarrowBandImage {
    std::vector<BandChoice> choices;
    std::vector<data::ScalarMap> planes;  // one per request, the selected band as-is
    std::vector<std::string> warnings;    // one per substituted request
};

/// Default requests: 415 and 540 nm.
std::vector<double> default_narrow_bands();

/// Index of the band nearest `nm`; ties go to the shorter wavelength.
std::size_t nearest_band(const std::vector<double>& wavelengths_nm, double nm);

/// Empty request list or non-finite request: ConfigError.
NarrowBandImage narrow_band(const data::SpectralStack& msi,
                            const std::vector<double>& requested_nm = default_narrow_bands());

/// False-color composition. One plane: gray. Two planes (short, long): R from
/// the long band, G and B from the short one. Three planes: R, G, B from the
/// last, middle, first. Values are rounded and clamped to [0, 255].
std::array<data::ScalarMap, 3> false_color(const NarrowBandImage& nb);

// ---- oxygen saturation -------------------------------------------------------------

struct ExtinctionTable {
    std::vector<double> wavelengths_nm;
    std::vector<double> eps_hbo2;
    std::vector<double> eps_hb;

    /// Equal lengths, at least two rows, strictly increasing wavelengths,
    /// positive finite coefficients. DataError otherwise.
    void validate() const;

    /// Linear interpolation onto `wavelengths_nm`; a wavelength outside the
    /// table range is a DataError. Returns {eps_hbo2, eps_hb}.
    std::array<std::vector<double>, 2> resample(const std::vector<double>& wavelengths_nm) const;
};

/// CSV with header `wavelength_nm,eps_hbo2,eps_hb`.
ExtinctionTable load_extinction_csv(const std::filesystem::path& path);
void save_extinction_csv(const ExtinctionTable& table, const std::filesystem::path& path);

struct SaturationOptions {
    /// Flat-field intensity I0: one value for all bands or one per band.
    std::vector<double> i0{255.0};
    /// A pixel is undefined when the fitted blood absorbance c1*eps_hbo2 +
    /// c2*eps_hb stays below this value at every band.
    double min_blood_absorbance = 1e-9;
};

struct UnmixFit {
    double c_hbo2 = 0.0;
    double c_hb = 0.0;
    double offset = 0.0;
    double sao2 = 0.0;      // NaN when undefined
    double residual = 0.0;  // RMS absorbance residual
    bool defined = false;
};

/// Least squares of absorbance against [eps_hbo2, eps_hb, 1] with both
/// hemoglobin concentrations constrained to be nonnegative and the offset free.
/// The four active sets are solved exactly and the best feasible one kept.
class Unmixer {
public:
    Unmixer(const ExtinctionTable& table, const std::vector<double>& wavelengths_nm,
            double min_blood_absorbance = 1e-9);

    UnmixFit fit(std::span<const double> absorbance) const;
    std::size_t bands() const noexcept { return static_cast<std::size_t>(eps_.rows()); }
    const Eigen::MatrixX2d& extinction() const noexcept { return eps_; }

private:
    Eigen::MatrixX2d eps_;
    // Per active set (free, c_hb = 0, c_hbo2 = 0, both 0): solve matrix mapping
    // absorbance to the coefficients of the free columns.
    std::array<Eigen::MatrixXd, 4> solve_;
    double min_blood_;
};

struct SaturationResult {
    data::ScalarMap sao2;      // NaN where undefined
    data::ScalarMap residual;  // NaN where absorbance is undefined
    std::vector<std::uint8_t> defined;
    std::size_t defined_count = 0;
    double mean = 0.0;  // over defined pixels; NaN when none
    double min = 0.0;
    double max = 0.0;
};

/// A(lambda) = -ln(I(lambda) / I0) per pixel, then Unmixer::fit. Pixels with a
/// nonpositive intensity have no absorbance and are undefined.
SaturationResult oxygen_saturation(const data::SpectralStack& msi, const ExtinctionTable& table,
                                   const SaturationOptions& opt = {});

// ---- draping onto surfaces ---------------------------------------------------------

/// Bilinear sample at a subpixel position; NaN outside [0, w-1] x [0, h-1].
double sample_bilinear(const data::ScalarMap& map, double u, double v);

/// Per-point values sampled at each point's projection. Points behind the
/// camera or projecting outside the map get NaN. Map size must match the camera.
geom::PointCloud drape_overlay(const geom::PointCloud& cloud, const data::ScalarMap& map,
                               const geom::PinholeCamera& cam);

/// Per-point colors from three planes; values carry the first plane and
/// points without data get NaN and black.
geom::PointCloud drape_colors(const geom::PointCloud& cloud,
                              const std::array<data::ScalarMap, 3>& rgb,
                              const geom::PinholeCamera& cam);

}  // namespace ssr::overlay
