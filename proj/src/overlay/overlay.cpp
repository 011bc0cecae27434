#include "ssr/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ssr/errors.hpp"

namespace ssr::overlay {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt_nm(double nm) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", nm);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("cannot parse " + what + " '" + s + "'");
    }
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

// ---- narrow-band images ----------------------------------------------------------

std::vector<double> default_narrow_bands() { return {415.0, 540.0}; }

std::size_t nearest_band(const std::vector<double>& wavelengths_nm, double nm) {
    if (wavelengths_nm.empty()) throw DataError("band grid is empty");
    std::size_t best = 0;
    for (std::size_t c = 1; c < wavelengths_nm.size(); ++c) {
        if (std::abs(wavelengths_nm[c] - nm) < std::abs(wavelengths_nm[best] - nm)) best = c;
    }
    return best;
}

NarrowBandImage narrow_band(const data::SpectralStack& msi, const std::vector<double>& requested_nm) {
    if (requested_nm.empty()) throw ConfigError("narrow_band needs at least one wavelength");
    const auto& wl = msi.wavelengths_nm();
    NarrowBandImage out;
    for (double nm : requested_nm) {
        if (!std::isfinite(nm)) throw ConfigError("narrow_band wavelength must be finite");
        BandChoice ch;
        ch.requested_nm = nm;
        ch.band = nearest_band(wl, nm);
        ch.band_nm = wl[ch.band];
        ch.substituted = ch.band_nm != nm;
        ch.out_of_range = nm < wl.front() || nm > wl.back();
        if (ch.substituted) {
            out.warnings.push_back("requested " + fmt_nm(nm) + " nm " +
                                   (ch.out_of_range ? "is outside the band grid " + fmt_nm(wl.front()) +
                                                          "-" + fmt_nm(wl.back()) + " nm"
                                                    : std::string("is not on the band grid")) +
                                   "; using band " + std::to_string(ch.band) + " (" +
                                   fmt_nm(ch.band_nm) + " nm)");
        }
        data::ScalarMap plane(msi.width(), msi.height());
        const auto band = msi.band(ch.band);
        std::copy(band.begin(), band.end(), plane.values.begin());
        out.choices.push_back(ch);
        out.planes.push_back(std::move(plane));
    }
    return out;
}

std::array<data::ScalarMap, 3> false_color(const NarrowBandImage& nb) {
    const auto& p = nb.planes;
    if (p.empty() || p.size() > 3) throw ConfigError("false color needs 1 to 3 bands");
    std::array<const data::ScalarMap*, 3> src{};
    if (p.size() == 1) {
        src = {&p[0], &p[0], &p[0]};
    } else if (p.size() == 2) {
        src = {&p[1], &p[0], &p[0]};
    } else {
        src = {&p[2], &p[1], &p[0]};
    }
    std::array<data::ScalarMap, 3> rgb;
    for (int k = 0; k < 3; ++k) {
        rgb[k] = *src[k];
        for (float& v : rgb[k].values) v = static_cast<float>(to_byte(v));
    }
    return rgb;
}

// ---- extinction table ----------------------------------------------------------------

void ExtinctionTable::validate() const {
    const std::size_t n = wavelengths_nm.size();
    if (eps_hbo2.size() != n || eps_hb.size() != n) {
        throw DataError("extinction table columns differ in length");
    }
    if (n < 2) throw DataError("extinction table needs at least two rows");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(wavelengths_nm[i])) throw DataError("non-finite extinction wavelength");
        if (i > 0 && !(wavelengths_nm[i] > wavelengths_nm[i - 1])) {
            throw DataError("extinction wavelengths must be strictly increasing");
        }
        if (!(eps_hbo2[i] > 0.0) || !(eps_hb[i] > 0.0) || !std::isfinite(eps_hbo2[i]) ||
            !std::isfinite(eps_hb[i])) {
            throw DataError("extinction coefficients must be positive and finite (row " +
                            std::to_string(i) + ")");
        }
    }
}

std::array<std::vector<double>, 2> ExtinctionTable::resample(
    const std::vector<double>& wavelengths) const {
    validate();
    std::array<std::vector<double>, 2> out;
    for (double nm : wavelengths) {
        if (nm < wavelengths_nm.front() || nm > wavelengths_nm.back()) {
            throw DataError("extinction table " + fmt_nm(wavelengths_nm.front()) + "-" +
                            fmt_nm(wavelengths_nm.back()) + " nm does not cover " + fmt_nm(nm) +
                            " nm");
        }
        const auto hi = static_cast<std::size_t>(
            std::lower_bound(wavelengths_nm.begin(), wavelengths_nm.end(), nm) -
            wavelengths_nm.begin());
        if (wavelengths_nm[hi] == nm) {
            out[0].push_back(eps_hbo2[hi]);
            out[1].push_back(eps_hb[hi]);
            continue;
        }
        const std::size_t lo = hi - 1;
        const double f = (nm - wavelengths_nm[lo]) / (wavelengths_nm[hi] - wavelengths_nm[lo]);
        out[0].push_back((1.0 - f) * eps_hbo2[lo] + f * eps_hbo2[hi]);
        out[1].push_back((1.0 - f) * eps_hb[lo] + f * eps_hb[hi]);
    }
    return out;
}

ExtinctionTable load_extinction_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty extinction file");
    if (split_csv_line(line) != std::vector<std::string>{"wavelength_nm", "eps_hbo2", "eps_hb"}) {
        throw DataError(path.string() + ": expected header wavelength_nm,eps_hbo2,eps_hb");
    }
    ExtinctionTable t;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 3) throw DataError(path.string() + ": malformed row '" + line + "'");
        t.wavelengths_nm.push_back(parse_double(cells[0], "wavelength_nm"));
        t.eps_hbo2.push_back(parse_double(cells[1], "eps_hbo2"));
        t.eps_hb.push_back(parse_double(cells[2], "eps_hb"));
    }
    t.validate();
    return t;
}

void save_extinction_csv(const ExtinctionTable& table, const std::filesystem::path& path) {
    table.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(17);
    out << "wavelength_nm,eps_hbo2,eps_hb\n";
    for (std::size_t i = 0; i < table.wavelengths_nm.size(); ++i) {
        out << table.wavelengths_nm[i] << ',' << table.eps_hbo2[i] << ',' << table.eps_hb[i] << '\n';
    }
}

// ---- unmixing ----------------------------------------------------------------------

namespace {

// Columns kept by each active set, in the order c_hbo2, c_hb, offset.
constexpr std::array<std::array<bool, 3>, 4> kFree{{
    {true, true, true},
    {true, false, true},
    {false, true, true},
    {false, false, true},
}};

}  // namespace

Unmixer::Unmixer(const ExtinctionTable& table, const std::vector<double>& wavelengths_nm,
                 double min_blood_absorbance)
    : min_blood_(min_blood_absorbance) {
    if (!(min_blood_absorbance >= 0.0)) throw ConfigError("min_blood_absorbance must be >= 0");
    if (wavelengths_nm.size() < 3) throw DataError("unmixing needs at least 3 bands");
    const auto eps = table.resample(wavelengths_nm);
    const auto n = static_cast<Eigen::Index>(wavelengths_nm.size());
    eps_.resize(n, 2);
    Eigen::MatrixXd M(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        eps_(i, 0) = eps[0][static_cast<std::size_t>(i)];
        eps_(i, 1) = eps[1][static_cast<std::size_t>(i)];
        M.row(i) << eps_(i, 0), eps_(i, 1), 1.0;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
    if (qr.rank() < 3) {
        throw DataError("extinction spectra and offset are not separable on this band grid");
    }
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index j = 0; j < 3; ++j) {
            if (kFree[k][static_cast<std::size_t>(j)]) cols.push_back(j);
        }
        Eigen::MatrixXd Mk(n, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) Mk.col(static_cast<Eigen::Index>(j)) = M.col(cols[j]);
        solve_[k] = Mk.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(n, n));
    }
}

UnmixFit Unmixer::fit(std::span<const double> absorbance) const {
    if (absorbance.size() != bands()) throw DataError("absorbance length does not match the band grid");
    UnmixFit out;
    out.sao2 = kNaN;
    const auto n = static_cast<Eigen::Index>(absorbance.size());
    const Eigen::Map<const Eigen::VectorXd> a(absorbance.data(), n);
    if (!a.allFinite()) {
        out.residual = kNaN;
        return out;
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < 4; ++k) {
        const Eigen::VectorXd x = solve_[k] * a;
        double c[3] = {0.0, 0.0, 0.0};
        Eigen::Index used = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            if (kFree[k][j]) c[j] = x(used++);
        }
        if (c[0] < 0.0 || c[1] < 0.0) continue;
        const double r2 = (a - eps_.col(0) * c[0] - eps_.col(1) * c[1] -
                           Eigen::VectorXd::Constant(n, c[2]))
                              .squaredNorm();
        if (r2 < best) {
            best = r2;
            out.c_hbo2 = c[0];
            out.c_hb = c[1];
            out.offset = c[2];
        }
    }
    out.residual = std::sqrt(best / static_cast<double>(n));
    const double blood = (eps_.col(0) * out.c_hbo2 + eps_.col(1) * out.c_hb).maxCoeff();
    out.defined = blood >= min_blood_ && blood > 0.0;
    if (out.defined) out.sao2 = out.c_hbo2 / (out.c_hbo2 + out.c_hb);
    return out;
}

SaturationResult oxygen_saturation(const data::SpectralStack& msi, const ExtinctionTable& table,
                                   const SaturationOptions& opt) {
    const std::size_t C = msi.channels();
    if (opt.i0.size() != 1 && opt.i0.size() != C) {
        throw ConfigError("i0 needs 1 or " + std::to_string(C) + " values, got " +
                          std::to_string(opt.i0.size()));
    }
    for (double v : opt.i0) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("i0 values must be positive");
    }
    const Unmixer unmix(table, msi.wavelengths_nm(), opt.min_blood_absorbance);
    SaturationResult r;
    r.sao2 = data::ScalarMap(msi.width(), msi.height(), std::numeric_limits<float>::quiet_NaN());
    r.residual = r.sao2;
    r.defined.assign(msi.pixels(), 0);
    r.min = std::numeric_limits<double>::infinity();
    r.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    std::vector<double> a(C);
    for (std::size_t y = 0; y < msi.height(); ++y) {
        for (std::size_t x = 0; x < msi.width(); ++x) {
            bool valid = true;
            for (std::size_t c = 0; c < C; ++c) {
                const double I = msi.at(c, y, x);
                if (!(I > 0.0)) {
                    valid = false;
                    break;
                }
                a[c] = -std::log(I / opt.i0[opt.i0.size() == 1 ? 0 : c]);
            }
            if (!valid) continue;
            const auto f = unmix.fit(a);
            r.residual.at(y, x) = static_cast<float>(f.residual);
            if (!f.defined) continue;
            r.sao2.at(y, x) = static_cast<float>(f.sao2);
            r.defined[y * msi.width() + x] = 1;
            ++r.defined_count;
            sum += f.sao2;
            r.min = std::min(r.min, f.sao2);
            r.max = std::max(r.max, f.sao2);
        }
    }
    if (r.defined_count == 0) {
        r.mean = r.min = r.max = kNaN;
    } else {
        r.mean = sum / static_cast<double>(r.defined_count);
    }
    return r;
}

// ---- draping -------------------------------------------------------------------------

double sample_bilinear(const data::ScalarMap& map, double u, double v) {
    if (map.width == 0 || map.height == 0) return kNaN;
    if (!(u >= 0.0 && v >= 0.0 && u <= static_cast<double>(map.width - 1) &&
          v <= static_cast<double>(map.height - 1))) {
        return kNaN;
    }
    const auto x0 = static_cast<std::size_t>(u), y0 = static_cast<std::size_t>(v);
    const std::size_t x1 = std::min(x0 + 1, map.width - 1), y1 = std::min(y0 + 1, map.height - 1);
    const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
    const std::array<std::pair<double, float>, 4> taps{{
        {(1.0 - fx) * (1.0 - fy), map.at(y0, x0)},
        {fx * (1.0 - fy), map.at(y0, x1)},
        {(1.0 - fx) * fy, map.at(y1, x0)},
        {fx * fy, map.at(y1, x1)},
    }};
    double acc = 0.0;
    for (const auto& [w, value] : taps) {
        if (w > 0.0) acc += w * static_cast<double>(value);
    }
    return acc;
}

namespace {

void check_map(const data::ScalarMap& map, const geom::PinholeCamera& cam) {
    if (map.width != cam.width || map.height != cam.height) {
        throw DataError("overlay map is " + std::to_string(map.width) + "x" +
                        std::to_string(map.height) + " but the camera is " +
                        std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
}

double sample_point(const data::ScalarMap& map, const geom::PinholeCamera& cam, const geom::Vec3& X) {
    if (!(X.z() > 0.0)) return kNaN;
    const geom::Vec2 px = cam.project(X);
    return sample_bilinear(map, px.x(), px.y());
}

}  // namespace

geom::PointCloud drape_overlay(const geom::PointCloud& cloud, const data::ScalarMap& map,
                               const geom::PinholeCamera& cam) {
    cloud.validate();
    cam.validate();
    check_map(map, cam);
    geom::PointCloud out = cloud;
    out.values.assign(cloud.size(), kNaN);
    for (std::size_t i = 0; i < cloud.size(); ++i) out.values[i] = sample_point(map, cam, cloud.points[i]);
    return out;
}

geom::PointCloud drape_colors(const geom::PointCloud& cloud, const std::array<data::ScalarMap, 3>& rgb,
                              const geom::PinholeCamera& cam) {
    cloud.validate();
    cam.validate();
    for (const auto& m : rgb) check_map(m, cam);
    geom::PointCloud out = cloud;
    out.values.assign(cloud.size(), kNaN);
    out.colors.assign(cloud.size(), {0, 0, 0});
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::array<double, 3> s{};
        bool ok = true;
        for (std::size_t k = 0; k < 3; ++k) {
            s[k] = sample_point(rgb[k], cam, cloud.points[i]);
            ok = ok && std::isfinite(s[k]);
        }
        if (!ok) continue;
        out.values[i] = s[0];
        out.colors[i] = {to_byte(s[0]), to_byte(s[1]), to_byte(s[2])};
    }
    return out;
}

}  // namespace ssr::overlay
