#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ssr/dataset.hpp"
#include "ssr/errors.hpp"

namespace ssr::data {

SpectralStack synthesize_rgb(const SpectralStack& hsi, const CameraResponse& h) {
    if (h.bands() != hsi.channels()) {
        throw DataError("camera response has " + std::to_string(h.bands()) +
                        " columns, stack has " + std::to_string(hsi.channels()) + " bands");
    }
    for (const auto& row : h.rows) {
        if (row.size() != hsi.channels()) throw DataError("camera response row length mismatch");
    }
    const std::size_t P = hsi.pixels();
    std::vector<float> out(3 * P, 0.0f);
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t c = 0; c < hsi.channels(); ++c) {
            const float w = static_cast<float>(h.rows[k][c]);
            const auto band = hsi.band(c);
            float* dst = out.data() + k * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] += w * band[p];
        }
    }
    // RGB carries nominal R/G/B band centres so downstream metadata stays honest.
    return SpectralStack(hsi.width(), hsi.height(), {465.0, 540.0, 610.0}, [&] {
        // stored as B, G, R in increasing-wavelength order
        std::vector<float> bgr(3 * P);
        std::copy_n(out.data() + 2 * P, P, bgr.data());
        std::copy_n(out.data() + 1 * P, P, bgr.data() + P);
        std::copy_n(out.data(), P, bgr.data() + 2 * P);
        return bgr;
    }());
}

DensityMap make_density_map(const SpotSet& spots, double sigma_px, std::size_t width,
                            std::size_t height) {
    if (!(sigma_px > 0.0)) throw DataError("sigma_px must be > 0");
    if (!spots.spots().empty() && (spots.width() != width || spots.height() != height)) {
        throw DataError("spot set dims do not match density map dims");
    }
    DensityMap d{ScalarMap(width, height, 0.0f)};
    const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double best = 0.0;
            for (const Spot& s : spots.spots()) {
                const double dx = static_cast<double>(x) - s.u;
                const double dy = static_cast<double>(y) - s.v;
                best = std::max(best, std::exp(-(dx * dx + dy * dy) * inv));
            }
            d.map.at(y, x) = static_cast<float>(best);
        }
    }
    return d;
}

SpectralStack make_sparse_stack(const SpectralStack& hsi, const DensityMap& d_hsi,
                                double threshold) {
    if (d_hsi.width() != hsi.width() || d_hsi.height() != hsi.height()) {
        throw DataError("density map " + std::to_string(d_hsi.width()) + "x" +
                        std::to_string(d_hsi.height()) + " does not match stack " +
                        std::to_string(hsi.width()) + "x" + std::to_string(hsi.height()));
    }
    std::vector<float> out(hsi.values().size(), 0.0f);
    const std::size_t P = hsi.pixels();
    for (std::size_t c = 0; c < hsi.channels(); ++c) {
        const auto band = hsi.band(c);
        for (std::size_t p = 0; p < P; ++p) {
            const float d = d_hsi.map.values[p];
            if (d >= threshold) out[c * P + p] = d * band[p];
        }
    }
    return SpectralStack(hsi.width(), hsi.height(), hsi.wavelengths_nm(), std::move(out));
}

// ---- synthetic generator -----------------------------------------------------

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<std::vector<double>> endmember_library(const SynthOptions& opts) {
    Rng rng(opts.species_seed * 0x9E3779B97F4A7C15ULL + 17);
    const auto& wl = opts.wavelengths_nm;
    const double lo = wl.front(), hi = wl.back();
    std::vector<std::vector<double>> lib;
    int attempts = 0;
    while (static_cast<int>(lib.size()) < opts.library_size) {
        if (++attempts > 10000) throw DataError("cannot draw smooth endmembers under max_band_step");
        std::vector<double> e(wl.size());
        const double base = uniform(rng, 0.05, 0.3);
        const int bumps = rng() % 2 == 0 ? 1 : 2;
        double mu[2], width[2], amp[2];
        for (int b = 0; b < bumps; ++b) {
            mu[b] = uniform(rng, lo - 20.0, hi + 20.0);
            width[b] = uniform(rng, 25.0, 80.0);
            amp[b] = uniform(rng, 0.2, 0.8);
        }
        double peak = 0.0;
        for (std::size_t c = 0; c < wl.size(); ++c) {
            double v = base;
            for (int b = 0; b < bumps; ++b) {
                const double z = (wl[c] - mu[b]) / width[b];
                v += amp[b] * std::exp(-0.5 * z * z);
            }
            e[c] = v;
            peak = std::max(peak, v);
        }
        double step = 0.0;
        for (std::size_t c = 0; c < e.size(); ++c) {
            e[c] /= peak;
            if (c > 0) step = std::max(step, std::abs(e[c] - e[c - 1]) * 255.0);
        }
        if (step <= opts.max_band_step) lib.push_back(std::move(e));
    }
    return lib;
}

// Smooth positive field: constant floor plus a few wide Gaussian blobs.
std::vector<double> smooth_field(Rng& rng, std::size_t w, std::size_t h, double floor) {
    std::vector<double> f(w * h, floor);
    const double scale = static_cast<double>(std::min(w, h));
    for (int b = 0; b < 4; ++b) {
        const double cx = uniform(rng, 0.0, static_cast<double>(w));
        const double cy = uniform(rng, 0.0, static_cast<double>(h));
        const double r = uniform(rng, 0.15, 0.45) * scale;
        const double amp = uniform(rng, 0.3, 1.0);
        const double inv = 1.0 / (2.0 * r * r);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                f[y * w + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
            }
        }
    }
    return f;
}

}  // namespace

std::vector<Sample> generate_synthetic_dataset(std::size_t n_stacks, std::size_t width,
                                               std::size_t height, std::uint64_t seed,
                                               const SynthOptions& opts) {
    if (width < 3 || height < 3) throw DataError("synthetic stacks must be at least 3x3");
    if (opts.min_endmembers < 1 || opts.max_endmembers < opts.min_endmembers ||
        opts.max_endmembers > opts.library_size) {
        throw DataError("invalid endmember counts");
    }
    if (opts.n_spots < 0 || static_cast<std::size_t>(opts.n_spots) > (width - 2) * (height - 2)) {
        throw DataError("n_spots does not fit the image interior");
    }
    const auto& wl = opts.wavelengths_nm;
    const auto library = endmember_library(opts);
    CameraResponse response = opts.use_custom_response ? opts.response : default_camera_response(wl);
    if (opts.use_custom_response) response.normalize();

    std::vector<Sample> out;
    out.reserve(n_stacks);
    const std::size_t P = width * height;
    for (std::size_t s = 0; s < n_stacks; ++s) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(opts.species_seed)};
        Rng rng(seq);
        const int K = opts.min_endmembers +
                      static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                   opts.max_endmembers - opts.min_endmembers + 1));
        std::vector<int> order(library.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<std::size_t>(K));

        std::vector<std::vector<double>> abundance;
        for (int k = 0; k < K; ++k) abundance.push_back(smooth_field(rng, width, height, 0.1));
        for (std::size_t p = 0; p < P; ++p) {
            double sum = 0.0;
            for (const auto& a : abundance) sum += a[p];
            for (auto& a : abundance) a[p] /= sum;
        }
        auto intensity = smooth_field(rng, width, height, 0.0);
        const double imax = *std::max_element(intensity.begin(), intensity.end());
        for (double& v : intensity) v = 0.45 + 0.4 * v / imax;

        std::vector<float> values(P * wl.size());
        for (std::size_t c = 0; c < wl.size(); ++c) {
            for (std::size_t p = 0; p < P; ++p) {
                double v = 0.0;
                for (int k = 0; k < K; ++k) v += abundance[k][p] * library[order[k]][c];
                values[c * P + p] = static_cast<float>(255.0 * intensity[p] * v);
            }
        }

        std::vector<Spot> spots;
        std::set<std::pair<std::size_t, std::size_t>> taken;
        while (static_cast<int>(spots.size()) < opts.n_spots) {
            const std::size_t x = 1 + rng() % (width - 2);
            const std::size_t y = 1 + rng() % (height - 2);
            if (!taken.insert({x, y}).second) continue;
            const int id = static_cast<int>(spots.size());
            spots.push_back({id, static_cast<double>(x), static_cast<double>(y),
                             wl[static_cast<std::size_t>(id) % wl.size()]});
        }

        Sample sample;
        char name[32];
        std::snprintf(name, sizeof name, "s%04zu", s);
        sample.id = name;
        sample.hsi = SpectralStack(width, height, wl, std::move(values));
        sample.rgb = synthesize_rgb(sample.hsi, response);
        sample.spots = SpotSet(std::move(spots), width, height);
        sample.d_hsi = make_density_map(sample.spots, opts.sigma_px, width, height);
        sample.sparse = make_sparse_stack(sample.hsi, sample.d_hsi, opts.threshold);
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace ssr::data
