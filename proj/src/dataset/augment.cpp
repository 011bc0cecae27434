#include <algorithm>
#include <numeric>
#include <random>

#include "ssr/dataset.hpp"
#include "ssr/errors.hpp"

namespace ssr::data {

namespace {

struct Dims {
    std::size_t width, height;
};

Dims output_dims(std::size_t w, std::size_t h, const Transform& t) {
    switch (t.kind) {
        case TransformKind::rot90:
        case TransformKind::rot270: return {h, w};
        case TransformKind::crop:
            if (t.width == 0 || t.height == 0 || t.x0 + t.width > w || t.y0 + t.height > h) {
                throw DataError("crop " + std::to_string(t.width) + "x" + std::to_string(t.height) +
                                "+" + std::to_string(t.x0) + "+" + std::to_string(t.y0) +
                                " does not fit a " + std::to_string(w) + "x" + std::to_string(h) +
                                " image");
            }
            return {t.width, t.height};
        default: return {w, h};
    }
}

// Source pixel (x, y) for output pixel (ox, oy).
std::pair<std::size_t, std::size_t> source_of(std::size_t ox, std::size_t oy, std::size_t w,
                                              std::size_t h, const Transform& t) {
    switch (t.kind) {
        case TransformKind::identity: return {ox, oy};
        case TransformKind::flip_h: return {w - 1 - ox, oy};
        case TransformKind::flip_v: return {ox, h - 1 - oy};
        case TransformKind::rot90: return {oy, h - 1 - ox};  // clockwise
        case TransformKind::rot180: return {w - 1 - ox, h - 1 - oy};
        case TransformKind::rot270: return {w - 1 - oy, ox};
        case TransformKind::crop: return {ox + t.x0, oy + t.y0};
    }
    return {ox, oy};
}

void remap_planes(std::span<const float> src, std::span<float> dst, std::size_t planes, std::size_t w, std::size_t h,
                  Dims od, const Transform& t) {
    for (std::size_t c = 0; c < planes; ++c) {
        for (std::size_t oy = 0; oy < od.height; ++oy) {
            for (std::size_t ox = 0; ox < od.width; ++ox) {
                const auto [sx, sy] = source_of(ox, oy, w, h, t);
                dst[(c * od.height + oy) * od.width + ox] = src[(c * h + sy) * w + sx];
            }
        }
    }
}

}  // namespace

SpectralStack apply_transform(const SpectralStack& stack, const Transform& t) {
    const Dims od = output_dims(stack.width(), stack.height(), t);
    std::vector<float> out(od.width * od.height * stack.channels());
    remap_planes(stack.values(), out, stack.channels(), stack.width(), stack.height(), od, t);
    return SpectralStack(od.width, od.height, stack.wavelengths_nm(), std::move(out));
}

ScalarMap apply_transform(const ScalarMap& map, const Transform& t) {
    const Dims od = output_dims(map.width, map.height, t);
    ScalarMap out(od.width, od.height);
    remap_planes(map.values, out.values, 1, map.width, map.height, od, t);
    return out;
}

Sample apply_transform(const Sample& sample, const Transform& t) {
    const std::size_t w = sample.hsi.width(), h = sample.hsi.height();
    const Dims od = output_dims(w, h, t);
    Sample out;
    out.id = sample.id;
    out.hsi = apply_transform(sample.hsi, t);
    out.rgb = apply_transform(sample.rgb, t);
    out.sparse = apply_transform(sample.sparse, t);
    out.d_hsi = DensityMap{apply_transform(sample.d_hsi.map, t)};
    std::vector<Spot> spots;
    for (Spot s : sample.spots.spots()) {
        const double u = s.u, v = s.v;
        const double W = static_cast<double>(w), H = static_cast<double>(h);
        switch (t.kind) {
            case TransformKind::identity: break;
            case TransformKind::flip_h: s.u = W - 1 - u; break;
            case TransformKind::flip_v: s.v = H - 1 - v; break;
            case TransformKind::rot90: s.u = H - 1 - v; s.v = u; break;
            case TransformKind::rot180: s.u = W - 1 - u; s.v = H - 1 - v; break;
            case TransformKind::rot270: s.u = v; s.v = W - 1 - u; break;
            case TransformKind::crop:
                s.u = u - static_cast<double>(t.x0);
                s.v = v - static_cast<double>(t.y0);
                break;
        }
        if (s.u >= 0.0 && s.v >= 0.0 && s.u <= static_cast<double>(od.width) - 1 &&
            s.v <= static_cast<double>(od.height) - 1) {
            spots.push_back(s);
        }
    }
    out.spots = SpotSet(std::move(spots), od.width, od.height);
    return out;
}

std::vector<Transform> augment_plan(std::size_t width, std::size_t height, std::uint64_t seed,
                                    const AugmentOptions& opts) {
    std::vector<Transform> plan;
    if (opts.flips) {
        plan.push_back({TransformKind::flip_h});
        plan.push_back({TransformKind::flip_v});
    }
    if (opts.rotations) {
        plan.push_back({TransformKind::rot90});
        plan.push_back({TransformKind::rot180});
        plan.push_back({TransformKind::rot270});
    }
    if (opts.crops > 0 && opts.crop_width > 0 && opts.crop_height > 0) {
        if (opts.crop_width > width || opts.crop_height > height) {
            throw DataError("crop " + std::to_string(opts.crop_width) + "x" +
                            std::to_string(opts.crop_height) + " is larger than the " +
                            std::to_string(width) + "x" + std::to_string(height) + " image");
        }
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < opts.crops; ++i) {
            Transform t{TransformKind::crop};
            t.width = opts.crop_width;
            t.height = opts.crop_height;
            t.x0 = rng() % (width - opts.crop_width + 1);
            t.y0 = rng() % (height - opts.crop_height + 1);
            plan.push_back(t);
        }
    }
    return plan;
}

std::vector<SpectralStack> augment(const SpectralStack& stack, std::uint64_t seed,
                                   const AugmentOptions& opts) {
    std::vector<SpectralStack> out;
    for (const Transform& t : augment_plan(stack.width(), stack.height(), seed, opts)) {
        out.push_back(apply_transform(stack, t));
    }
    return out;
}

std::vector<Fold> split_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
    if (k <= 0) throw DataError("k must be positive, got " + std::to_string(k));
    const std::size_t n = ids.size();
    if (static_cast<std::size_t>(k) > n) {
        throw DataError("k=" + std::to_string(k) + " exceeds dataset size " + std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t K = static_cast<std::size_t>(k);
    std::vector<Fold> folds(K);
    std::vector<std::size_t> fold_of(n);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < K; ++f) {
        const std::size_t size = n / K + (f < n % K ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) fold_of[order[pos++]] = f;
    }
    // Preserve the caller's id order inside each list.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < K; ++f) {
            (fold_of[i] == f ? folds[f].test_ids : folds[f].train_ids).push_back(ids[i]);
        }
    }
    return folds;
}

}  // namespace ssr::data
