#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ssr/errors.hpp"
#include "ssr/geometry.hpp"

namespace ssr::geom {

using nlohmann::json;

double GrayImage::sample(double x, double y) const {
    const double mx = static_cast<double>(width - 1), my = static_cast<double>(height - 1);
    x = std::clamp(x, 0.0, mx);
    y = std::clamp(y, 0.0, my);
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
    const double top = (1.0 - ax) * at(y0, x0) + ax * at(y0, x1);
    const double bot = (1.0 - ax) * at(y1, x0) + ax * at(y1, x1);
    return (1.0 - ay) * top + ay * bot;
}

GrayImage to_gray(const data::ScalarMap& m) {
    GrayImage g(m.width, m.height);
    g.pixels = m.values;
    return g;
}

data::ScalarMap to_map(const GrayImage& g) {
    data::ScalarMap m(g.width, g.height);
    m.values = g.pixels;
    return m;
}

namespace {

bool is_inf(double v) { return std::isinf(v) && v > 0; }

// 5-tap binomial blur followed by 2x decimation.
GrayImage pyr_down(const GrayImage& src) {
    static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    const std::size_t w = src.width, h = src.height;
    auto clampi = [](long v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
    };
    GrayImage tmp(w, h);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src.at(y, clampi(static_cast<long>(x) + i, w));
            tmp.at(y, x) = static_cast<float>(acc);
        }
    GrayImage out((w + 1) / 2, (h + 1) / 2);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(clampi(2 * static_cast<long>(y) + i, h), 2 * x);
            out.at(y, x) = static_cast<float>(acc);
        }
    return out;
}

std::vector<GrayImage> pyramid(const GrayImage& img, int levels) {
    std::vector<GrayImage> p{img};
    for (int l = 1; l < levels; ++l) {
        if (p.back().width < 16 || p.back().height < 16) break;
        p.push_back(pyr_down(p.back()));
    }
    return p;
}

bool inside(const GrayImage& img, const Vec2& pt, double margin) {
    return pt.x() >= margin && pt.y() >= margin &&
           pt.x() <= static_cast<double>(img.width - 1) - margin &&
           pt.y() <= static_cast<double>(img.height - 1) - margin;
}

// Tracks `p` from a to b; returns false when the track is lost.
bool lk_track(const std::vector<GrayImage>& pa, const std::vector<GrayImage>& pb, const Vec2& p,
              const TrackOptions& opt, Vec2& q) {
    const int R = opt.window_radius;
    const std::size_t n = static_cast<std::size_t>((2 * R + 1) * (2 * R + 1));
    std::vector<double> tmpl(n), gx(n), gy(n);
    Vec2 g = Vec2::Zero();
    for (int level = static_cast<int>(pa.size()) - 1; level >= 0; --level) {
        const GrayImage& I = pa[static_cast<std::size_t>(level)];
        const GrayImage& J = pb[static_cast<std::size_t>(level)];
        const double scale = std::ldexp(1.0, -level);
        const Vec2 pl = p * scale;
        double gxx = 0.0, gxy = 0.0, gyy = 0.0;
        std::size_t k = 0;
        for (int dy = -R; dy <= R; ++dy)
            for (int dx = -R; dx <= R; ++dx, ++k) {
                const double x = pl.x() + dx, y = pl.y() + dy;
                tmpl[k] = I.sample(x, y);
                gx[k] = 0.5 * (I.sample(x + 1, y) - I.sample(x - 1, y));
                gy[k] = 0.5 * (I.sample(x, y + 1) - I.sample(x, y - 1));
                gxx += gx[k] * gx[k];
                gxy += gx[k] * gy[k];
                gyy += gy[k] * gy[k];
            }
        const double det = gxx * gyy - gxy * gxy;
        const double tr = gxx + gyy;
        const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
        if (!(min_eig / static_cast<double>(n) > 1e-7)) return false;
        Vec2 nu = Vec2::Zero();
        for (int it = 0; it < opt.max_iterations; ++it) {
            double bx = 0.0, by = 0.0;
            k = 0;
            for (int dy = -R; dy <= R; ++dy)
                for (int dx = -R; dx <= R; ++dx, ++k) {
                    const double diff =
                        tmpl[k] - J.sample(pl.x() + g.x() + nu.x() + dx, pl.y() + g.y() + nu.y() + dy);
                    bx += diff * gx[k];
                    by += diff * gy[k];
                }
            const Vec2 eta((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            nu += eta;
            if (eta.norm() < opt.epsilon_px * scale) break;
        }
        g += nu;
        if (level > 0) g *= 2.0;
    }
    q = p + g;
    return q.allFinite() && inside(pb.front(), q, 0.0);
}

}  // namespace

std::vector<float> patch_descriptor(const GrayImage& img, const Vec2& pt, int patch_radius) {
    std::vector<float> d;
    d.reserve(static_cast<std::size_t>((2 * patch_radius + 1) * (2 * patch_radius + 1)));
    double mean = 0.0;
    for (int dy = -patch_radius; dy <= patch_radius; ++dy)
        for (int dx = -patch_radius; dx <= patch_radius; ++dx) {
            const double v = img.sample(pt.x() + dx, pt.y() + dy);
            d.push_back(static_cast<float>(v));
            mean += v;
        }
    mean /= static_cast<double>(d.size());
    double norm = 0.0;
    for (float& v : d) {
        v = static_cast<float>(v - mean);
        norm += static_cast<double>(v) * v;
    }
    norm = std::sqrt(norm);
    for (float& v : d) v = norm > 1e-12 ? static_cast<float>(v / norm) : 0.0f;
    return d;
}

DetectorHook corner_detector(const CornerOptions& opt) {
    return [opt](const GrayImage& img) {
        std::vector<Keypoint> out;
        const long w = static_cast<long>(img.width), h = static_cast<long>(img.height);
        const long border = std::max<long>(opt.border_px, opt.block_radius + 1);
        if (w <= 2 * border || h <= 2 * border) return out;
        std::vector<double> ix(img.pixels.size(), 0.0), iy(img.pixels.size(), 0.0);
        for (long y = 1; y < h - 1; ++y)
            for (long x = 1; x < w - 1; ++x) {
                const auto i = static_cast<std::size_t>(y * w + x);
                ix[i] = 0.5 * (img.pixels[i + 1] - img.pixels[i - 1]);
                iy[i] = 0.5 * (img.pixels[i + static_cast<std::size_t>(w)] -
                               img.pixels[i - static_cast<std::size_t>(w)]);
            }
        std::vector<double> resp(img.pixels.size(), 0.0);
        double best = 0.0;
        const long r = opt.block_radius;
        for (long y = border; y < h - border; ++y)
            for (long x = border; x < w - border; ++x) {
                double a = 0.0, b = 0.0, c = 0.0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const auto i = static_cast<std::size_t>((y + dy) * w + x + dx);
                        a += ix[i] * ix[i];
                        b += ix[i] * iy[i];
                        c += iy[i] * iy[i];
                    }
                const double v = 0.5 * (a + c - std::sqrt((a - c) * (a - c) + 4.0 * b * b));
                resp[static_cast<std::size_t>(y * w + x)] = v;
                best = std::max(best, v);
            }
        if (!(best > 1e-12)) return out;
        const double thr = opt.quality * best;
        struct Cand {
            double v;
            long x, y;
        };
        std::vector<Cand> cands;
        for (long y = border; y < h - border; ++y)
            for (long x = border; x < w - border; ++x) {
                const double v = resp[static_cast<std::size_t>(y * w + x)];
                if (v < thr) continue;
                bool is_max = true;
                for (long dy = -1; dy <= 1 && is_max; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        if ((dx || dy) && resp[static_cast<std::size_t>((y + dy) * w + x + dx)] > v) {
                            is_max = false;
                            break;
                        }
                    }
                if (is_max) cands.push_back({v, x, y});
            }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.v > b.v; });
        const double min_d2 = static_cast<double>(opt.min_distance_px) * opt.min_distance_px;
        for (const auto& c : cands) {
            if (static_cast<int>(out.size()) >= opt.max_corners) break;
            const Vec2 pt(static_cast<double>(c.x), static_cast<double>(c.y));
            bool far = true;
            for (const auto& k : out) {
                if ((k.pt - pt).squaredNorm() < min_d2) {
                    far = false;
                    break;
                }
            }
            if (far) out.push_back({pt, patch_descriptor(img, pt, opt.patch_radius)});
        }
        return out;
    };
}

std::size_t CorrespondenceSet::accepted_count() const {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [](const Correspondence& c) { return c.accepted; }));
}

void compute_flow_diagnostics(CorrespondenceSet& set, int median_neighbors) {
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < set.pairs.size(); ++i) {
        auto& c = set.pairs[i];
        c.flow_len_px = (c.q - c.p).norm();
        c.median_dev_px = 0.0;
        if (c.reject_reason != "track_lost") live.push_back(i);
    }
    const std::size_t k = static_cast<std::size_t>(std::max(0, median_neighbors));
    std::vector<std::pair<double, std::size_t>> dist;
    std::vector<double> fx, fy;
    for (std::size_t i : live) {
        auto& c = set.pairs[i];
        dist.clear();
        for (std::size_t j : live) {
            if (j != i) dist.push_back({(set.pairs[j].p - c.p).squaredNorm(), j});
        }
        const std::size_t m = std::min(k, dist.size());
        if (m == 0) continue;
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(m), dist.end());
        fx.clear();
        fy.clear();
        for (std::size_t t = 0; t < m; ++t) {
            const auto& o = set.pairs[dist[t].second];
            fx.push_back(o.q.x() - o.p.x());
            fy.push_back(o.q.y() - o.p.y());
        }
        auto median = [](std::vector<double>& v) {
            std::sort(v.begin(), v.end());
            const std::size_t h = v.size() / 2;
            return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
        };
        const Vec2 med(median(fx), median(fy));
        c.median_dev_px = ((c.q - c.p) - med).norm();
    }
}

CorrespondenceSet track_features(const GrayImage& a, const GrayImage& b, const DetectorHook& detect,
                                 const TrackOptions& opt) {
    if (a.width != b.width || a.height != b.height) {
        throw DataError("frames differ in size");
    }
    if (opt.levels < 1 || opt.window_radius < 1 || opt.max_iterations < 1) {
        throw ConfigError("invalid tracking options");
    }
    CorrespondenceSet set;
    const auto keypoints = detect(a);
    const auto pa = pyramid(a, opt.levels);
    const auto pb = pyramid(b, opt.levels);
    std::size_t usable = 0;
    for (const auto& kp : keypoints) {
        Correspondence c;
        c.p = kp.pt;
        Vec2 q, back;
        if (!lk_track(pa, pb, kp.pt, opt, q) || !lk_track(pb, pa, q, opt, back)) {
            c.q = kp.pt;
            c.accepted = false;
            c.reject_reason = "track_lost";
            c.sym_residual_px = std::numeric_limits<double>::infinity();
            c.descriptor_dist = std::numeric_limits<double>::infinity();
        } else {
            c.q = q;
            c.sym_residual_px = (back - kp.pt).norm();
            const auto db = patch_descriptor(b, q, opt.patch_radius);
            const auto& da = kp.descriptor.empty() ? patch_descriptor(a, kp.pt, opt.patch_radius)
                                                   : kp.descriptor;
            if (da.size() != db.size()) throw ConfigError("descriptor size does not match patch radius");
            double d2 = 0.0;
            for (std::size_t i = 0; i < da.size(); ++i) {
                const double d = static_cast<double>(da[i]) - db[i];
                d2 += d * d;
            }
            c.descriptor_dist = std::sqrt(d2);
            ++usable;
        }
        set.pairs.push_back(std::move(c));
    }
    compute_flow_diagnostics(set, opt.median_neighbors);
    if (usable < kMinPairs) {
        set.insufficient = true;
        set.note = "only " + std::to_string(usable) + " tracked matches (" +
                   std::to_string(keypoints.size()) + " keypoints), need " +
                   std::to_string(kMinPairs);
    }
    return set;
}

CorrespondenceSet load_correspondences_csv(const std::filesystem::path& path, int median_neighbors) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "uA,vA,uB,vB") throw DataError(path.string() + ": expected header uA,vA,uB,vB");
    CorrespondenceSet set;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        double v[4];
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(ls, cell, ',')) throw DataError(path.string() + ": short row " + std::to_string(row));
            char* end = nullptr;
            v[i] = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || !std::isfinite(v[i])) {
                throw DataError(path.string() + ": bad number on row " + std::to_string(row));
            }
        }
        if (std::getline(ls, cell, ',')) throw DataError(path.string() + ": extra column on row " + std::to_string(row));
        Correspondence c;
        c.p = {v[0], v[1]};
        c.q = {v[2], v[3]};
        set.pairs.push_back(c);
    }
    compute_flow_diagnostics(set, median_neighbors);
    if (set.pairs.size() < kMinPairs) {
        set.insufficient = true;
        set.note = "only " + std::to_string(set.pairs.size()) + " correspondences, need " +
                   std::to_string(kMinPairs);
    }
    return set;
}

void save_correspondences_csv(const CorrespondenceSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "uA,vA,uB,vB\n";
    char buf[160];
    for (const auto& c : set.pairs) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", c.p.x(), c.p.y(), c.q.x(), c.q.y());
        out << buf;
    }
}

FilterThresholds FilterThresholds::none() {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, inf, inf, inf};
}

json FilterThresholds::to_json() const {
    auto v = [](double x) { return is_inf(x) ? json(nullptr) : json(x); };
    return {{"descriptor", v(descriptor)},
            {"flow_px", v(flow_px)},
            {"symmetric_px", v(symmetric_px)},
            {"smoothness_px", v(smoothness_px)}};
}

FilterThresholds FilterThresholds::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("filter thresholds must be a JSON object");
    FilterThresholds t;
    const std::map<std::string, double*> fields{{"descriptor", &t.descriptor},
                                                {"flow_px", &t.flow_px},
                                                {"symmetric_px", &t.symmetric_px},
                                                {"smoothness_px", &t.smoothness_px}};
    for (const auto& [key, value] : j.items()) {
        const auto it = fields.find(key);
        if (it == fields.end()) throw ConfigError("unknown key '" + key + "' in filter thresholds");
        if (value.is_null()) {
            *it->second = std::numeric_limits<double>::infinity();
        } else if (value.is_number()) {
            *it->second = value.get<double>();
        } else {
            throw ConfigError("filter threshold '" + key + "' must be a number or null");
        }
        if (!(*it->second >= 0.0)) throw ConfigError("filter threshold '" + key + "' must be >= 0");
    }
    return t;
}

CorrespondenceSet filter_correspondences(const CorrespondenceSet& set, const FilterThresholds& t) {
    CorrespondenceSet out = set;
    for (auto& c : out.pairs) {
        if (c.reject_reason == "track_lost") continue;
        c.accepted = false;
        if (!(c.descriptor_dist <= t.descriptor)) {
            c.reject_reason = "descriptor";
        } else if (!(c.flow_len_px <= t.flow_px)) {
            c.reject_reason = "flow";
        } else if (!(c.sym_residual_px <= t.symmetric_px)) {
            c.reject_reason = "symmetric";
        } else if (!(c.median_dev_px <= t.smoothness_px)) {
            c.reject_reason = "smoothness";
        } else {
            c.accepted = true;
            c.reject_reason.clear();
        }
    }
    return out;
}

}  // namespace ssr::geom
