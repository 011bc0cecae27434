#include <cmath>
#include <numbers>
#include <random>

#include "internal.hpp"

namespace ssr::geom {

namespace {

// Orthonormal basis of the plane.
std::pair<Vec3, Vec3> plane_basis(const Vec3& n) {
    const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 e1 = n.cross(helper).normalized();
    return {e1, n.cross(e1)};
}

}  // namespace

SyntheticScene SyntheticScene::standard(std::uint64_t seed) {
    SyntheticScene s;
    s.rig = ProbeRig::fan(9, 9, 2.5);
    const double tilt = 20.0 * std::numbers::pi / 180.0;
    s.plane_normal = Vec3(0.0, -std::sin(tilt), std::cos(tilt));
    s.plane_d = 30.0;
    s.fold_deg = 30.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 12; ++i) {
        const double wavelength_mm = 1.5 + 3.5 * unit(rng);
        const double dir = 2.0 * std::numbers::pi * unit(rng);
        const double k = 2.0 * std::numbers::pi / wavelength_mm;
        s.waves.push_back({0.5 + unit(rng), k * std::cos(dir), k * std::sin(dir),
                           2.0 * std::numbers::pi * unit(rng)});
    }
    return s;
}

std::optional<Vec3> SyntheticScene::intersect(const Vec3& origin, const Vec3& dir) const {
    auto hit = [&](const Vec3& n, double d) -> std::optional<Vec3> {
        const double den = n.dot(dir);
        if (std::abs(den) < 1e-12) return std::nullopt;
        const double s = (d - n.dot(origin)) / den;
        if (!(s > 0.0)) return std::nullopt;
        return origin + s * dir;
    };
    auto first = hit(plane_normal, plane_d);
    if (fold_deg == 0.0) return first;
    if (first && first->x() > fold_x) first.reset();
    // Crease line: x = fold_x on the first plane.
    const Vec3 axis = plane_normal.cross(Vec3::UnitX()).normalized();
    const Vec3 n2 = Eigen::AngleAxisd(fold_deg * std::numbers::pi / 180.0, axis) * plane_normal;
    const Vec3 on_line(fold_x, 0.0, (plane_d - plane_normal.x() * fold_x) / plane_normal.z());
    auto second = hit(n2, n2.dot(on_line));
    if (second && second->x() < fold_x) second.reset();
    if (first && second) {
        return (*first - origin).squaredNorm() <= (*second - origin).squaredNorm() ? first : second;
    }
    return first ? first : second;
}

double SyntheticScene::texture(const Vec3& X) const {
    const auto [e1, e2] = plane_basis(plane_normal);
    const double a = X.dot(e1), b = X.dot(e2);
    double acc = 0.0, total = 0.0;
    for (const auto& w : waves) {
        acc += w[0] * std::sin(w[1] * a + w[2] * b + w[3]);
        total += w[0];
    }
    return total > 0.0 ? 0.5 + 0.5 * acc / total : 0.5;
}

GrayImage SyntheticScene::render(const Mat3& R, const Vec3& t) const {
    GrayImage img(cam.width, cam.height);
    const Vec3 origin = -R.transpose() * t;
    for (std::size_t y = 0; y < cam.height; ++y)
        for (std::size_t x = 0; x < cam.width; ++x) {
            const Vec3 d = R.transpose() * cam.normalize({static_cast<double>(x), static_cast<double>(y)});
            const auto hit = intersect(origin, d);
            img.at(y, x) = hit ? static_cast<float>(texture(*hit)) : 0.0f;
        }
    return img;
}

data::SpotSet SyntheticScene::spots(const Mat3& R, const Vec3& t) const {
    std::vector<data::Spot> out;
    const Vec3 origin = R.transpose() * (rig.origin() - t);
    for (const auto& [id, ray] : rig.rays) {
        const auto hit = intersect(origin, R.transpose() * ray);
        if (!hit) continue;
        const Vec3 Xc = R * *hit + t;
        if (Xc.z() <= 0.0) continue;
        const Vec2 px = cam.project(Xc);
        if (!cam.inside(px)) continue;
        out.push_back({id, px.x(), px.y(), 0.0});
    }
    return data::SpotSet(std::move(out), cam.width, cam.height);
}

SyntheticScene::Pairs SyntheticScene::correspondences(const Mat3& R, const Vec3& t, std::size_t n,
                                                      std::uint64_t seed, double noise_px) const {
    Pairs out;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(20.0, static_cast<double>(cam.width) - 21.0);
    std::uniform_real_distribution<double> uy(20.0, static_cast<double>(cam.height) - 21.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::size_t attempts = 0;
    while (out.truth.size() < n) {
        if (++attempts > 100 * n + 1000) throw DataError("synthetic scene cannot produce enough pairs");
        const Vec2 p(ux(rng), uy(rng));
        const auto hit = intersect(Vec3::Zero(), cam.normalize(p));
        if (!hit) continue;
        const Vec3 Xb = R * *hit + t;
        if (Xb.z() <= 0.0) continue;
        const Vec2 q = cam.project(Xb);
        if (!cam.inside(q)) continue;
        Correspondence c;
        c.p = p;
        c.q = q;
        if (noise_px > 0.0) {
            c.p += noise_px * Vec2(noise(rng), noise(rng));
            c.q += noise_px * Vec2(noise(rng), noise(rng));
        }
        out.set.pairs.push_back(c);
        out.truth.push_back(*hit);
    }
    compute_flow_diagnostics(out.set);
    return out;
}

}  // namespace ssr::geom
