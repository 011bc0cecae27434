#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "internal.hpp"

namespace ssr::geom {

using nlohmann::json;

json ScaleOptions::to_json() const {
    return {{"gate_radius_mm", gate_radius_mm},
            {"mode", mode == ScaleMode::point_to_plane ? "point_to_plane" : "point_to_point"},
            {"plane_neighbors", plane_neighbors},
            {"max_iterations", max_iterations}};
}

ScaleOptions ScaleOptions::from_json(const json& j) {
    detail::reject_unknown(j, {"gate_radius_mm", "mode", "plane_neighbors", "max_iterations"},
                           "scale");
    ScaleOptions o;
    detail::read_field(j, "gate_radius_mm", o.gate_radius_mm, "scale");
    detail::read_field(j, "plane_neighbors", o.plane_neighbors, "scale");
    detail::read_field(j, "max_iterations", o.max_iterations, "scale");
    if (j.contains("mode")) {
        const auto m = j["mode"].is_string() ? j["mode"].get<std::string>() : std::string();
        if (m == "point_to_plane") {
            o.mode = ScaleMode::point_to_plane;
        } else if (m == "point_to_point") {
            o.mode = ScaleMode::point_to_point;
        } else {
            throw ConfigError("scale.mode must be 'point_to_plane' or 'point_to_point'");
        }
    }
    if (!(o.gate_radius_mm > 0.0)) throw ConfigError("scale.gate_radius_mm must be > 0");
    if (o.plane_neighbors < 3) throw ConfigError("scale.plane_neighbors must be >= 3");
    if (o.max_iterations < 1) throw ConfigError("scale.max_iterations must be >= 1");
    return o;
}

PointCloud average_sl(const PointCloud& a, const PointCloud& b) {
    a.validate();
    b.validate();
    if (a.scale_status != ScaleStatus::metric || b.scale_status != ScaleStatus::metric) {
        throw DataError("structured-light clouds must be metric");
    }
    std::map<int, Vec3> by_id;
    for (std::size_t i = 0; i < b.size(); ++i) by_id.emplace(b.ids[i], b.points[i]);
    PointCloud out;
    out.scale_status = ScaleStatus::metric;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto it = by_id.find(a.ids[i]);
        if (it == by_id.end()) continue;
        out.push(0.5 * (a.points[i] + it->second), PointSource::sl, a.ids[i]);
    }
    return out;
}

namespace {

double median(std::vector<double> v) {
    const std::size_t h = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(h), v.end());
    const double hi = v[h];
    if (v.size() % 2) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<long>(h)));
}

// Unit normal of the least-squares plane through each point's neighbourhood.
std::vector<Vec3> local_normals(const std::vector<Vec3>& pts, int k) {
    std::vector<Vec3> normals(pts.size(), Vec3::UnitZ());
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        d.clear();
        for (std::size_t j = 0; j < pts.size(); ++j) d.push_back({(pts[j] - pts[i]).squaredNorm(), j});
        const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(k) + 1, d.size());
        std::partial_sort(d.begin(), d.begin() + static_cast<long>(m), d.end());
        Vec3 c = Vec3::Zero();
        for (std::size_t t = 0; t < m; ++t) c += pts[d[t].second];
        c /= static_cast<double>(m);
        Mat3 cov = Mat3::Zero();
        for (std::size_t t = 0; t < m; ++t) {
            const Vec3 r = pts[d[t].second] - c;
            cov += r * r.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        Vec3 n = es.eigenvectors().col(0);
        if (n.dot(pts[i]) > 0.0) n = -n;  // face the camera
        normals[i] = n;
    }
    return normals;
}

}  // namespace

ScaleResult register_scale(const PointCloud& sfm, const PointCloud& sl_a, const PointCloud& sl_b,
                           const ScaleOptions& opt) {
    sfm.validate();
    ScaleResult r;
    r.reference = average_sl(sl_a, sl_b);
    const auto& ref = r.reference.points;
    if (ref.empty()) throw DataError("no spot is shared by the two structured-light clouds");
    if (sfm.size() == 0) throw DataError("SfM cloud is empty");

    std::vector<double> zr, zs;
    for (const auto& p : ref) zr.push_back(p.z());
    for (const auto& p : sfm.points) zs.push_back(p.z());
    const double mz = median(zs);
    if (!(mz > 0.0)) throw NumericalError("SfM cloud does not lie in front of the camera");
    double s = median(zr) / mz;
    if (!(s > 0.0) || !std::isfinite(s)) throw NumericalError("initial scale is not positive");

    const bool planar = opt.mode == ScaleMode::point_to_plane && ref.size() >= 3;
    const auto normals = planar ? local_normals(ref, opt.plane_neighbors) : std::vector<Vec3>{};
    const double gate2 = opt.gate_radius_mm * opt.gate_radius_mm;
    std::vector<long> match(sfm.size(), -1), prev;
    for (int it = 0; it < opt.max_iterations; ++it) {
        r.iterations = it + 1;
        prev = match;
        double num = 0.0, den = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < sfm.size(); ++i) {
            const Vec3 x = s * sfm.points[i];
            double best = std::numeric_limits<double>::infinity();
            long arg = -1;
            for (std::size_t j = 0; j < ref.size(); ++j) {
                const double d2 = (ref[j] - x).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    arg = static_cast<long>(j);
                }
            }
            match[i] = best <= gate2 ? arg : -1;
            if (match[i] < 0) continue;
            const Vec3& p = sfm.points[i];
            const Vec3& q = ref[static_cast<std::size_t>(match[i])];
            if (planar) {
                const Vec3& n = normals[static_cast<std::size_t>(match[i])];
                num += n.dot(q) * n.dot(p);
                den += n.dot(p) * n.dot(p);
            } else {
                num += p.dot(q);
                den += p.dot(p);
            }
            ++pairs;
        }
        if (pairs == 0) throw NumericalError("no SfM point lies within the gating radius of the SL reference");
        if (!(den > 0.0)) throw NumericalError("scale registration is degenerate");
        const double next = num / den;
        if (!(next > 0.0) || !std::isfinite(next)) {
            throw NumericalError("registered scale is not positive");
        }
        r.pairs = pairs;
        const bool settled = match == prev && std::abs(next - s) <= 1e-14 * s;
        s = next;
        if (settled) break;
    }
    r.scale = s;
    r.metric = sfm;
    for (auto& p : r.metric.points) p *= s;
    r.metric.scale_status = ScaleStatus::metric;
    return r;
}

}  // namespace ssr::geom
