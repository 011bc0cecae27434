#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "internal.hpp"

namespace ssr::geom {

using nlohmann::json;
using detail::closest_points;
using detail::read_field;
using detail::reject_unknown;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

// ---- camera -----------------------------------------------------------------------

void PinholeCamera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
        throw ConfigError("camera focal lengths must be positive");
    }
    if (width == 0 || height == 0) throw ConfigError("camera image size must be positive");
    if (!(cx >= 0.0 && cx <= static_cast<double>(width - 1) && cy >= 0.0 &&
          cy <= static_cast<double>(height - 1))) {
        throw ConfigError("principal point must lie inside the image");
    }
}

Vec3 PinholeCamera::normalize(const Vec2& px) const {
    return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
}

Vec2 PinholeCamera::project(const Vec3& X) const {
    return {fx * X.x() / X.z() + cx, fy * X.y() / X.z() + cy};
}

bool PinholeCamera::inside(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= static_cast<double>(width - 1) &&
           px.y() <= static_cast<double>(height - 1);
}

json PinholeCamera::to_json() const {
    return {{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}, {"width", width}, {"height", height}};
}

PinholeCamera PinholeCamera::from_json(const json& j) {
    reject_unknown(j, {"fx", "fy", "cx", "cy", "width", "height"}, "camera");
    PinholeCamera c;
    read_field(j, "fx", c.fx, "camera");
    read_field(j, "fy", c.fy, "camera");
    read_field(j, "cx", c.cx, "camera");
    read_field(j, "cy", c.cy, "camera");
    read_field(j, "width", c.width, "camera");
    read_field(j, "height", c.height, "camera");
    c.validate();
    return c;
}

// ---- probe rig ----------------------------------------------------------------------

Vec3 ProbeRig::axis() const {
    const double a = angle_deg * kDeg;
    return {-std::sin(a), 0.0, std::cos(a)};
}

void ProbeRig::validate() const {
    if (!(baseline_mm > 0.0) || !std::isfinite(baseline_mm)) {
        throw ConfigError("probe baseline must be positive");
    }
    if (!std::isfinite(angle_deg)) throw ConfigError("probe angle must be finite");
    for (const auto& [id, r] : rays) {
        if (!r.allFinite() || std::abs(r.norm() - 1.0) > 1e-9) {
            throw ConfigError("probe ray " + std::to_string(id) + " is not a unit vector");
        }
    }
}

ProbeRig ProbeRig::fan(int rows, int cols, double pitch_deg, double baseline_mm,
                       double angle_deg) {
    if (rows <= 0 || cols <= 0) throw ConfigError("probe fan needs positive rows and cols");
    ProbeRig rig;
    rig.baseline_mm = baseline_mm;
    rig.angle_deg = angle_deg;
    const Vec3 z = rig.axis();
    const Vec3 y(0.0, 1.0, 0.0);
    const Vec3 x = y.cross(z).normalized();
    int id = 0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double ax = (c - 0.5 * (cols - 1)) * pitch_deg * kDeg;
            const double ay = (r - 0.5 * (rows - 1)) * pitch_deg * kDeg;
            rig.rays[id++] = (z + std::tan(ax) * x + std::tan(ay) * y).normalized();
        }
    }
    rig.validate();
    return rig;
}

json ProbeRig::to_json() const {
    json rays_j = json::array();
    for (const auto& [id, r] : rays) rays_j.push_back({{"id", id}, {"dir", {r.x(), r.y(), r.z()}}});
    return {{"baseline_mm", baseline_mm}, {"angle_deg", angle_deg}, {"rays", rays_j}};
}

ProbeRig ProbeRig::from_json(const json& j) {
    reject_unknown(j, {"baseline_mm", "angle_deg", "rays"}, "probe rig");
    ProbeRig rig;
    read_field(j, "baseline_mm", rig.baseline_mm, "probe rig");
    read_field(j, "angle_deg", rig.angle_deg, "probe rig");
    if (j.contains("rays")) {
        if (!j["rays"].is_array()) throw ConfigError("probe rig rays must be an array");
        for (const auto& r : j["rays"]) {
            reject_unknown(r, {"id", "dir"}, "probe ray");
            if (!r.contains("id") || !r.contains("dir") || !r["dir"].is_array() ||
                r["dir"].size() != 3) {
                throw ConfigError("probe ray needs id and a 3-vector dir");
            }
            Vec3 d(r["dir"][0].get<double>(), r["dir"][1].get<double>(), r["dir"][2].get<double>());
            if (!(d.norm() > 0.0)) throw ConfigError("probe ray direction is zero");
            if (!rig.rays.emplace(r["id"].get<int>(), d.normalized()).second) {
                throw ConfigError("duplicate probe ray id " + std::to_string(r["id"].get<int>()));
            }
        }
    }
    rig.validate();
    return rig;
}

// ---- point cloud ------------------------------------------------------------------

std::string to_string(ScaleStatus s) { return s == ScaleStatus::metric ? "metric" : "up_to_scale"; }
std::string to_string(PointSource s) { return s == PointSource::sl ? "sl" : "sfm"; }

void PointCloud::push(const Vec3& p, PointSource src, int id) {
    points.push_back(p);
    source.push_back(src);
    ids.push_back(id);
}

void PointCloud::validate() const {
    const std::size_t n = points.size();
    if (source.size() != n || ids.size() != n) throw DataError("point cloud attributes out of sync");
    if (!values.empty() && values.size() != n) throw DataError("point values out of sync");
    if (!colors.empty() && colors.size() != n) throw DataError("point colors out of sync");
    for (const auto& p : points) {
        if (!p.allFinite()) throw DataError("point cloud has non-finite coordinates");
    }
}

// ---- structured light ----------------------------------------------------------

SlResult triangulate_sl(const data::SpotSet& spots, const PinholeCamera& cam, const ProbeRig& rig,
                        const SlOptions& opt) {
    cam.validate();
    rig.validate();
    SlResult out;
    out.cloud.scale_status = ScaleStatus::metric;
    const Vec3 origin = rig.origin();
    const double min_cos = std::cos(opt.min_angle_deg * kDeg);
    for (const auto& spot : spots.spots()) {
        const auto it = rig.rays.find(spot.id);
        if (it == rig.rays.end()) {
            throw DataError("spot " + std::to_string(spot.id) + " has no calibrated probe ray");
        }
        const Vec3 cam_dir = cam.normalize({spot.u, spot.v}).normalized();
        const Vec3& probe_dir = it->second;
        if (std::abs(cam_dir.dot(probe_dir)) > min_cos) {
            out.dropped.push_back({spot.id, "parallel"});
            continue;
        }
        double s = 0.0, u = 0.0;
        if (!closest_points(Vec3::Zero(), cam_dir, origin, probe_dir, s, u)) {
            out.dropped.push_back({spot.id, "parallel"});
            continue;
        }
        if (s <= 0.0 || u <= 0.0) {
            out.dropped.push_back({spot.id, "behind"});
            continue;
        }
        const Vec3 a = s * cam_dir;
        const Vec3 b = origin + u * probe_dir;
        if ((a - b).norm() > opt.max_skew_mm) {
            out.dropped.push_back({spot.id, "skew"});
            continue;
        }
        const Vec3 m = 0.5 * (a + b);
        if (m.z() < opt.min_depth_mm || m.z() > opt.max_depth_mm) {
            out.dropped.push_back({spot.id, "depth"});
            continue;
        }
        out.cloud.push(m, PointSource::sl, spot.id);
    }
    return out;
}

// ---- PLY ------------------------------------------------------------------------------

void save_ply(const PointCloud& cloud, const std::filesystem::path& path) {
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    const bool has_values = !cloud.values.empty();
    const bool has_colors = !cloud.colors.empty();
    out << "ply\nformat ascii 1.0\n";
    out << "comment scale_status " << to_string(cloud.scale_status) << "\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "property uchar source\nproperty int id\n";
    if (has_values) out << "property double value\n";
    if (has_colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    char buf[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %d", p.x(), p.y(), p.z(),
                      cloud.source[i] == PointSource::sl ? 0 : 1, cloud.ids[i]);
        out << buf;
        if (has_values) {
            std::snprintf(buf, sizeof buf, " %.17g", cloud.values[i]);
            out << buf;
        }
        if (has_colors) {
            const auto& c = cloud.colors[i];
            out << ' ' << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]);
        }
        out << '\n';
    }
    if (!out) throw DataError("failed writing " + path.string());
}

PointCloud load_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw DataError(path.string() + " is not a PLY file");
    std::vector<std::string> props;
    std::size_t n = 0;
    bool ascii = false;
    PointCloud cloud;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (word == "comment") {
            std::string key, value;
            ls >> key >> value;
            if (key == "scale_status") {
                cloud.scale_status =
                    value == "metric" ? ScaleStatus::metric : ScaleStatus::up_to_scale;
            }
        } else if (word == "element") {
            std::string name;
            ls >> name >> n;
            if (name != "vertex") throw DataError("unsupported PLY element '" + name + "'");
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        }
    }
    if (!ascii) throw DataError("only ASCII PLY is supported");
    auto find = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < props.size(); ++i)
            if (props[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    if (ix < 0 || iy < 0 || iz < 0) throw DataError("PLY vertex lacks x, y or z");
    const int isrc = find("source"), iid = find("id"), ival = find("value");
    const int ir = find("red"), ig = find("green"), ib = find("blue");
    const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!std::getline(in, line)) throw DataError("PLY ended after " + std::to_string(k) + " vertices");
        std::istringstream ls(line);
        std::vector<double> f;
        std::string tok;
        while (ls >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str()) throw DataError("bad PLY number '" + tok + "'");
            f.push_back(v);
        }
        if (f.size() != props.size()) throw DataError("PLY vertex " + std::to_string(k) + " has wrong arity");
        cloud.push({f[ix], f[iy], f[iz]},
                   isrc >= 0 && f[isrc] == 0.0 ? PointSource::sl : PointSource::sfm,
                   iid >= 0 ? static_cast<int>(f[iid]) : static_cast<int>(k));
        if (ival >= 0) cloud.values.push_back(f[ival]);
        if (colors) {
            cloud.colors.push_back({static_cast<std::uint8_t>(f[ir]), static_cast<std::uint8_t>(f[ig]),
                                    static_cast<std::uint8_t>(f[ib])});
        }
    }
    cloud.validate();
    return cloud;
}

}  // namespace ssr::geom
