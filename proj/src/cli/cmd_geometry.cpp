#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>

#include "config_util.hpp"
#include "ssr/dataset.hpp"
#include "ssr/geometry.hpp"
#include "ssr/overlay.hpp"

namespace ssr::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::Section;

namespace {

geom::SlOptions parse_sl(const json& j, json& resolved) {
    const Section s(j, "reconstruct.sl", {"max_skew_mm", "min_angle_deg", "min_depth_mm", "max_depth_mm"});
    geom::SlOptions o;
    o.max_skew_mm = s.get("max_skew_mm", o.max_skew_mm);
    o.min_angle_deg = s.get("min_angle_deg", o.min_angle_deg);
    o.min_depth_mm = s.get("min_depth_mm", o.min_depth_mm);
    o.max_depth_mm = s.get("max_depth_mm", o.max_depth_mm);
    if (!(o.max_skew_mm > 0.0) || !(o.min_angle_deg >= 0.0) || !(o.min_depth_mm < o.max_depth_mm)) {
        throw ConfigError("reconstruct.sl: need max_skew_mm > 0, min_angle_deg >= 0, min_depth_mm < max_depth_mm");
    }
    resolved = {{"max_skew_mm", o.max_skew_mm}, {"min_angle_deg", o.min_angle_deg},
                {"min_depth_mm", o.min_depth_mm}, {"max_depth_mm", o.max_depth_mm}};
    return o;
}

geom::CornerOptions parse_corners(const json& j, json& resolved) {
    const Section s(j, "reconstruct.corners",
                    {"max_corners", "quality", "min_distance_px", "block_radius", "patch_radius", "border_px"});
    geom::CornerOptions o;
    o.max_corners = s.get("max_corners", o.max_corners);
    o.quality = s.get("quality", o.quality);
    o.min_distance_px = s.get("min_distance_px", o.min_distance_px);
    o.block_radius = s.get("block_radius", o.block_radius);
    o.patch_radius = s.get("patch_radius", o.patch_radius);
    o.border_px = s.get("border_px", o.border_px);
    if (o.max_corners < 1 || !(o.quality > 0.0) || o.min_distance_px < 0 || o.block_radius < 1 ||
        o.patch_radius < 1 || o.border_px < 0) {
        throw ConfigError("reconstruct.corners has an out-of-range value");
    }
    resolved = {{"max_corners", o.max_corners},   {"quality", o.quality},
                {"min_distance_px", o.min_distance_px}, {"block_radius", o.block_radius},
                {"patch_radius", o.patch_radius}, {"border_px", o.border_px}};
    return o;
}

geom::TrackOptions parse_tracking(const json& j, json& resolved) {
    const Section s(j, "reconstruct.tracking",
                    {"levels", "window_radius", "max_iterations", "epsilon_px", "median_neighbors", "patch_radius"});
    geom::TrackOptions o;
    o.levels = s.get("levels", o.levels);
    o.window_radius = s.get("window_radius", o.window_radius);
    o.max_iterations = s.get("max_iterations", o.max_iterations);
    o.epsilon_px = s.get("epsilon_px", o.epsilon_px);
    o.median_neighbors = s.get("median_neighbors", o.median_neighbors);
    o.patch_radius = s.get("patch_radius", o.patch_radius);
    if (o.levels < 1 || o.window_radius < 1 || o.max_iterations < 1 || !(o.epsilon_px > 0.0) ||
        o.median_neighbors < 1 || o.patch_radius < 1) {
        throw ConfigError("reconstruct.tracking has an out-of-range value");
    }
    resolved = {{"levels", o.levels},           {"window_radius", o.window_radius},
                {"max_iterations", o.max_iterations}, {"epsilon_px", o.epsilon_px},
                {"median_neighbors", o.median_neighbors}, {"patch_radius", o.patch_radius}};
    return o;
}

geom::Mat3 rotation_from_degrees(const std::vector<double>& rv) {
    if (rv.size() != 3) throw ConfigError("rotation_deg needs 3 components");
    const geom::Vec3 w(rv[0], rv[1], rv[2]);
    const double a = w.norm();
    if (a == 0.0) return geom::Mat3::Identity();
    return geom::Mat3(Eigen::AngleAxisd(a * std::numbers::pi / 180.0, w / a));
}

geom::Vec3 vec3(const std::vector<double>& v, const std::string& what) {
    if (v.size() != 3) throw ConfigError(what + " needs 3 components");
    return {v[0], v[1], v[2]};
}

json count_json(const geom::CorrespondenceSet& set) {
    return {{"total", set.pairs.size()}, {"accepted", set.accepted_count()}};
}

}  // namespace

int cmd_scene(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "scene",
                      {"schema_version", "out_dir", "seed", "rotation_deg", "translation_mm",
                       "sl_shift_mm", "fold_deg", "pairs", "noise_px"});
    detail::schema_version(top);
    const auto out_dir = top.require<std::string>("out_dir");
    const auto seed = top.get<std::uint64_t>("seed", 1);
    const auto rot = top.get<std::vector<double>>("rotation_deg", {0.0, -2.0, 0.0});
    const auto trans = top.get<std::vector<double>>("translation_mm", {2.0, 0.2, 0.3});
    const double shift = top.get("sl_shift_mm", 0.4);
    const double fold = top.get("fold_deg", 30.0);
    const auto pairs = top.get<long long>("pairs", 0);
    const double noise = top.get("noise_px", 0.0);
    if (pairs < 0) throw ConfigError("scene.pairs must be >= 0");
    if (!(noise >= 0.0)) throw ConfigError("scene.noise_px must be >= 0");
    const geom::Mat3 R = rotation_from_degrees(rot);
    const geom::Vec3 t = vec3(trans, "scene.translation_mm");
    if (!(t.norm() > 0.0)) throw ConfigError("scene.translation_mm must be nonzero");
    detail::log_resolved(log, "scene",
                         {{"schema_version", 1}, {"out_dir", out_dir}, {"seed", seed},
                          {"rotation_deg", rot}, {"translation_mm", trans}, {"sl_shift_mm", shift},
                          {"fold_deg", fold}, {"pairs", pairs}, {"noise_px", noise}});

    auto scene = geom::SyntheticScene::standard(seed);
    scene.fold_deg = fold;
    const fs::path dir = detail::resolve(cfg, out_dir);
    fs::create_directories(dir);
    detail::write_json(dir / "camera.json", scene.cam.to_json());
    detail::write_json(dir / "rig.json", scene.rig.to_json());
    const geom::Vec3 delta(shift, 0.0, 0.0);
    data::save_spots_csv(scene.spots(geom::Mat3::Identity(), delta), dir / "spots_a.csv");
    data::save_spots_csv(scene.spots(geom::Mat3::Identity(), -delta), dir / "spots_b.csv");

    json recon = {{"schema_version", 1},
                  {"camera", "camera.json"},
                  {"rig", "rig.json"},
                  {"spots_a", "spots_a.csv"},
                  {"spots_b", "spots_b.csv"},
                  {"out_ply", "reconstruction.ply"},
                  {"out_metrics", "metrics.json"}};
    if (pairs > 0) {
        auto p = scene.correspondences(R, t, static_cast<std::size_t>(pairs), seed, noise);
        geom::save_correspondences_csv(p.set, dir / "correspondences.csv");
        geom::PointCloud truth;
        truth.scale_status = geom::ScaleStatus::metric;
        for (std::size_t i = 0; i < p.truth.size(); ++i) {
            truth.push(p.truth[i], geom::PointSource::sfm, static_cast<int>(i));
        }
        geom::save_ply(truth, dir / "truth.ply");
        recon["correspondences"] = "correspondences.csv";
    } else {
        data::save_map(geom::to_map(scene.render(geom::Mat3::Identity(), geom::Vec3::Zero())),
                       dir / "frame_a.json");
        data::save_map(geom::to_map(scene.render(R, t)), dir / "frame_b.json");
        recon["frames"] = {{"a", "frame_a.json"}, {"b", "frame_b.json"}};
    }
    detail::write_json(dir / "reconstruct.json", recon);
    json motion = {{"rotation_deg", rot}, {"translation_mm", trans}, {"sl_shift_mm", shift}};
    detail::write_json(dir / "motion.json", motion);
    log << "[ssr scene] wrote " << (dir / "reconstruct.json").string() << '\n';
    return kExitOk;
}

int cmd_reconstruct(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "reconstruct",
                      {"schema_version", "camera", "rig", "spots_a", "spots_b", "frames",
                       "correspondences", "sl", "corners", "tracking", "filter", "ransac", "scale",
                       "triangulation", "out_ply", "out_metrics", "out_correspondences"});
    detail::schema_version(top);
    const auto cam = geom::PinholeCamera::from_json(detail::inline_or_file(cfg, top.raw("camera"), "reconstruct.camera"));
    cam.validate();
    const auto rig = geom::ProbeRig::from_json(detail::inline_or_file(cfg, top.raw("rig"), "reconstruct.rig"));
    rig.validate();
    const auto spots_a_name = top.require<std::string>("spots_a");
    const auto spots_b_name = top.require<std::string>("spots_b");
    const auto out_ply = top.require<std::string>("out_ply");
    const auto out_metrics = top.require<std::string>("out_metrics");
    if (top.has("frames") && top.has("correspondences")) {
        throw ConfigError("reconstruct: give either frames or correspondences, not both");
    }
    geom::ReconstructionOptions opt;
    json sl_r, corners_r, tracking_r;
    opt.sl = parse_sl(top.object("sl"), sl_r);
    const auto corners = parse_corners(top.object("corners"), corners_r);
    const auto tracking = parse_tracking(top.object("tracking"), tracking_r);
    opt.filter = geom::FilterThresholds::from_json(top.object("filter"));
    opt.ransac = geom::RansacConfig::from_json(top.object("ransac"));
    opt.scale = geom::ScaleOptions::from_json(top.object("scale"));
    const auto method = top.get<std::string>("triangulation", "midpoint");
    if (method == "midpoint") {
        opt.method = geom::TriangulationMethod::midpoint;
    } else if (method == "linear") {
        opt.method = geom::TriangulationMethod::linear;
    } else {
        throw ConfigError("reconstruct.triangulation must be 'midpoint' or 'linear'");
    }
    json resolved = {{"schema_version", 1},
                     {"camera", cam.to_json()},
                     {"rig", rig.to_json()},
                     {"spots_a", spots_a_name},
                     {"spots_b", spots_b_name},
                     {"frames", top.has("frames") ? top.raw("frames") : json(nullptr)},
                     {"correspondences", top.get<std::string>("correspondences", "")},
                     {"sl", sl_r},
                     {"corners", corners_r},
                     {"tracking", tracking_r},
                     {"filter", opt.filter.to_json()},
                     {"ransac", opt.ransac.to_json()},
                     {"scale", opt.scale.to_json()},
                     {"triangulation", method},
                     {"out_ply", out_ply},
                     {"out_metrics", out_metrics},
                     {"out_correspondences", top.get<std::string>("out_correspondences", "")}};
    detail::log_resolved(log, "reconstruct", resolved);

    const auto spots_a = data::load_spots_csv(detail::resolve(cfg, spots_a_name), cam.width, cam.height);
    const auto spots_b = data::load_spots_csv(detail::resolve(cfg, spots_b_name), cam.width, cam.height);
    std::optional<geom::CorrespondenceSet> pairs;
    if (top.has("frames")) {
        const Section fr(top.raw("frames"), "reconstruct.frames", {"a", "b"});
        const auto a = data::load_map(detail::resolve(cfg, fr.require<std::string>("a")));
        const auto b = data::load_map(detail::resolve(cfg, fr.require<std::string>("b")));
        for (const auto* m : {&a, &b}) {
            if (m->width != cam.width || m->height != cam.height) {
                throw DataError("frame size " + std::to_string(m->width) + "x" + std::to_string(m->height) +
                                " does not match the camera");
            }
        }
        pairs = geom::track_features(geom::to_gray(a), geom::to_gray(b), geom::corner_detector(corners), tracking);
        if (top.has("out_correspondences")) {
            const auto p = detail::resolve(cfg, top.require<std::string>("out_correspondences"));
            detail::prepare_output(p);
            geom::save_correspondences_csv(*pairs, p);
        }
    } else if (top.has("correspondences")) {
        pairs = geom::load_correspondences_csv(
            detail::resolve(cfg, top.require<std::string>("correspondences")), tracking.median_neighbors);
    }

    const auto metrics_path = detail::resolve(cfg, out_metrics);
    geom::ReconstructionResult r;
    try {
        r = geom::reconstruct_scene(cam, rig, spots_a, spots_b, pairs, opt);
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        if (code != kExitData && code != kExitNumerical) throw;
        json failure = {{"status", "failed"},
                        {"error", code == kExitData ? "data" : "numerical"},
                        {"message", e.what()}};
        if (pairs) {
            auto filtered = geom::filter_correspondences(*pairs, opt.filter);
            failure["correspondences"] = count_json(filtered);
            failure["insufficient"] = pairs->insufficient || filtered.accepted_count() < geom::kMinPairs;
            if (!pairs->note.empty()) failure["note"] = pairs->note;
        }
        detail::write_json(metrics_path, failure);
        log << "[ssr reconstruct] failed: " << e.what() << '\n';
        return code;
    }
    const auto ply_path = detail::resolve(cfg, out_ply);
    detail::prepare_output(ply_path);
    geom::save_ply(r.fused, ply_path);
    json metrics = r.metrics();
    metrics["status"] = "ok";
    metrics["mode"] = r.sl_only ? "sl_only" : "fused";
    metrics["scale_status"] = geom::to_string(r.fused.scale_status);
    detail::write_json(metrics_path, metrics);
    log << "[ssr reconstruct] " << r.fused.size() << " points ("
        << (r.sl_only ? "structured light only" : "scale " + std::to_string(r.scale.scale)) << ")\n";
    return kExitOk;
}

int cmd_overlay(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "overlay",
                      {"schema_version", "kind", "msi", "cloud", "camera", "bands_nm",
                       "extinction_csv", "i0", "min_blood_absorbance", "out_ply", "out_map",
                       "out_residual_map", "out_stack", "out_summary"});
    detail::schema_version(top);
    const auto kind = top.require<std::string>("kind");
    if (kind != "nbi" && kind != "sao2") throw ConfigError("overlay.kind must be 'nbi' or 'sao2'");
    const auto msi_name = top.require<std::string>("msi");
    const auto cloud_name = top.require<std::string>("cloud");
    const auto out_ply = top.require<std::string>("out_ply");
    const auto cam = geom::PinholeCamera::from_json(detail::inline_or_file(cfg, top.raw("camera"), "overlay.camera"));
    cam.validate();
    json resolved = {{"schema_version", 1}, {"kind", kind},       {"msi", msi_name},
                     {"cloud", cloud_name}, {"camera", cam.to_json()}, {"out_ply", out_ply},
                     {"out_summary", top.get<std::string>("out_summary", "")}};
    auto reject = [&](std::initializer_list<const char*> keys) {
        for (const char* k : keys) {
            if (top.has(k)) throw ConfigError("overlay." + std::string(k) + " does not apply to kind '" + kind + "'");
        }
    };

    json summary = {{"kind", kind}};
    geom::PointCloud draped;
    if (kind == "nbi") {
        reject({"extinction_csv", "i0", "min_blood_absorbance", "out_map", "out_residual_map"});
        const auto bands = top.get("bands_nm", overlay::default_narrow_bands());
        resolved["bands_nm"] = bands;
        resolved["out_stack"] = top.get<std::string>("out_stack", "");
        detail::log_resolved(log, "overlay", resolved);
        const auto msi = data::load_stack(detail::resolve(cfg, msi_name));
        const auto cloud = geom::load_ply(detail::resolve(cfg, cloud_name));
        const auto nb = overlay::narrow_band(msi, bands);
        for (const auto& w : nb.warnings) log << "[ssr overlay] warning: " << w << '\n';
        draped = overlay::drape_colors(cloud, overlay::false_color(nb), cam);
        json choices = json::array();
        std::vector<std::size_t> distinct;
        for (const auto& c : nb.choices) {
            choices.push_back({{"requested_nm", c.requested_nm}, {"band", c.band}, {"band_nm", c.band_nm},
                               {"substituted", c.substituted}});
            if (std::find(distinct.begin(), distinct.end(), c.band) == distinct.end()) distinct.push_back(c.band);
        }
        summary["bands"] = choices;
        if (top.has("out_stack")) {
            std::sort(distinct.begin(), distinct.end());
            std::vector<double> wl;
            std::vector<float> values;
            for (auto b : distinct) {
                wl.push_back(msi.wavelengths_nm()[b]);
                const auto band = msi.band(b);
                values.insert(values.end(), band.begin(), band.end());
            }
            const auto p = detail::resolve(cfg, top.require<std::string>("out_stack"));
            detail::prepare_output(p);
            data::save_stack(data::SpectralStack(msi.width(), msi.height(), wl, std::move(values)), p);
        }
    } else {
        reject({"bands_nm", "out_stack"});
        if (!top.has("extinction_csv")) throw ConfigError("sao2 overlay requires overlay.extinction_csv");
        if (!top.has("i0")) throw ConfigError("sao2 overlay requires overlay.i0 (flat-field intensity)");
        overlay::SaturationOptions so;
        const json& i0 = top.raw("i0");
        if (i0.is_number()) {
            so.i0 = {i0.get<double>()};
        } else if (i0.is_array()) {
            so.i0 = top.get<std::vector<double>>("i0", {});
        } else {
            throw ConfigError("overlay.i0 must be a number or an array of numbers");
        }
        so.min_blood_absorbance = top.get("min_blood_absorbance", so.min_blood_absorbance);
        const auto ext_name = top.require<std::string>("extinction_csv");
        resolved["extinction_csv"] = ext_name;
        resolved["i0"] = so.i0;
        resolved["min_blood_absorbance"] = so.min_blood_absorbance;
        resolved["out_map"] = top.get<std::string>("out_map", "");
        resolved["out_residual_map"] = top.get<std::string>("out_residual_map", "");
        detail::log_resolved(log, "overlay", resolved);
        const auto table = overlay::load_extinction_csv(detail::resolve(cfg, ext_name));
        const auto msi = data::load_stack(detail::resolve(cfg, msi_name));
        const auto cloud = geom::load_ply(detail::resolve(cfg, cloud_name));
        const auto sat = overlay::oxygen_saturation(msi, table, so);
        draped = overlay::drape_overlay(cloud, sat.sao2, cam);
        auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
        summary["defined_pixels"] = sat.defined_count;
        summary["pixels"] = msi.pixels();
        summary["mean"] = num(sat.mean);
        summary["min"] = num(sat.min);
        summary["max"] = num(sat.max);
        for (const auto& [key, map] : {std::pair{"out_map", &sat.sao2}, std::pair{"out_residual_map", &sat.residual}}) {
            if (!top.has(key)) continue;
            const auto p = detail::resolve(cfg, top.require<std::string>(key));
            detail::prepare_output(p);
            data::save_map(*map, p);
        }
    }
    std::size_t with_data = 0;
    for (double v : draped.values) with_data += std::isfinite(v);
    summary["points"] = draped.size();
    summary["points_with_data"] = with_data;
    const auto ply_path = detail::resolve(cfg, out_ply);
    detail::prepare_output(ply_path);
    geom::save_ply(draped, ply_path);
    if (top.has("out_summary")) {
        detail::write_json(detail::resolve(cfg, top.require<std::string>("out_summary")), summary);
    }
    log << "[ssr overlay] " << kind << ": " << with_data << " of " << draped.size() << " points carry data\n";
    return kExitOk;
}

}  // namespace ssr::cli
