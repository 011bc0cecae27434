#include <algorithm>
#include <cmath>
#include <map>

#include "internal.hpp"

namespace ssr::geom {

using nlohmann::json;

namespace {

json mat_json(const Mat3& m) {
    json rows = json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
}

json dropped_json(const std::vector<Dropped>& d) {
    json a = json::array();
    for (const auto& x : d) a.push_back({{"id", x.id}, {"reason", x.reason}});
    return a;
}

}  // namespace

json ReconstructionResult::metrics() const {
    json j;
    j["sl_points_a"] = sl_a.size();
    j["sl_points_b"] = sl_b.size();
    j["sl_dropped"] = dropped_json(sl_dropped);
    j["sl_only"] = sl_only;
    j["fused_points"] = fused.size();
    if (sl_only) return j;
    std::map<std::string, std::size_t> reasons;
    for (const auto& c : filtered.pairs) {
        if (!c.accepted) ++reasons[c.reject_reason];
    }
    j["correspondences"] = {{"total", filtered.pairs.size()},
                            {"accepted", filtered.accepted_count()},
                            {"rejected_by", reasons}};
    j["essential"] = {{"E", mat_json(essential.E)}, {"inliers", essential.inlier_count}};
    j["pose"] = {{"R", mat_json(pose.R)},
                 {"t", {pose.t.x(), pose.t.y(), pose.t.z()}},
                 {"candidate_support", pose.candidate_support}};
    double max_reproj = 0.0, mean_reproj = 0.0;
    for (double e : two_view.reprojection_px) {
        max_reproj = std::max(max_reproj, e);
        mean_reproj += e;
    }
    if (!two_view.reprojection_px.empty()) {
        mean_reproj /= static_cast<double>(two_view.reprojection_px.size());
    }
    j["triangulation"] = {{"points", two_view.cloud.size()},
                          {"dropped", two_view.dropped.size()},
                          {"mean_reprojection_px", mean_reproj},
                          {"max_reprojection_px", max_reproj}};
    j["scale"] = {{"s", scale.scale}, {"pairs", scale.pairs}, {"iterations", scale.iterations}};
    return j;
}

ReconstructionResult reconstruct_scene(const PinholeCamera& cam, const ProbeRig& rig,
                                       const data::SpotSet& spots_a, const data::SpotSet& spots_b,
                                       const std::optional<CorrespondenceSet>& pairs,
                                       const ReconstructionOptions& opt) {
    ReconstructionResult r;
    auto a = triangulate_sl(spots_a, cam, rig, opt.sl);
    auto b = triangulate_sl(spots_b, cam, rig, opt.sl);
    r.sl_a = std::move(a.cloud);
    r.sl_b = std::move(b.cloud);
    r.sl_dropped = std::move(a.dropped);
    r.sl_dropped.insert(r.sl_dropped.end(), b.dropped.begin(), b.dropped.end());
    if (!pairs) {
        r.sl_only = true;
        r.fused = average_sl(r.sl_a, r.sl_b);
        return r;
    }
    r.filtered = filter_correspondences(*pairs, opt.filter);
    if (pairs->insufficient || r.filtered.accepted_count() < kMinPairs) {
        throw DataError("insufficient correspondences: " + std::to_string(r.filtered.accepted_count()) +
                        " accepted of " + std::to_string(pairs->pairs.size()) +
                        (pairs->note.empty() ? "" : " (" + pairs->note + ")"));
    }
    r.essential = estimate_essential(r.filtered, cam, opt.ransac);
    r.pose = select_pose(r.essential, r.filtered, cam, opt.ransac);
    r.two_view = triangulate_two_view(r.pose.R, r.pose.t, r.filtered, cam, r.essential.inliers, opt.method);
    r.scale = register_scale(r.two_view.cloud, r.sl_a, r.sl_b, opt.scale);
    r.fused = r.scale.metric;
    for (std::size_t i = 0; i < r.scale.reference.size(); ++i) {
        r.fused.push(r.scale.reference.points[i], PointSource::sl, r.scale.reference.ids[i]);
    }
    r.fused.scale_status = ScaleStatus::metric;
    return r;
}

}  // namespace ssr::geom
