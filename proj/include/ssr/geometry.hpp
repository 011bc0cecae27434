#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ssr/dataset.hpp"

namespace ssr::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct PinholeCamera {
    double fx = 600.0;
    double fy = 600.0;
    double cx = 320.0;
    double cy = 240.0;
    std::size_t width = 640;
    std::size_t height = 480;

    void validate() const;
    /// Pixel -> normalized image coordinates (x, y, 1).
    Vec3 normalize(const Vec2& px) const;
    Vec2 project(const Vec3& X) const;
    bool inside(const Vec2& px) const;

    nlohmann::json to_json() const;
    static PinholeCamera from_json(const nlohmann::json& j);
};

/// Structured-light probe mounted beside the camera. The probe tip sits at
/// (baseline_mm, 0, 0) in the camera frame and its optical axis is tilted by
/// angle_deg towards the camera axis. Each spot id has its own unit ray.
struct ProbeRig {
    double baseline_mm = 5.0;
    double angle_deg = 10.0;
    std::map<int, Vec3> rays;  // camera frame

    void validate() const;
    Vec3 origin() const { return {baseline_mm, 0.0, 0.0}; }
    Vec3 axis() const;

    /// Rows x cols fan of rays spread by `pitch_deg` around the probe axis,
    /// ids row-major from 0.
    static ProbeRig fan(int rows, int cols, double pitch_deg, double baseline_mm = 5.0,
                        double angle_deg = 10.0);

    nlohmann::json to_json() const;
    static ProbeRig from_json(const nlohmann::json& j);
};

enum class ScaleStatus { up_to_scale, metric };
enum class PointSource { sl, sfm };

std::string to_string(ScaleStatus s);
std::string to_string(PointSource s);

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<PointSource> source;  // per point
    std::vector<int> ids;             // spot id (SL) or pair index (SfM)
    std::vector<double> values;       // optional per-point scalar, empty if absent
    std::vector<std::array<std::uint8_t, 3>> colors;  // optional per-point RGB
    ScaleStatus scale_status = ScaleStatus::up_to_scale;

    std::size_t size() const noexcept { return points.size(); }
    void push(const Vec3& p, PointSource src, int id);
    /// Throws DataError on non-finite coords or inconsistent attribute sizes.
    void validate() const;
};

struct Dropped {
    int id = 0;
    std::string reason;
};

// ---- structured light -----------------------------------------------------------

struct SlOptions {
    double max_skew_mm = 0.5;    // largest allowed gap between the two rays
    double min_angle_deg = 1.0;  // smallest triangulation angle
    double min_depth_mm = 10.0;
    double max_depth_mm = 60.0;
};

struct SlResult {
    PointCloud cloud;  // metric, source sl, ids = spot ids
    std::vector<Dropped> dropped;
};

/// Midpoint triangulation of every spot against its probe ray.
SlResult triangulate_sl(const data::SpotSet& spots, const PinholeCamera& cam, const ProbeRig& rig,
                        const SlOptions& opt = {});

// ---- correspondences ----------------------------------------------------------

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> pixels;  // row-major

    GrayImage() = default;
    GrayImage(std::size_t w, std::size_t h, float fill = 0.0f)
        : width(w), height(h), pixels(w * h, fill) {}
    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    /// Bilinear sample with clamped borders.
    double sample(double x, double y) const;
};

GrayImage to_gray(const data::ScalarMap& m);
data::ScalarMap to_map(const GrayImage& g);

struct Keypoint {
    Vec2 pt;
    std::vector<float> descriptor;
};

using DetectorHook = std::function<std::vector<Keypoint>(const GrayImage&)>;

struct CornerOptions {
    int max_corners = 400;
    double quality = 0.01;     // fraction of the strongest response
    int min_distance_px = 8;
    int block_radius = 2;      // structure tensor window
    int patch_radius = 3;      // descriptor patch
    int border_px = 16;
};

/// Minimum-eigenvalue corner detector with zero-mean, unit-norm patch descriptors.
DetectorHook corner_detector(const CornerOptions& opt = {});

/// Descriptor of the patch centred at a subpixel location, as produced by corner_detector.
std::vector<float> patch_descriptor(const GrayImage& img, const Vec2& pt, int patch_radius);

struct Correspondence {
    Vec2 p;  // frame A, pixels
    Vec2 q;  // frame B, pixels
    double descriptor_dist = 0.0;
    double flow_len_px = 0.0;
    double sym_residual_px = 0.0;
    double median_dev_px = 0.0;  // deviation from the local median flow
    bool accepted = true;
    std::string reject_reason;  // empty iff accepted
};

struct CorrespondenceSet {
    std::vector<Correspondence> pairs;
    bool insufficient = false;  // fewer than kMinPairs usable pairs
    std::string note;

    std::size_t accepted_count() const;
};

inline constexpr std::size_t kMinPairs = 8;

struct TrackOptions {
    int levels = 3;
    int window_radius = 7;  // 15 x 15
    int max_iterations = 30;
    double epsilon_px = 1e-3;
    int median_neighbors = 8;
    int patch_radius = 3;
};

/// Pyramidal Lucas-Kanade tracking A -> B, then B -> A for the symmetric residual.
CorrespondenceSet track_features(const GrayImage& a, const GrayImage& b, const DetectorHook& detect,
                                 const TrackOptions& opt = {});

/// Fills flow_len_px and median_dev_px from p and q.
void compute_flow_diagnostics(CorrespondenceSet& set, int median_neighbors = 8);

/// CSV with header `uA,vA,uB,vB`; diagnostics other than flow are zero.
CorrespondenceSet load_correspondences_csv(const std::filesystem::path& path,
                                           int median_neighbors = 8);
void save_correspondences_csv(const CorrespondenceSet& set, const std::filesystem::path& path);

struct FilterThresholds {
    double descriptor = 0.5;
    double flow_px = 80.0;
    double symmetric_px = 1.0;
    double smoothness_px = 3.0;

    static FilterThresholds none();
    nlohmann::json to_json() const;
    static FilterThresholds from_json(const nlohmann::json& j);
};

/// Re-evaluates every tracked pair against the thresholds. Reasons, checked in
/// order: "descriptor", "flow", "symmetric", "smoothness". Pairs rejected as
/// "track_lost" stay rejected.
CorrespondenceSet filter_correspondences(const CorrespondenceSet& set, const FilterThresholds& t);

// ---- two-view geometry ---------------------------------------------------------
//
// Convention: X_B = R X_A + t, E = [t]x R, and q^T E p = 0 for normalized
// coordinates p (frame A) and q (frame B).

Mat3 skew(const Vec3& v);

/// Eight-point estimate (Hartley normalization) projected onto (s, s, 0).
Mat3 essential_eight_point(const std::vector<Vec3>& p, const std::vector<Vec3>& q);

/// Replaces the singular values with (s, s, 0), s the mean of the first two.
Mat3 project_to_essential(const Mat3& E);

/// Square root of the first-order (Sampson) geometric error.
double sampson_distance(const Mat3& E, const Vec3& p, const Vec3& q);

struct RansacConfig {
    int iterations = 2000;
    double threshold = 1e-3;  // on sampson_distance, normalized coordinates
    std::size_t min_inliers = 8;
    std::uint64_t seed = 1;
    int pose_starts = 32;  // distinct hypotheses refined by select_pose; 0 disables refinement

    nlohmann::json to_json() const;
    static RansacConfig from_json(const nlohmann::json& j);
};

struct EssentialResult {
    Mat3 E = Mat3::Zero();
    std::vector<std::uint8_t> inliers;  // parallel to set.pairs
    std::size_t inlier_count = 0;
    std::vector<Mat3> ranked;  // sampled hypotheses, lowest cost first
};

/// MSAC over the accepted pairs (truncated squared Sampson cost), then a
/// re-estimate on the inliers. Fewer than 8 accepted pairs: DataError.
/// No model reaching min_inliers: NumericalError.
EssentialResult estimate_essential(const CorrespondenceSet& set, const PinholeCamera& cam,
                                   const RansacConfig& cfg = {});

struct Pose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    std::array<std::size_t, 4> candidate_support{};  // points in front of both views
};

/// The four (R, t) factorizations of E, in a fixed order.
std::array<std::pair<Mat3, Vec3>, 4> decompose_essential(const Mat3& E);

/// Chirality selection over the pairs with mask != 0 (all pairs when mask is
/// empty). Degenerate E or a tie between candidates: NumericalError.
Pose recover_pose(const Mat3& E, const CorrespondenceSet& set, const PinholeCamera& cam,
                  const std::vector<std::uint8_t>& mask = {});

/// Levenberg-Marquardt on the Sampson distances of the masked pairs over the
/// five pose degrees of freedom (rotation, unit translation direction).
/// Candidate support is carried over unchanged.
Pose refine_pose(const Pose& initial, const CorrespondenceSet& set, const PinholeCamera& cam,
                 const std::vector<std::uint8_t>& mask = {});

/// Multi-start pose: recover_pose and refine_pose from the best model and from
/// ranked hypotheses whose translation differs by more than 5 degrees from
/// every start so far, up to cfg.pose_starts starts. Keeps the pose with the
/// lowest truncated Sampson cost and rewrites est.E and its inliers to match.
/// With pose_starts == 0 this is recover_pose on est.E.
Pose select_pose(EssentialResult& est, const CorrespondenceSet& set, const PinholeCamera& cam,
                 const RansacConfig& cfg = {});

enum class TriangulationMethod { midpoint, linear };

struct TwoViewResult {
    PointCloud cloud;  // up to scale, frame A, ids = pair index
    std::vector<double> reprojection_px;  // per kept point, max over both views
    std::vector<Dropped> dropped;
};

TwoViewResult triangulate_two_view(const Mat3& R, const Vec3& t, const CorrespondenceSet& set,
                                   const PinholeCamera& cam,
                                   const std::vector<std::uint8_t>& mask = {},
                                   TriangulationMethod method = TriangulationMethod::midpoint);

// ---- scale fusion ---------------------------------------------------------------

enum class ScaleMode { point_to_plane, point_to_point };

struct ScaleOptions {
    double gate_radius_mm = 2.0;
    ScaleMode mode = ScaleMode::point_to_plane;
    int plane_neighbors = 6;
    int max_iterations = 50;

    nlohmann::json to_json() const;
    static ScaleOptions from_json(const nlohmann::json& j);
};

/// Per-point average of two SL clouds over the spot ids present in both.
PointCloud average_sl(const PointCloud& a, const PointCloud& b);

struct ScaleResult {
    PointCloud metric;
    PointCloud reference;
    double scale = 0.0;
    std::size_t pairs = 0;
    int iterations = 0;
};

/// Scale that best aligns the SfM cloud with the averaged SL reference over
/// nearest-neighbour pairs within the gating radius, alternating matching
/// and the closed-form solve from a median-depth initial guess.
ScaleResult register_scale(const PointCloud& sfm, const PointCloud& sl_a, const PointCloud& sl_b,
                           const ScaleOptions& opt = {});

// ---- pipeline -------------------------------------------------------------------

struct ReconstructionOptions {
    SlOptions sl;
    FilterThresholds filter;
    RansacConfig ransac;
    ScaleOptions scale;
    TriangulationMethod method = TriangulationMethod::midpoint;
};

struct ReconstructionResult {
    PointCloud sl_a;
    PointCloud sl_b;
    std::vector<Dropped> sl_dropped;
    CorrespondenceSet filtered;
    EssentialResult essential;
    Pose pose;
    TwoViewResult two_view;
    ScaleResult scale;
    PointCloud fused;  // metric SfM points followed by the SL reference
    bool sl_only = false;

    nlohmann::json metrics() const;
};

/// SL triangulation of both SL frames; without correspondences only the
/// averaged SL cloud is returned. Otherwise filter, essential matrix, pose,
/// triangulation and scale registration against the SL reference.
ReconstructionResult reconstruct_scene(const PinholeCamera& cam, const ProbeRig& rig,
                                       const data::SpotSet& spots_a, const data::SpotSet& spots_b,
                                       const std::optional<CorrespondenceSet>& pairs,
                                       const ReconstructionOptions& opt = {});

// ---- PLY -------------------------------------------------------------------------

/// ASCII PLY with x, y, z, `source` and, when present, `value` and red/green/blue.
void save_ply(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_ply(const std::filesystem::path& path);

// ---- synthetic scenes ------------------------------------------------------------

/// Textured surface viewed by a calibrated camera and the SL probe: the plane
/// n . X = d for x <= fold_x, continued past the crease line x = fold_x by a
/// second plane rotated by fold_deg about that line.
struct SyntheticScene {
    PinholeCamera cam;
    ProbeRig rig;
    Vec3 plane_normal{0.0, 0.0, 1.0};
    double plane_d = 30.0;
    double fold_x = 8.0;
    double fold_deg = 0.0;  // 0 keeps a single plane
    std::vector<std::array<double, 4>> waves;  // amplitude, kx, ky, phase on the plane

    /// Default: plane about 30 mm ahead tilted 20 degrees about x, folded by
    /// 30 degrees at x = 8 mm (outside the spot pattern), 9 x 9 spot fan.
    static SyntheticScene standard(std::uint64_t seed = 1);

    /// Camera-frame surface point hit by the ray origin + s dir, if in front.
    std::optional<Vec3> intersect(const Vec3& origin, const Vec3& dir) const;
    /// Plane texture intensity in [0, 1] at a world point.
    double texture(const Vec3& X) const;
    /// Frame rendered from a camera whose pose maps world to camera as X_c = R X + t.
    GrayImage render(const Mat3& R, const Vec3& t) const;
    /// Spots of the probe rig mounted on the moved camera, in that camera's pixels.
    data::SpotSet spots(const Mat3& R, const Vec3& t) const;

    struct Pairs {
        CorrespondenceSet set;
        std::vector<Vec3> truth;  // surface point of each pair in the world frame
    };
    /// `n` surface points seen by the identity camera and by (R, t), with
    /// independent Gaussian pixel noise on both observations.
    Pairs correspondences(const Mat3& R, const Vec3& t, std::size_t n, std::uint64_t seed,
                          double noise_px = 0.0) const;
};

}  // namespace ssr::geom
