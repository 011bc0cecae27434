#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "internal.hpp"

namespace ssr::geom {

using nlohmann::json;

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

Mat3 project_to_essential(const Mat3& E) {
    Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    const double s = 0.5 * (sv(0) + sv(1));
    return svd.matrixU() * Vec3(s, s, 0.0).asDiagonal() * svd.matrixV().transpose();
}

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Mat3 normalizer(const std::vector<Vec3>& pts) {
    Vec2 c = Vec2::Zero();
    for (const auto& p : pts) c += p.head<2>();
    c /= static_cast<double>(pts.size());
    double d = 0.0;
    for (const auto& p : pts) d += (p.head<2>() - c).norm();
    d /= static_cast<double>(pts.size());
    const double s = d > 0.0 ? std::sqrt(2.0) / d : 1.0;
    Mat3 T;
    T << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
    return T;
}

std::vector<std::size_t> eligible(const CorrespondenceSet& set,
                                  const std::vector<std::uint8_t>& mask) {
    if (!mask.empty() && mask.size() != set.pairs.size()) {
        throw DataError("inlier mask size does not match the correspondence set");
    }
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < set.pairs.size(); ++i) {
        if (mask.empty() ? set.pairs[i].accepted : mask[i] != 0) idx.push_back(i);
    }
    return idx;
}

struct Ray2 {
    Vec3 point;
    double depth_a = 0.0;
    double depth_b = 0.0;
    bool parallel = false;
    bool ok = false;
};

Ray2 midpoint(const Mat3& R, const Vec3& t, const Vec3& pn, const Vec3& qn) {
    Ray2 r;
    const Vec3 cb = -R.transpose() * t;
    const Vec3 db = R.transpose() * qn;
    double s = 0.0, u = 0.0;
    if (!detail::closest_points(Vec3::Zero(), pn, cb, db, s, u)) {
        r.parallel = true;
        return r;
    }
    r.point = 0.5 * (s * pn + cb + u * db);
    r.depth_a = r.point.z();
    r.depth_b = (R * r.point + t).z();
    r.ok = s > 0.0 && u > 0.0;
    return r;
}

Ray2 linear(const Mat3& R, const Vec3& t, const Vec3& pn, const Vec3& qn) {
    Ray2 r;
    Eigen::Matrix<double, 3, 4> P1 = Eigen::Matrix<double, 3, 4>::Zero();
    P1.leftCols<3>().setIdentity();
    Eigen::Matrix<double, 3, 4> P2;
    P2.leftCols<3>() = R;
    P2.col(3) = t;
    Eigen::Matrix4d A;
    A.row(0) = pn.x() * P1.row(2) - P1.row(0);
    A.row(1) = pn.y() * P1.row(2) - P1.row(1);
    A.row(2) = qn.x() * P2.row(2) - P2.row(0);
    A.row(3) = qn.y() * P2.row(2) - P2.row(1);
    Eigen::JacobiSVD<Eigen::Matrix4d> svd(A, Eigen::ComputeFullV);
    const Eigen::Vector4d X = svd.matrixV().col(3);
    // Parallel rays leave A with a two-dimensional null space.
    const auto& sv = svd.singularValues();
    if (!(sv(2) > 1e-12 * sv(0)) || !(std::abs(X(3)) > 1e-12 * X.head<3>().norm())) {
        r.parallel = true;
        return r;
    }
    r.point = X.head<3>() / X(3);
    r.depth_a = r.point.z();
    r.depth_b = (R * r.point + t).z();
    r.ok = r.depth_a > 0.0 && r.depth_b > 0.0;
    return r;
}

}  // namespace

Mat3 essential_eight_point(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    if (p.size() != q.size()) throw DataError("point lists differ in length");
    if (p.size() < 8) throw DataError("eight-point estimate needs >= 8 pairs, got " + std::to_string(p.size()));
    const Mat3 Tp = normalizer(p), Tq = normalizer(q);
    Eigen::MatrixXd A(static_cast<Eigen::Index>(p.size()), 9);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Vec3 a = Tp * p[i], b = Tq * q[i];
        A.row(static_cast<Eigen::Index>(i)) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(),
            b.y() * a.y(), b.y(), a.x(), a.y(), 1.0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::VectorXd e = svd.matrixV().col(8);
    Mat3 En;
    En << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
    // Rank 2 in the conditioned frame; equal singular values only after undoing it.
    Eigen::JacobiSVD<Mat3> rank2(En, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 sv = rank2.singularValues();
    sv(2) = 0.0;
    En = rank2.matrixU() * sv.asDiagonal() * rank2.matrixV().transpose();
    Mat3 E = project_to_essential(Tq.transpose() * En * Tp);
    const double n = E.norm();
    return n > 0.0 ? Mat3(E / n) : E;
}

double sampson_distance(const Mat3& E, const Vec3& p, const Vec3& q) {
    const Vec3 Ep = E * p;
    const Vec3 Etq = E.transpose() * q;
    const double e = q.dot(Ep);
    const double den = Ep.x() * Ep.x() + Ep.y() * Ep.y() + Etq.x() * Etq.x() + Etq.y() * Etq.y();
    if (!(den > 0.0)) return e == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::abs(e) / std::sqrt(den);
}

json RansacConfig::to_json() const {
    return {{"iterations", iterations}, {"threshold", threshold}, {"min_inliers", min_inliers},
            {"seed", seed}, {"pose_starts", pose_starts}};
}

RansacConfig RansacConfig::from_json(const json& j) {
    detail::reject_unknown(j, {"iterations", "threshold", "min_inliers", "seed", "pose_starts"},
                           "ransac");
    RansacConfig c;
    detail::read_field(j, "iterations", c.iterations, "ransac");
    detail::read_field(j, "threshold", c.threshold, "ransac");
    detail::read_field(j, "min_inliers", c.min_inliers, "ransac");
    detail::read_field(j, "seed", c.seed, "ransac");
    detail::read_field(j, "pose_starts", c.pose_starts, "ransac");
    if (c.iterations < 1) throw ConfigError("ransac.iterations must be >= 1");
    if (!(c.threshold > 0.0)) throw ConfigError("ransac.threshold must be > 0");
    if (c.min_inliers < 8) throw ConfigError("ransac.min_inliers must be >= 8");
    if (c.pose_starts < 0) throw ConfigError("ransac.pose_starts must be >= 0");
    return c;
}

EssentialResult estimate_essential(const CorrespondenceSet& set, const PinholeCamera& cam,
                                   const RansacConfig& cfg) {
    cam.validate();
    const auto idx = eligible(set, {});
    if (idx.size() < kMinPairs) {
        throw DataError("essential estimation needs >= 8 accepted pairs, got " +
                        std::to_string(idx.size()));
    }
    std::vector<Vec3> P, Q;
    for (std::size_t i : idx) {
        P.push_back(cam.normalize(set.pairs[i].p));
        Q.push_back(cam.normalize(set.pairs[i].q));
    }
    const std::size_t n = idx.size();
    // Truncated squared Sampson cost; the inliers are the pairs under the threshold.
    const double th2 = cfg.threshold * cfg.threshold;
    auto score = [&](const Mat3& E, std::vector<std::uint8_t>& in) {
        in.assign(n, 0);
        double cost = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double d = sampson_distance(E, P[k], Q[k]);
            if (d < cfg.threshold) {
                in[k] = 1;
                cost += d * d;
            } else {
                cost += th2;
            }
        }
        return cost;
    };
    auto count = [](const std::vector<std::uint8_t>& in) {
        return static_cast<std::size_t>(std::count(in.begin(), in.end(), std::uint8_t{1}));
    };

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::vector<Vec3> sp(8), sq(8);
    std::vector<std::uint8_t> in, best_in;
    std::vector<std::pair<double, Mat3>> sampled;
    sampled.reserve(static_cast<std::size_t>(cfg.iterations));
    Mat3 best_E = Mat3::Zero();
    double best_cost = std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.iterations; ++it) {
        for (std::size_t k = 0; k < n; ++k) order[k] = k;
        for (std::size_t k = 0; k < 8; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng() % (n - k));
            std::swap(order[k], order[j]);
            sp[k] = P[order[k]];
            sq[k] = Q[order[k]];
        }
        const Mat3 E = essential_eight_point(sp, sq);
        const double c = score(E, in);
        sampled.push_back({c, E});
        if (c < best_cost) {
            best_cost = c;
            best_E = E;
            best_in = in;
        }
    }
    std::size_t best = count(best_in);
    if (best < std::max(cfg.min_inliers, kMinPairs)) {
        throw NumericalError("degenerate configuration: best model has " + std::to_string(best) +
                             " inliers, need " + std::to_string(cfg.min_inliers));
    }
    std::vector<Vec3> ip, iq;
    for (std::size_t k = 0; k < n; ++k) {
        if (best_in[k]) {
            ip.push_back(P[k]);
            iq.push_back(Q[k]);
        }
    }
    const Mat3 refit = essential_eight_point(ip, iq);
    if (score(refit, in) <= best_cost && count(in) >= best) {
        best_E = refit;
        best_in = in;
        best = count(in);
    }
    EssentialResult r;
    r.E = best_E;
    r.inliers.assign(set.pairs.size(), 0);
    for (std::size_t k = 0; k < n; ++k) r.inliers[idx[k]] = best_in[k];
    r.inlier_count = best;
    std::stable_sort(sampled.begin(), sampled.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& h : sampled) r.ranked.push_back(h.second);
    return r;
}

std::array<std::pair<Mat3, Vec3>, 4> decompose_essential(const Mat3& E) {
    Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU(), V = svd.matrixV();
    if (U.determinant() < 0) U = -U;
    if (V.determinant() < 0) V = -V;
    Mat3 W;
    W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
    const Mat3 R1 = U * W * V.transpose();
    const Mat3 R2 = U * W.transpose() * V.transpose();
    const Vec3 t = U.col(2).normalized();
    return {{{R1, t}, {R1, -t}, {R2, t}, {R2, -t}}};
}

Pose recover_pose(const Mat3& E, const CorrespondenceSet& set, const PinholeCamera& cam,
                  const std::vector<std::uint8_t>& mask) {
    cam.validate();
    if (!E.allFinite()) throw NumericalError("essential matrix is not finite");
    const Vec3 sv = Eigen::JacobiSVD<Mat3>(E).singularValues();
    if (!(sv(0) > 1e-12) || sv(1) < 1e-6 * sv(0)) {
        throw NumericalError("degenerate essential matrix (no epipolar geometry)");
    }
    const auto idx = eligible(set, mask);
    if (idx.empty()) throw DataError("pose recovery needs at least one inlier pair");
    const auto cands = decompose_essential(E);
    Pose pose;
    for (std::size_t c = 0; c < 4; ++c) {
        std::size_t front = 0;
        for (std::size_t i : idx) {
            const auto r = midpoint(cands[c].first, cands[c].second, cam.normalize(set.pairs[i].p),
                                    cam.normalize(set.pairs[i].q));
            if (r.ok && r.depth_a > 0.0 && r.depth_b > 0.0) ++front;
        }
        pose.candidate_support[c] = front;
    }
    std::array<std::size_t, 4> sorted = pose.candidate_support;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (sorted[0] == 0 || sorted[0] == sorted[1]) {
        throw NumericalError("chirality test is ambiguous (" + std::to_string(sorted[0]) + " vs " +
                             std::to_string(sorted[1]) + " points in front)");
    }
    const auto best = static_cast<std::size_t>(
        std::max_element(pose.candidate_support.begin(), pose.candidate_support.end()) -
        pose.candidate_support.begin());
    pose.R = cands[best].first;
    pose.t = cands[best].second;
    return pose;
}

namespace {

struct SampsonFunctor {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    Mat3 R0;
    Vec3 t0, b1, b2;
    std::vector<Vec3> p, q;

    int inputs() const { return 5; }
    int values() const { return static_cast<int>(p.size()); }

    std::pair<Mat3, Vec3> pose(const Eigen::VectorXd& x) const {
        const Vec3 w = x.head<3>();
        const double a = w.norm();
        const Mat3 dR = a > 0.0 ? Mat3(Eigen::AngleAxisd(a, w / a)) : Mat3::Identity();
        return {dR * R0, (t0 + x(3) * b1 + x(4) * b2).normalized()};
    }

    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
        const auto [R, t] = pose(x);
        const Mat3 E = skew(t) * R;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const Vec3 Ep = E * p[i];
            const Vec3 Etq = E.transpose() * q[i];
            const double den =
                Ep.x() * Ep.x() + Ep.y() * Ep.y() + Etq.x() * Etq.x() + Etq.y() * Etq.y();
            f(static_cast<int>(i)) = den > 0.0 ? q[i].dot(Ep) / std::sqrt(den) : 0.0;
        }
        return 0;
    }
};

}  // namespace

Pose refine_pose(const Pose& initial, const CorrespondenceSet& set, const PinholeCamera& cam,
                 const std::vector<std::uint8_t>& mask) {
    cam.validate();
    const auto idx = eligible(set, mask);
    if (idx.size() < 5) throw DataError("pose refinement needs at least 5 pairs");
    if (!(initial.t.norm() > 0.0)) throw DataError("translation must be nonzero");
    SampsonFunctor fn;
    fn.R0 = initial.R;
    fn.t0 = initial.t.normalized();
    const Vec3 helper = std::abs(fn.t0.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    fn.b1 = fn.t0.cross(helper).normalized();
    fn.b2 = fn.t0.cross(fn.b1);
    for (std::size_t i : idx) {
        fn.p.push_back(cam.normalize(set.pairs[i].p));
        fn.q.push_back(cam.normalize(set.pairs[i].q));
    }
    Eigen::NumericalDiff<SampsonFunctor, Eigen::Central> diff(fn);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<SampsonFunctor, Eigen::Central>> lm(diff);
    lm.parameters.maxfev = 2000;
    lm.parameters.xtol = 1e-14;
    lm.parameters.ftol = 1e-14;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(5);
    lm.minimize(x);
    if (!x.allFinite()) throw NumericalError("pose refinement diverged");
    Pose out = initial;
    std::tie(out.R, out.t) = fn.pose(x);
    return out;
}

Pose select_pose(EssentialResult& est, const CorrespondenceSet& set, const PinholeCamera& cam,
                 const RansacConfig& cfg) {
    Pose first = recover_pose(est.E, set, cam, est.inliers);
    if (cfg.pose_starts == 0) return first;
    const auto idx = eligible(set, {});
    std::vector<Vec3> P, Q;
    for (std::size_t i : idx) {
        P.push_back(cam.normalize(set.pairs[i].p));
        Q.push_back(cam.normalize(set.pairs[i].q));
    }
    const double th2 = cfg.threshold * cfg.threshold;
    auto cost = [&](const Pose& pose) {
        const Mat3 E = skew(pose.t) * pose.R;
        double c = 0.0;
        for (std::size_t k = 0; k < P.size(); ++k) {
            const double d = sampson_distance(E, P[k], Q[k]);
            c += std::min(d * d, th2);
        }
        return c;
    };
    const double min_cos = std::cos(5.0 * std::numbers::pi / 180.0);
    std::vector<Vec3> starts;
    Pose best;
    double best_cost = std::numeric_limits<double>::infinity();
    auto try_start = [&](const Pose& p0) {
        for (const auto& s : starts) {
            if (s.dot(p0.t) > min_cos) return;
        }
        starts.push_back(p0.t);
        Pose p;
        try {
            p = refine_pose(p0, set, cam, est.inliers);
        } catch (const NumericalError&) {
            return;
        }
        const double c = cost(p);
        if (c < best_cost) {
            best_cost = c;
            best = p;
        }
    };
    try_start(first);
    for (const auto& E : est.ranked) {
        if (static_cast<int>(starts.size()) >= cfg.pose_starts) break;
        Pose p0;
        try {
            p0 = recover_pose(E, set, cam, est.inliers);
        } catch (const NumericalError&) {
            continue;
        }
        try_start(p0);
    }
    if (!std::isfinite(best_cost)) return first;
    est.E = skew(best.t) * best.R;
    est.E /= est.E.norm();
    est.inliers.assign(set.pairs.size(), 0);
    est.inlier_count = 0;
    for (std::size_t k = 0; k < P.size(); ++k) {
        if (sampson_distance(est.E, P[k], Q[k]) < cfg.threshold) {
            est.inliers[idx[k]] = 1;
            ++est.inlier_count;
        }
    }
    return best;
}

TwoViewResult triangulate_two_view(const Mat3& R, const Vec3& t, const CorrespondenceSet& set,
                                   const PinholeCamera& cam, const std::vector<std::uint8_t>& mask,
                                   TriangulationMethod method) {
    cam.validate();
    if (!(std::abs(R.determinant() - 1.0) < 1e-6) ||
        !(R.transpose() * R).isApprox(Mat3::Identity(), 1e-9)) {
        throw DataError("R is not a rotation");
    }
    if (!(t.norm() > 0.0)) throw DataError("translation must be nonzero");
    TwoViewResult out;
    for (std::size_t i : eligible(set, mask)) {
        const auto& c = set.pairs[i];
        const Vec3 pn = cam.normalize(c.p), qn = cam.normalize(c.q);
        const auto r = method == TriangulationMethod::midpoint ? midpoint(R, t, pn, qn)
                                                                : linear(R, t, pn, qn);
        const int id = static_cast<int>(i);
        if (r.parallel) {
            out.dropped.push_back({id, "parallel"});
            continue;
        }
        if (!r.ok || r.depth_a <= 0.0 || r.depth_b <= 0.0) {
            out.dropped.push_back({id, "behind"});
            continue;
        }
        const double ea = (cam.project(r.point) - c.p).norm();
        const double eb = (cam.project(R * r.point + t) - c.q).norm();
        out.cloud.push(r.point, PointSource::sfm, id);
        out.reprojection_px.push_back(std::max(ea, eb));
    }
    return out;
}

}  // namespace ssr::geom
