// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only N]... [--known-red N]...
//
// Exit status is 0 when every criterion passes or is listed with --known-red.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <sys/wait.h>

#include "gradcheck.hpp"
#include "ssr/geometry.hpp"
#include "ssr/models.hpp"
#include "ssr/overlay.hpp"
#include "ssr/training.hpp"

using namespace ssr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[fail: " << what << "] ";
        }
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- 1: gradient suite --------------------------------------------------------

double gradcheck_case(const oracle::GradCase& c, std::mt19937_64& rng) {
    using tensor::Tensor;
    const Tensor out = oracle::run(c);
    const Tensor r = oracle::random_tensor(out.shape(), rng);
    std::vector<const Tensor*> in;
    for (const auto& t : c.inputs) in.push_back(&t);
    auto fwd = tensor::forward(c.layer, in, c.layer.has_params() ? &c.params : nullptr);
    auto bwd = tensor::backward(c.layer, r, fwd.cache);
    constexpr float eps = 1e-3f;
    double worst = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        auto num = oracle::numeric_grad(c, [i](oracle::GradCase& g) -> Tensor& { return g.inputs[i]; }, r, eps);
        worst = std::max(worst, oracle::max_rel_error(bwd.grad_inputs[i], num));
    }
    if (c.layer.has_params()) {
        auto nw = oracle::numeric_grad(c, [](oracle::GradCase& g) -> Tensor& { return g.params.weight; }, r, eps);
        worst = std::max(worst, oracle::max_rel_error(bwd.grad_params.weight, nw));
        if (c.layer.has_bias) {
            auto nb = oracle::numeric_grad(c, [](oracle::GradCase& g) -> Tensor& { return g.params.bias; }, r, eps);
            worst = std::max(worst, oracle::max_rel_error(bwd.grad_params.bias, nb));
        }
    }
    return worst;
}

Outcome criterion_gradients() {
    using tensor::LayerKind;
    Outcome o;
    const auto t0 = Clock::now();
    double worst = 0.0;
    int cases = 0;
    for (LayerKind kind : {LayerKind::conv1d, LayerKind::tconv1d, LayerKind::conv2d, LayerKind::relu,
                           LayerKind::residual_add, LayerKind::concat, LayerKind::elementwise_product}) {
        double kind_worst = 0.0;
        for (int seed = 0; seed < 25; ++seed) {
            std::mt19937_64 rng(5000 + seed * 131 + static_cast<int>(kind));
            kind_worst = std::max(kind_worst, gradcheck_case(oracle::random_case(kind, rng), rng));
            ++cases;
        }
        o.check(kind_worst < 1e-3, std::string(tensor::to_string(kind)));
        worst = std::max(worst, kind_worst);
    }
    const double secs = seconds_since(t0);
    o.check(secs < 60.0, "runtime");
    o.detail << cases << " cases over 7 layer kinds, max rel err " << worst << " (< 1e-3), " << secs << " s (< 60)";
    return o;
}

// ---- 2: Model-1 capacity ------------------------------------------------------

// Greedy farthest-point choice of `n` pixels in RGB space, so that no two chosen
// inputs are near-metamers of each other.
std::vector<std::size_t> spread_pixels(const models::Tensor& rgb, std::size_t n) {
    const std::size_t P = rgb.shape()[0];
    std::vector<std::size_t> chosen{0};
    std::vector<double> dist(P, std::numeric_limits<double>::infinity());
    while (chosen.size() < n) {
        const std::size_t last = chosen.back();
        std::size_t best = 0;
        for (std::size_t p = 0; p < P; ++p) {
            double d = 0.0;
            for (std::size_t k = 0; k < 3; ++k) {
                const double diff = rgb[p * 3 + k] - rgb[last * 3 + k];
                d += diff * diff;
            }
            dist[p] = std::min(dist[p], d);
            if (dist[p] > dist[best]) best = p;
        }
        chosen.push_back(best);
    }
    return chosen;
}

Outcome criterion_capacity() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto ds = data::generate_synthetic_dataset(4, 16, 16, 2024);
    std::vector<float> rgb_all, hsi_all;
    for (const auto& s : ds) {
        const auto r = models::stack_to_pixels(s.rgb);
        const auto h = models::stack_to_pixels(s.hsi);
        rgb_all.insert(rgb_all.end(), r.values().begin(), r.values().end());
        hsi_all.insert(hsi_all.end(), h.values().begin(), h.values().end());
    }
    const std::size_t P = rgb_all.size() / 3, C = 24, n = 50;
    const models::Tensor all_rgb({P, 1, 3}, rgb_all);
    const auto pick = spread_pixels(all_rgb, n);
    models::Tensor rgb({n, 1, 3}), target({n, 1, C});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < 3; ++k) rgb[i * 3 + k] = rgb_all[pick[i] * 3 + k];
        for (std::size_t c = 0; c < C; ++c) target[i * C + c] = hsi_all[pick[i] * C + c];
    }

    train::TrainConfig cfg;
    cfg.max_epochs = 2000;
    cfg.plateau_patience = 2000;
    cfg.batch_size = 2;
    cfg.lr = 2e-3;
    cfg.lr_decay = 0.998;
    cfg.seed = 3;
    const auto arch = models::ArchConfig::defaults(24, 32);
    const auto r = train::train_model1_pixels(rgb, target, models::build_model1(arch, cfg.seed), cfg);
    o.check(!r.diverged, "diverged");
    o.check(r.final_loss < 1e-1, "loss");

    bool shapes_ok = true;
    for (auto [w, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 3}, {13, 29}}) {
        std::vector<float> v(w * h * 3, 100.0f);
        const data::SpectralStack in(w, h, {465.0, 540.0, 610.0}, std::move(v));
        const auto out = models::model1_predict(r.params, in);
        shapes_ok &= out.width() == w && out.height() == h && out.channels() == 24;
    }
    o.check(shapes_ok, "shape");
    o.detail << n << " RGB-separated spectra, " << r.epochs_run << " epochs, final L2 loss " << r.final_loss
             << " (< 0.1); MxNx3 -> MxNx24 for 1x1, 7x3, 13x29: " << (shapes_ok ? "ok" : "wrong") << "; "
             << seconds_since(t0) << " s";
    return o;
}

// ---- 3: Model-2 over Model-1 -------------------------------------------------

Outcome criterion_model2_superiority() {
    Outcome o;
    const auto t0 = Clock::now();
    const auto ds = data::generate_synthetic_dataset(60, 16, 16, 77);
    train::TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.plateau_patience = 10;
    cfg.batch_size = 256;
    cfg.pixels_per_stack = 64;
    cfg.lr = 3e-3;
    cfg.model2_lr = 3e-4;
    cfg.seed = 11;
    const auto arch = models::ArchConfig::defaults(24, 16);
    const auto r = train::run_loocv(ds, 5, arch, cfg);
    int wins = 0, ok = 0;
    for (const auto& f : r.folds) {
        if (!f.ok) continue;
        ++ok;
        wins += f.model2.mean_psnr > f.model1.mean_psnr;
        o.detail << "fold " << f.fold << ": " << f.model1.mean_psnr << " vs " << f.model2.mean_psnr << " (train "
                 << f.model1_train_loss << "/" << f.model2_stage_a_loss << "/" << f.model2_stage_b_loss << "); ";
    }
    const double secs = seconds_since(t0);
    o.check(ok == 5, "fold failures");
    o.check(wins >= 4, "wins");
    o.check(secs < 1800.0, "runtime");
    o.detail << "model2 higher in " << wins << "/5 folds (>= 4), " << secs << " s (< 1800)";
    return o;
}

// ---- 4: two-stage protocol ------------------------------------------------------

Outcome criterion_two_stage() {
    Outcome o;
    const auto ds = data::generate_synthetic_dataset(4, 12, 12, 9);
    train::TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.plateau_patience = 100;
    cfg.pixels_per_stack = 32;
    cfg.seed = 4;
    const auto m1 = train::train_model1(ds, models::ArchConfig::defaults(24, 8), cfg);
    const auto m2 = train::train_model2(ds, m1.params, cfg);
    std::size_t identical = 0;
    for (const auto& e : m1.params.entries) {
        const auto& after = m2.after_stage_a.get(e.name);
        const bool same = after.value.shape() == e.value.shape() &&
                          std::equal(e.value.values().begin(), e.value.values().end(),
                                     after.value.values().begin(),
                                     [](float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; });
        identical += same;
    }
    o.check(identical == m1.params.entries.size(), "frozen prefix changed");
    o.check(m2.stage_b_loss <= m2.stage_a_loss, "stage B regressed");
    o.detail << identical << "/" << m1.params.entries.size()
             << " model1 tensors bit-identical after stage A; stage A loss " << m2.stage_a_loss
             << ", stage B loss " << m2.stage_b_loss;
    return o;
}

// ---- 5: PSNR semantics ------------------------------------------------------------

Outcome criterion_psnr() {
    using train::PsnrMode;
    Outcome o;
    data::SpectralStack gt(5, 4, data::default_band_grid());
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(10.0f, 200.0f);
    for (std::size_t c = 0; c < gt.channels(); ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 5; ++x) gt.set(c, y, x, std::round(u(rng)));
    data::SpectralStack plus1 = gt;
    for (std::size_t c = 0; c < gt.channels(); ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 5; ++x) plus1.set(c, y, x, gt.at(c, y, x) + 1.0f);
    const double ref = 20.0 * std::log10(255.0);  // MSE = 1 in either form
    for (auto mode : {PsnrMode::amplitude, PsnrMode::standard}) {
        o.check(std::abs(train::psnr(plus1, gt, mode) - ref) < 1e-6, "gt+1 " + train::to_string(mode));
        o.check(train::psnr(gt, gt, mode) == train::kPsnrInfinity, "identity " + train::to_string(mode));
    }
    const double a = train::psnr_from_mse(100.0, PsnrMode::amplitude);
    const double s = train::psnr_from_mse(100.0, PsnrMode::standard);
    o.check(std::abs(a - (ref - 40.0)) < 1e-6, "amplitude at 100");
    o.check(std::abs((s - a) - 20.0) < 1e-6, "gap");
    o.detail << "gt+1: " << train::psnr(plus1, gt, PsnrMode::amplitude) << " / "
             << train::psnr(plus1, gt, PsnrMode::standard) << " dB; MSE 100: " << a << " vs " << s
             << " dB, gap " << (s - a);
    return o;
}

// ---- 6: data-construction identities ----------------------------------------------

Outcome criterion_data_identities() {
    Outcome o;
    const auto ds = data::generate_synthetic_dataset(3, 24, 20, 31);
    const data::SynthOptions synth;
    for (const auto& s : ds) {
        const auto d_rgb = s.d_hsi.complement();
        for (std::size_t i = 0; i < s.d_hsi.map.values.size(); ++i) {
            if (s.d_hsi.map.values[i] + d_rgb.map.values[i] != 1.0f) {
                o.check(false, "D_rgb + D_hsi");
                break;
            }
        }
        // generated sparse stacks follow H_s = D_hsi * H above the support threshold
        for (std::size_t c = 0; c < s.hsi.channels(); ++c)
            for (std::size_t y = 0; y < s.hsi.height(); ++y)
                for (std::size_t x = 0; x < s.hsi.width(); ++x) {
                    const float d = s.d_hsi.at(y, x);
                    const float expect = d < synth.threshold ? 0.0f : d * s.hsi.at(c, y, x);
                    if (s.sparse.at(c, y, x) != expect) o.check(false, "generated H_s");
                }
    }

    // integer spot centres, checked point by point
    const auto& H = ds[0].hsi;
    const double sigma = 2.0;
    const data::SpotSet spots({{0, 5.0, 4.0, 500.0}, {1, 17.0, 12.0, 560.0}, {2, 9.0, 15.0, 620.0}}, H.width(),
                              H.height());
    const auto d = data::make_density_map(spots, sigma, H.width(), H.height());
    const auto Hs = data::make_sparse_stack(H, d, synth.threshold);
    std::size_t far = 0;
    for (const auto& sp : spots.spots()) {
        const auto x = static_cast<std::size_t>(sp.u), y = static_cast<std::size_t>(sp.v);
        o.check(d.at(y, x) == 1.0f, "D_hsi at centre");
        for (std::size_t c = 0; c < H.channels(); ++c) o.check(Hs.at(c, y, x) == H.at(c, y, x), "H_s at centre");
    }
    for (std::size_t y = 0; y < H.height(); ++y)
        for (std::size_t x = 0; x < H.width(); ++x) {
            double nearest = std::numeric_limits<double>::infinity();
            for (const auto& sp : spots.spots()) {
                nearest = std::min(nearest, std::hypot(sp.u - static_cast<double>(x), sp.v - static_cast<double>(y)));
            }
            if (nearest < 3.0 * sigma) continue;
            ++far;
            for (std::size_t c = 0; c < H.channels(); ++c) {
                if (Hs.at(c, y, x) != 0.0f) o.check(false, "H_s far from spots");
            }
        }
    o.check(far > 0, "no far pixels");

    // R = h * H against a nested loop in the same accumulation order
    const auto h = data::default_camera_response(H.wavelengths_nm());
    const auto R = data::synthesize_rgb(H, h);
    bool exact = true;
    for (std::size_t y = 0; y < H.height(); ++y)
        for (std::size_t x = 0; x < H.width(); ++x)
            for (std::size_t k = 0; k < 3; ++k) {
                float acc = 0.0f;
                for (std::size_t c = 0; c < H.channels(); ++c) acc += static_cast<float>(h.rows[k][c]) * H.at(c, y, x);
                exact &= R.at(2 - k, y, x) == std::clamp(acc, 0.0f, 255.0f);
            }
    o.check(exact, "R = h*H");
    o.detail << "complement and H_s = D_hsi*H on 3 generated stacks; 3 spot centres (D_hsi = 1, H_s = H); " << far
             << " pixels beyond 3 sigma with H_s = 0; "
             << "R = h*H bit-exact vs nested loop: " << (exact ? "yes" : "no");
    return o;
}

// ---- 7: two-view geometry ---------------------------------------------------------

geom::Mat3 rot_y(double deg) {
    return geom::Mat3(Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, geom::Vec3::UnitY()));
}

double rotation_angle(const geom::Mat3& A, const geom::Mat3& B) {
    return std::acos(std::clamp(((A * B.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0));
}

// Points at scattered depths 20..40 mm in the view of both cameras, projected without noise.
geom::CorrespondenceSet scattered_pairs(const geom::PinholeCamera& cam, const geom::Mat3& R, const geom::Vec3& t,
                                        std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> xy(-8.0, 8.0), z(20.0, 40.0);
    geom::CorrespondenceSet set;
    while (set.pairs.size() < n) {
        const geom::Vec3 X(xy(rng), xy(rng), z(rng));
        const geom::Vec3 Xb = R * X + t;
        if (Xb.z() <= 0.0) continue;
        geom::Correspondence c;
        c.p = cam.project(X);
        c.q = cam.project(Xb);
        if (cam.inside(c.p) && cam.inside(c.q)) set.pairs.push_back(c);
    }
    return set;
}

// 20 seeded trials with 30% of pairs replaced by points >= 10 px off their true
// epipolar line. Returns {outliers accepted in total, worst inlier recall}.
template <typename MakePairs>
std::pair<std::size_t, double> outlier_trials(const geom::PinholeCamera& cam, const geom::Mat3& R,
                                              const geom::Vec3& t, MakePairs make) {
    const geom::Mat3 E_true = geom::skew(t.normalized()) * R;
    Eigen::Matrix3d K;
    K << cam.fx, 0, cam.cx, 0, cam.fy, cam.cy, 0, 0, 1;
    const Eigen::Matrix3d F = K.inverse().transpose() * E_true * K.inverse();
    std::size_t accepted_outliers = 0;
    double worst_recall = 1.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto set = make(seed);
        std::mt19937_64 rng(seed * 1009);
        std::uniform_real_distribution<double> ux(0, cam.width - 1.0), uy(0, cam.height - 1.0);
        const std::size_t n = set.pairs.size(), n_out = n * 3 / 10;
        std::vector<bool> outlier(n, false);
        for (std::size_t i = 0; i < n_out; ++i) {
            auto& c = set.pairs[i];
            double d = 0.0;
            do {
                c.q = {ux(rng), uy(rng)};
                const Eigen::Vector3d l = F * Eigen::Vector3d(c.p.x(), c.p.y(), 1.0);
                d = std::abs(l.dot(Eigen::Vector3d(c.q.x(), c.q.y(), 1.0))) / l.head<2>().norm();
            } while (d < 10.0);
            outlier[i] = true;
        }
        geom::RansacConfig rc;
        rc.seed = seed;
        const auto r = geom::estimate_essential(set, cam, rc);
        std::size_t good = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!r.inliers[i]) continue;
            outlier[i] ? ++accepted_outliers : ++good;
        }
        worst_recall = std::min(worst_recall, static_cast<double>(good) / static_cast<double>(n - n_out));
    }
    return {accepted_outliers, worst_recall};
}

Outcome criterion_geometry() {
    Outcome o;
    const auto scene = geom::SyntheticScene::standard(1);
    const auto& cam = scene.cam;
    o.check(std::abs(scene.rig.angle_deg - 10.0) < 1e-12 && std::abs(scene.rig.baseline_mm - 5.0) < 1e-12,
            "default rig");
    const geom::Mat3 R = rot_y(5);
    const geom::Vec3 t(3.0, 0.3, 0.6);
    const auto pairs = scene.correspondences(R, t, 120, 1);
    const auto est = geom::estimate_essential(pairs.set, cam);
    double worst_epi = 0.0;
    for (const auto& c : pairs.set.pairs) {
        worst_epi = std::max(worst_epi, std::abs(cam.normalize(c.q).dot(est.E * cam.normalize(c.p))));
    }
    const auto pose = geom::recover_pose(est.E, pairs.set, cam, est.inliers);
    const double rot_err = rotation_angle(pose.R, R);
    const double t_err = (pose.t - t.normalized()).norm();
    int full = 0, nonzero = 0;
    for (auto s : pose.candidate_support) {
        full += s == est.inlier_count;
        nonzero += s > 0;
    }
    o.check(worst_epi < 1e-9, "epipolar");
    o.check(rot_err < 1e-6 && t_err < 1e-6, "pose");
    o.check(full == 1, "chirality");

    const auto general = outlier_trials(cam, R, t, [&](std::uint64_t seed) { return scattered_pairs(cam, R, t, 140, seed); });
    const auto folded = outlier_trials(cam, R, t, [&](std::uint64_t seed) { return scene.correspondences(R, t, 140, seed).set; });
    const std::size_t accepted_outliers = general.first;
    const double worst_recall = general.second;
    o.check(accepted_outliers == 0, "outliers accepted");
    o.check(worst_recall >= 0.95, "inlier recall");
    o.detail << "epipolar max " << worst_epi << " (< 1e-9); rotation err " << rot_err << ", t err " << t_err
             << " (< 1e-6); candidates with full support " << full << " (of " << nonzero
             << " nonzero); 20 trials with 30% outliers: " << accepted_outliers
             << " outliers accepted, min inlier recall " << worst_recall << " (scattered depths); folded two-plane surface"
             << " (near-critical, informational): " << folded.first << " outliers accepted, min recall " << folded.second;
    return o;
}

// ---- 8: scale fusion ----------------------------------------------------------------

double pipeline_rms(std::uint64_t seed, double noise_px) {
    const auto scene = geom::SyntheticScene::standard(seed);
    const geom::Vec3 delta(0.4, 0.0, 0.0);
    const auto spots_a = scene.spots(geom::Mat3::Identity(), delta);
    const auto spots_b = scene.spots(geom::Mat3::Identity(), -delta);
    const auto pairs = scene.correspondences(rot_y(4), geom::Vec3(4.0, 0.5, 0.8), 300, seed, noise_px);
    geom::ReconstructionOptions opt;
    opt.filter = geom::FilterThresholds::none();
    opt.ransac.seed = seed;
    opt.ransac.threshold = noise_px > 0 ? 2e-3 : 1e-3;
    const auto r = geom::reconstruct_scene(scene.cam, scene.rig, spots_a, spots_b, pairs.set, opt);
    double acc = 0.0;
    for (std::size_t i = 0; i < r.scale.metric.size(); ++i) {
        acc += (r.scale.metric.points[i] - pairs.truth[static_cast<std::size_t>(r.scale.metric.ids[i])]).squaredNorm();
    }
    return std::sqrt(acc / static_cast<double>(r.scale.metric.size()));
}

Outcome criterion_scale() {
    Outcome o;
    const auto scene = geom::SyntheticScene::standard();
    const auto sl = geom::triangulate_sl(scene.spots(geom::Mat3::Identity(), geom::Vec3::Zero()), scene.cam,
                                         scene.rig).cloud;
    geom::PointCloud sfm;
    for (std::size_t i = 0; i < sl.size(); ++i) sfm.push(sl.points[i] / 2.5, geom::PointSource::sfm, static_cast<int>(i));
    const double s = geom::register_scale(sfm, sl, sl).scale;
    o.check(std::abs(s - 2.5) < 1e-9, "exact ratio");

    const double clean = std::max(pipeline_rms(1, 0.0), pipeline_rms(2, 0.0));
    std::vector<double> noisy;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) noisy.push_back(pipeline_rms(seed, 0.2));
    std::sort(noisy.begin(), noisy.end());
    const double median = 0.5 * (noisy[9] + noisy[10]);
    o.check(clean < 1e-4, "noiseless rms");
    o.check(median < 0.2, "noisy median");
    o.detail << "s = " << s << " (|s - 2.5| = " << std::abs(s - 2.5) << "); noiseless RMS " << clean
             << " mm (< 1e-4); 0.2 px noise 20-seed median RMS " << median << " mm (< 0.2)";
    return o;
}

// ---- 9: unmixing round trip ----------------------------------------------------------

Outcome criterion_unmixing() {
    Outcome o;
    overlay::ExtinctionTable table;
    for (double nm = 440.0; nm <= 700.0; nm += 5.0) {
        table.wavelengths_nm.push_back(nm);
        table.eps_hbo2.push_back(200.0 + 900.0 * std::exp(-std::pow((nm - 542.0) / 18.0, 2)) +
                                 700.0 * std::exp(-std::pow((nm - 577.0) / 12.0, 2)));
        table.eps_hb.push_back(300.0 + 1100.0 * std::exp(-std::pow((nm - 556.0) / 22.0, 2)) +
                               150.0 * std::exp(-std::pow((nm - 660.0) / 30.0, 2)));
    }
    const auto grid = data::default_band_grid();
    const auto eps = table.resample(grid);
    // 3 x 3 image: pure HbO2, 50/50, then random mixtures; I = I0 exp(-A)
    const double i0 = 250.0;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> conc(0.0, 1e-3), off(0.0, 0.2);
    data::SpectralStack msi(3, 3, grid);
    for (std::size_t p = 0; p < 9; ++p) {
        double c1 = conc(rng), c2 = conc(rng);
        if (p == 0) c1 = 8e-4, c2 = 0.0;
        if (p == 1) c1 = c2 = 4e-4;
        const double c3 = p < 2 ? 0.05 : off(rng);
        for (std::size_t c = 0; c < grid.size(); ++c) {
            const double a = c1 * eps[0][c] + c2 * eps[1][c] + c3;
            msi.set(c, p / 3, p % 3, static_cast<float>(i0 * std::exp(-a)));
        }
    }
    overlay::SaturationOptions so;
    so.i0 = {i0};
    const auto r = overlay::oxygen_saturation(msi, table, so);
    const double pure = r.sao2.values[0], half = r.sao2.values[1];
    bool bounded = true;
    for (std::size_t i = 0; i < r.sao2.values.size(); ++i) {
        const float v = r.sao2.values[i];
        if (!std::isnan(v)) bounded &= v >= 0.0f && v <= 1.0f;
    }
    // A float32 image carries intensities to ~1e-7 relative, which bounds the recovered ratio well inside 1e-6.
    o.check(std::abs(pure - 1.0) < 1e-6, "pure HbO2");
    o.check(std::abs(half - 0.5) < 1e-6, "50/50");
    o.check(bounded, "range");

    // Double-precision path through the unmixer itself.
    const overlay::Unmixer un(table, grid);
    std::vector<double> a_pure, a_half;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        a_pure.push_back(8e-4 * eps[0][c] + 0.05);
        a_half.push_back(4e-4 * eps[0][c] + 4e-4 * eps[1][c] + 0.05);
    }
    const double dp = un.fit(a_pure).sao2, dh = un.fit(a_half).sao2;
    o.check(std::abs(dp - 1.0) < 1e-6 && std::abs(dh - 0.5) < 1e-6, "double path");
    o.detail << "image path: pure " << pure << ", 50/50 " << half << "; direct fit: " << dp << ", " << dh
             << "; " << r.defined_count << " defined pixels all in [0,1]: " << (bounded ? "yes" : "no");
    return o;
}

// ---- 10: CLI reproducibility ---------------------------------------------------------

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const nlohmann::json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2);
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SSR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Runs the whole command chain in `dir` and returns every output file, keyed by relative path.
std::vector<std::pair<std::string, std::string>> cli_chain(const fs::path& dir, int& failures) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file(dir / "gen.json", {{"out_dir", "ds"}, {"n_stacks", 4}, {"width", 12}, {"height", 12}, {"seed", 9}});
    write_file(dir / "t1.json", {{"dataset", "ds/manifest.json"},
                                 {"model", 1},
                                 {"arch", {{"hidden_features", 4}}},
                                 {"train", {{"max_epochs", 3}, {"seed", 2}}},
                                 {"out_params", "out/m1.json"},
                                 {"out_log", "out/m1.csv"},
                                 {"out_summary", "out/m1.summary.json"}});
    write_file(dir / "t2.json", {{"dataset", "ds/manifest.json"},
                                 {"model", 2},
                                 {"init_model1", "out/m1.json"},
                                 {"train", {{"max_epochs", 2}, {"seed", 2}}},
                                 {"out_params", "out/m2.json"},
                                 {"out_log", "out/m2.csv"}});
    write_file(dir / "e.json", {{"params", "out/m2.json"},
                                {"dataset", "ds/manifest.json"},
                                {"out_report", "out/report.json"},
                                {"out_maps_dir", "out/maps"},
                                {"out_predictions_dir", "out/pred"}});
    write_file(dir / "cv.json", {{"mode", "cv"},
                                 {"dataset", "ds/manifest.json"},
                                 {"folds", 2},
                                 {"arch", {{"hidden_features", 4}}},
                                 {"train", {{"max_epochs", 2}}},
                                 {"out_report", "out/cv.json"}});
    write_file(dir / "scene.json", {{"out_dir", "scene"}});
    write_file(dir / "nbi.json", {{"kind", "nbi"},
                                  {"msi", "out/pred/s0000_pred.json"},
                                  {"cloud", "scene/reconstruction.ply"},
                                  {"camera", {{"fx", 11.25}, {"fy", 11.25}, {"cx", 5.5}, {"cy", 5.5},
                                              {"width", 12}, {"height", 12}}},
                                  {"out_ply", "out/nbi.ply"},
                                  {"out_summary", "out/nbi.json"}});
    const std::string c = " -c " + dir.string() + "/";
    for (const std::string& step : {"gen" + c + "gen.json", "train" + c + "t1.json", "train" + c + "t2.json",
                                    "eval" + c + "e.json", "eval" + c + "cv.json", "scene" + c + "scene.json",
                                    "reconstruct" + c + "scene/reconstruct.json", "overlay" + c + "nbi.json"}) {
        failures += run_cli(step) != 0;
    }
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), dir).string(), file_bytes(e.path()));
    }
    std::sort(files.begin(), files.end());
    return files;
}

Outcome criterion_reproducibility() {
    Outcome o;
    const fs::path base = fs::temp_directory_path() / "ssr_acceptance_cli";
    int failures = 0;
    const auto a = cli_chain(base / "a", failures);
    const auto b = cli_chain(base / "b", failures);
    o.check(failures == 0, "command exit status");
    std::size_t differing = 0;
    std::string first;
    o.check(a.size() == b.size(), "file sets");
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        if (a[i] != b[i]) {
            if (first.empty()) first = a[i].first;
            ++differing;
        }
    }
    o.check(differing == 0, "bytes differ in " + first);
    o.detail << "gen, train x2, eval (single, cv), scene, reconstruct, overlay run twice: " << a.size()
             << " output files, " << differing << " differ, " << failures << " nonzero exits";
    fs::remove_all(base);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only, known_red;
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        const int n = std::atoi(argv[i + 1]);
        if (flag == "--only") {
            only.insert(n);
        } else if (flag == "--known-red") {
            known_red.insert(n);
        } else {
            std::cerr << "usage: acceptance [--only N]... [--known-red N]...\n";
            return 2;
        }
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", criterion_gradients},
        {"model-1 capacity", criterion_capacity},
        {"model-2 beats model-1 across folds", criterion_model2_superiority},
        {"two-stage protocol", criterion_two_stage},
        {"PSNR semantics", criterion_psnr},
        {"data-construction identities", criterion_data_identities},
        {"two-view geometry", criterion_geometry},
        {"scale fusion", criterion_scale},
        {"unmixing round trip", criterion_unmixing},
        {"CLI reproducibility", criterion_reproducibility},
    };
    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].first
                  << "): " << o.detail.str() << (o.pass || !known_red.count(n) ? "" : " [known red]") << '\n'
                  << std::flush;
        unexpected += !o.pass && !known_red.count(n);
    }
    return unexpected == 0 ? 0 : 1;
}
