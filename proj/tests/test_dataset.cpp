#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "ssr/dataset.hpp"
#include "ssr/errors.hpp"

using namespace ssr;
using namespace ssr::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ssr_test_dataset";
    fs::create_directories(dir);
    return dir / name;
}

SpectralStack random_stack(std::size_t w, std::size_t h, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 255.0f);
    std::vector<double> wl(c);
    for (std::size_t i = 0; i < c; ++i) wl[i] = 460.0 + 10.0 * static_cast<double>(i);
    std::vector<float> v(w * h * c);
    for (float& x : v) x = d(rng);
    return SpectralStack(w, h, wl, std::move(v));
}

// Per-pixel dot product in the same accumulation order as the documented formula.
std::array<float, 3> rgb_oracle(const SpectralStack& H, const CameraResponse& h, std::size_t y,
                                std::size_t x) {
    std::array<float, 3> out{};
    for (std::size_t k = 0; k < 3; ++k) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < H.channels(); ++c) {
            acc += static_cast<float>(h.rows[k][c]) * H.at(c, y, x);
        }
        out[k] = std::clamp(acc, 0.0f, 255.0f);
    }
    return out;
}

}  // namespace

TEST(Stack, ClampsAndValidates) {
    SpectralStack s(2, 1, {500.0, 510.0}, {-3.0f, 300.0f, 10.0f, 20.0f});
    EXPECT_EQ(s.at(0, 0, 0), 0.0f);
    EXPECT_EQ(s.at(0, 0, 1), 255.0f);
    EXPECT_THROW(SpectralStack(1, 1, {500.0, 500.0}), DataError);
    EXPECT_THROW(SpectralStack(1, 1, {510.0, 500.0}), DataError);
    EXPECT_THROW(SpectralStack(1, 1, {500.0}, {std::nanf("")}), DataError);
    EXPECT_THROW(SpectralStack(2, 2, {500.0}, {1.0f}), DataError);
}

TEST(Stack, RoundTripIsBitIdentical) {
    const auto s = random_stack(7, 5, 24, 1);
    const auto path = scratch("rt.json");
    save_stack(s, path);
    EXPECT_EQ(load_stack(path), s);

    ScalarMap m(3, 4);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = -1.5f * static_cast<float>(i);
    save_map(m, scratch("map.json"));
    EXPECT_EQ(load_map(scratch("map.json")), m);
}

TEST(Stack, PayloadSizeMismatchRejected) {
    const auto s = random_stack(4, 4, 24, 2);
    const auto path = scratch("short.json");
    save_stack(s, path);
    fs::resize_file(scratch("short.raw"), 4 * 4 * 23 * sizeof(float));
    EXPECT_THROW(load_stack(path), DataError);
}

TEST(Stack, NonMonotoneWavelengthsInHeaderRejected) {
    const auto path = scratch("mono.json");
    save_stack(SpectralStack(1, 1, {500.0, 510.0}, {1.0f, 2.0f}), path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    in.close();
    const auto pos = text.find("510");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 3, "500");
    std::ofstream(path) << text;
    EXPECT_THROW(load_stack(path), DataError);
}

TEST(CameraResponseTest, NormalizeAndCsvRoundTrip) {
    auto h = default_camera_response(default_band_grid());
    for (const auto& row : h.rows) {
        double sum = 0.0;
        for (double w : row) {
            EXPECT_GE(w, 0.0);
            sum += w;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    save_camera_response_csv(h, scratch("h.csv"));
    const auto back = load_camera_response_csv(scratch("h.csv"));
    EXPECT_EQ(back.wavelengths_nm, h.wavelengths_nm);
    // loading renormalizes, so allow last-ulp drift
    for (int k = 0; k < 3; ++k) {
        for (std::size_t c = 0; c < h.bands(); ++c) EXPECT_NEAR(back.rows[k][c], h.rows[k][c], 1e-15);
    }

    CameraResponse bad = h;
    bad.rows[1][0] = -0.1;
    EXPECT_THROW(bad.normalize(), DataError);
}

TEST(SynthesizeRgb, ConstantStackGivesConstantRgb) {
    const auto grid = default_band_grid();
    SpectralStack H(4, 3, grid, std::vector<float>(4 * 3 * grid.size(), 100.0f));
    const auto R = synthesize_rgb(H, default_camera_response(grid));
    ASSERT_EQ(R.channels(), 3u);
    for (float v : R.values()) EXPECT_NEAR(v, 100.0f, 1e-4f);
}

TEST(SynthesizeRgb, SelectorMatrixPicksBands) {
    const auto H = random_stack(5, 4, 24, 3);
    CameraResponse h;
    h.wavelengths_nm = H.wavelengths_nm();
    const std::size_t pick[3] = {17, 8, 2};  // R, G, B
    for (int k = 0; k < 3; ++k) {
        h.rows[k].assign(24, 0.0);
        h.rows[k][pick[k]] = 1.0;
    }
    const auto R = synthesize_rgb(H, h);
    // output order is B, G, R
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
            EXPECT_EQ(R.at(0, y, x), H.at(pick[2], y, x));
            EXPECT_EQ(R.at(1, y, x), H.at(pick[1], y, x));
            EXPECT_EQ(R.at(2, y, x), H.at(pick[0], y, x));
        }
    }
}

TEST(SynthesizeRgb, MatchesNestedLoopOracleExactly) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const auto H = random_stack(6, 5, 24, 10 + trial);
        CameraResponse h;
        h.wavelengths_nm = H.wavelengths_nm();
        for (auto& row : h.rows) {
            row.resize(24);
            for (double& w : row) w = u(rng);
        }
        h.normalize();
        const auto R = synthesize_rgb(H, h);
        for (std::size_t y = 0; y < 5; ++y) {
            for (std::size_t x = 0; x < 6; ++x) {
                const auto o = rgb_oracle(H, h, y, x);
                EXPECT_EQ(R.at(2, y, x), o[0]);
                EXPECT_EQ(R.at(1, y, x), o[1]);
                EXPECT_EQ(R.at(0, y, x), o[2]);
            }
        }
    }
    CameraResponse short_h = default_camera_response(std::vector<double>{500.0, 510.0});
    EXPECT_THROW(synthesize_rgb(random_stack(2, 2, 24, 1), short_h), DataError);
}

TEST(Density, SpotCentreIsOneAndComplementSumsToOne) {
    SpotSet spots({{0, 10.0, 10.0, 500.0}}, 20, 20);
    const auto d = make_density_map(spots, 1.7, 20, 20);
    EXPECT_EQ(d.at(10, 10), 1.0f);
    const auto rgb = d.complement();
    for (std::size_t i = 0; i < d.map.values.size(); ++i) {
        EXPECT_EQ(d.map.values[i] + rgb.map.values[i], 1.0f);
        EXPECT_GE(d.map.values[i], 0.0f);
        EXPECT_LE(d.map.values[i], 1.0f);
    }
}

TEST(Density, NoSpotsGivesZeroAndOne) {
    const auto d = make_density_map(SpotSet({}, 8, 8), 2.0, 8, 8);
    for (float v : d.map.values) EXPECT_EQ(v, 0.0f);
    for (float v : d.complement().map.values) EXPECT_EQ(v, 1.0f);
}

TEST(Density, TwoSpotsCombineByMax) {
    SpotSet spots({{0, 4.0, 5.0, 500.0}, {1, 5.0, 5.0, 510.0}}, 10, 10);
    const auto d = make_density_map(spots, 2.0, 10, 10);
    EXPECT_EQ(d.at(5, 4), 1.0f);
    EXPECT_EQ(d.at(5, 5), 1.0f);
    // neighbour at x=6 is 1 px from spot 1 and 2 px from spot 0
    EXPECT_NEAR(d.at(5, 6), std::exp(-1.0 / 8.0), 1e-7);
    // subpixel midpoint: 0.5 px from both
    SpotSet mid({{0, 3.5, 5.0, 500.0}, {1, 4.5, 5.0, 510.0}}, 10, 10);
    const auto dm = make_density_map(mid, 2.0, 10, 10);
    EXPECT_NEAR(dm.at(5, 4), std::exp(-0.25 / 8.0), 1e-7);
    EXPECT_THROW(make_density_map(spots, 0.0, 10, 10), DataError);
}

TEST(Spots, ValidationAndCsv) {
    EXPECT_THROW(SpotSet({{0, 10.0, 1.0, 500.0}}, 10, 10), DataError);
    EXPECT_THROW(SpotSet({{0, 1.0, 1.0, 500.0}, {0, 2.0, 2.0, 510.0}}, 10, 10), DataError);
    SpotSet s({{3, 1.25, 2.5, 500.0}, {7, 8.0, 0.0, 620.5}}, 10, 10);
    save_spots_csv(s, scratch("spots.csv"));
    EXPECT_EQ(load_spots_csv(scratch("spots.csv"), 10, 10), s);
}

TEST(Sparse, EqualsProductOracleAndSupport) {
    const auto H = random_stack(16, 16, 24, 5);
    SpotSet spots({{0, 4.0, 4.0, 500.0}, {1, 12.0, 11.0, 510.0}}, 16, 16);
    const auto d = make_density_map(spots, 2.0, 16, 16);
    const double thr = 0.05;
    const auto Hs = make_sparse_stack(H, d, thr);
    for (std::size_t c = 0; c < 24; ++c) {
        EXPECT_EQ(Hs.at(c, 4, 4), H.at(c, 4, 4));
        EXPECT_EQ(Hs.at(c, 11, 12), H.at(c, 11, 12));
        EXPECT_EQ(Hs.at(c, 15, 0), 0.0f);
        for (std::size_t y = 0; y < 16; ++y) {
            for (std::size_t x = 0; x < 16; ++x) {
                const float dv = d.at(y, x);
                const float expect = dv < thr ? 0.0f : dv * H.at(c, y, x);
                EXPECT_EQ(Hs.at(c, y, x), expect);
                EXPECT_LE(Hs.at(c, y, x), H.at(c, y, x));
            }
        }
    }
    EXPECT_THROW(make_sparse_stack(H, make_density_map(SpotSet({}, 8, 8), 2.0, 8, 8), thr),
                 DataError);
}

TEST(Augment, FlipIsInvolutionAndSpectraPreserved) {
    const auto s = random_stack(6, 4, 5, 6);
    for (auto kind : {TransformKind::flip_h, TransformKind::flip_v, TransformKind::rot180}) {
        EXPECT_EQ(apply_transform(apply_transform(s, {kind}), {kind}), s);
    }
    auto r = s;
    for (int i = 0; i < 4; ++i) r = apply_transform(r, {TransformKind::rot90});
    EXPECT_EQ(r, s);
    EXPECT_EQ(apply_transform(apply_transform(s, {TransformKind::rot90}), {TransformKind::rot270}), s);

    auto spectra = [](const SpectralStack& st) {
        std::multiset<std::vector<float>> out;
        for (std::size_t y = 0; y < st.height(); ++y) {
            for (std::size_t x = 0; x < st.width(); ++x) {
                std::vector<float> v;
                for (std::size_t c = 0; c < st.channels(); ++c) v.push_back(st.at(c, y, x));
                out.insert(v);
            }
        }
        return out;
    };
    for (const auto& a : augment(s, 1, {true, true, 0, 0, 0})) {
        EXPECT_EQ(spectra(a), spectra(s));
    }
}

TEST(Augment, CropDimsAndOversizeRejected) {
    const auto s = random_stack(64, 64, 3, 7);
    AugmentOptions o{false, false, 3, 32, 32};
    const auto out = augment(s, 9, o);
    ASSERT_EQ(out.size(), 3u);
    for (const auto& c : out) {
        EXPECT_EQ(c.width(), 32u);
        EXPECT_EQ(c.height(), 32u);
        EXPECT_EQ(c.channels(), 3u);
    }
    EXPECT_EQ(augment(s, 9, o), out);
    EXPECT_THROW(augment(s, 9, {false, false, 1, 65, 10}), DataError);
}

TEST(Augment, SampleSpotsFollowTheTransform) {
    const auto data = generate_synthetic_dataset(1, 12, 9, 3);
    const auto& smp = data[0];
    for (auto kind : {TransformKind::flip_h, TransformKind::flip_v, TransformKind::rot90,
                      TransformKind::rot180, TransformKind::rot270}) {
        const auto t = apply_transform(smp, {kind});
        ASSERT_EQ(t.spots.size(), smp.spots.size());
        for (const auto& sp : t.spots.spots()) {
            const auto y = static_cast<std::size_t>(sp.v), x = static_cast<std::size_t>(sp.u);
            EXPECT_EQ(t.d_hsi.at(y, x), 1.0f);
        }
    }
}

TEST(Folds, SizesPartitionAndLeaveOneOut) {
    std::vector<std::string> ids;
    for (int i = 0; i < 243; ++i) ids.push_back("id" + std::to_string(i));
    const auto folds = split_folds(ids, 5, 42);
    ASSERT_EQ(folds.size(), 5u);
    const std::size_t expect[] = {49, 49, 49, 48, 48};
    std::set<std::string> seen;
    for (std::size_t f = 0; f < 5; ++f) {
        EXPECT_EQ(folds[f].test_ids.size(), expect[f]);
        EXPECT_EQ(folds[f].train_ids.size() + folds[f].test_ids.size(), 243u);
        for (const auto& id : folds[f].test_ids) EXPECT_TRUE(seen.insert(id).second) << id;
        std::set<std::string> train(folds[f].train_ids.begin(), folds[f].train_ids.end());
        for (const auto& id : folds[f].test_ids) EXPECT_EQ(train.count(id), 0u);
    }
    EXPECT_EQ(seen.size(), 243u);

    const auto loo = split_folds(std::vector<std::string>(ids.begin(), ids.begin() + 7), 7, 1);
    for (const auto& f : loo) EXPECT_EQ(f.test_ids.size(), 1u);
    EXPECT_THROW(split_folds(ids, 0, 1), DataError);
    EXPECT_THROW(split_folds(ids, 244, 1), DataError);
}

TEST(Generator, DeterministicBoundedSmoothAndConsistent) {
    SynthOptions opts;
    const auto a = generate_synthetic_dataset(3, 16, 12, 77, opts);
    const auto b = generate_synthetic_dataset(3, 16, 12, 77, opts);
    ASSERT_EQ(a.size(), 3u);
    const auto h = default_camera_response(opts.wavelengths_nm);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(a[i].hsi, b[i].hsi);
        EXPECT_EQ(a[i].sparse, b[i].sparse);
        EXPECT_EQ(a[i].spots, b[i].spots);
        const auto& H = a[i].hsi;
        EXPECT_EQ(H.channels(), 24u);
        for (float v : H.values()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 255.0f);
        }
        for (std::size_t y = 0; y < H.height(); ++y) {
            for (std::size_t x = 0; x < H.width(); ++x) {
                for (std::size_t c = 0; c + 1 < H.channels(); ++c) {
                    EXPECT_LE(std::abs(H.at(c + 1, y, x) - H.at(c, y, x)), opts.max_band_step);
                }
            }
        }
        EXPECT_EQ(synthesize_rgb(H, h), a[i].rgb);
        EXPECT_EQ(make_sparse_stack(H, a[i].d_hsi, opts.threshold), a[i].sparse);
    }
    EXPECT_NE(generate_synthetic_dataset(1, 16, 12, 78, opts)[0].hsi, a[0].hsi);
}

TEST(DatasetDir, SaveLoadRoundTrip) {
    const auto data = generate_synthetic_dataset(3, 10, 8, 21);
    const fs::path dir = fs::temp_directory_path() / "ssr_test_dataset_dir";
    fs::remove_all(dir);
    save_dataset(data, dir, R"({"seed": 21})");
    const auto back = load_dataset(dir / "manifest.json");
    ASSERT_EQ(back.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(back[i].id, data[i].id);
        EXPECT_EQ(back[i].hsi, data[i].hsi);
        EXPECT_EQ(back[i].rgb, data[i].rgb);
        EXPECT_EQ(back[i].sparse, data[i].sparse);
        EXPECT_EQ(back[i].d_hsi, data[i].d_hsi);
        EXPECT_EQ(back[i].spots, data[i].spots);
    }
    fs::remove_all(dir);
}

TEST(DatasetDir, MissingGroundTruthRejectedWhenRequired) {
    const auto data = generate_synthetic_dataset(1, 8, 8, 2);
    const fs::path dir = fs::temp_directory_path() / "ssr_test_dataset_nogt";
    fs::remove_all(dir);
    save_dataset(data, dir);
    std::string text;
    {
        std::ifstream in(dir / "manifest.json");
        text.assign(std::istreambuf_iterator<char>(in), {});
    }
    const auto pos = text.find("\"hsi\"");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 5, "\"gt_\"");
    {
        std::ofstream out(dir / "manifest.json");
        out << text;
    }
    EXPECT_THROW(load_dataset(dir / "manifest.json"), DataError);
    const auto loose = load_dataset(dir / "manifest.json", false);
    ASSERT_EQ(loose.size(), 1u);
    EXPECT_EQ(loose[0].hsi.channels(), 0u);
    fs::remove_all(dir);
}
