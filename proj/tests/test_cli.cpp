#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "ssr/cli.hpp"
#include "ssr/dataset.hpp"
#include "ssr/geometry.hpp"
#include "ssr/overlay.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssr;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("ssr_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write(const std::string& name, const json& j) const {
        const auto p = dir / name;
        fs::create_directories(p.parent_path());
        std::ofstream(p) << j.dump(2);
        return p;
    }

    int run(const std::string& command, const fs::path& config, std::vector<std::string> extra = {}) {
        std::vector<std::string> args{command, "--config", config.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        std::ostringstream out;
        log.str("");
        return cli::run(args, out, log);
    }

    json read_json(const fs::path& p) const {
        std::ifstream in(p);
        return json::parse(in);
    }

    std::string bytes(const fs::path& p) const {
        std::ifstream in(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), {}};
    }

    fs::path dir;
    std::ostringstream log;
};

json small_gen(const std::string& out_dir) {
    return {{"out_dir", out_dir}, {"n_stacks", 3}, {"width", 12}, {"height", 12}, {"seed", 5}};
}

}  // namespace

TEST_F(Cli, HelpExitsZero) {
    std::ostringstream out, err;
    EXPECT_EQ(cli::run({"--help"}, out, err), cli::kExitOk);
    EXPECT_NE(out.str().find("reconstruct"), std::string::npos);
}

TEST_F(Cli, MissingConfigOptionIsConfigExit) {
    std::ostringstream out, err;
    EXPECT_EQ(cli::run({"gen"}, out, err), cli::kExitConfig);
    EXPECT_EQ(cli::run({"nosuchcommand"}, out, err), cli::kExitConfig);
}

TEST_F(Cli, GenIsByteDeterministic) {
    ASSERT_EQ(run("gen", write("a.json", small_gen("a"))), 0);
    ASSERT_EQ(run("gen", write("b.json", small_gen("b"))), 0);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        const auto other = dir / "b" / e.path().filename();
        ASSERT_TRUE(fs::exists(other)) << other;
        EXPECT_EQ(bytes(e.path()), bytes(other)) << e.path().filename();
        ++compared;
    }
    EXPECT_GT(compared, 3u * 5u);
    EXPECT_EQ(data::load_dataset(dir / "a" / "manifest.json").size(), 3u);
}

TEST_F(Cli, GenRejectsBadDimensionsAndUnknownKeys) {
    auto g = small_gen("x");
    g["width"] = 2;
    EXPECT_EQ(run("gen", write("g.json", g)), cli::kExitConfig);
    g = small_gen("x");
    g["colour"] = "blue";
    EXPECT_EQ(run("gen", write("g.json", g)), cli::kExitConfig);
    EXPECT_NE(log.str().find("colour"), std::string::npos);
    g = small_gen("x");
    g["schema_version"] = 2;
    EXPECT_EQ(run("gen", write("g.json", g)), cli::kExitConfig);
}

TEST_F(Cli, OverrideReachesNestedKeys) {
    const auto cfg = write("g.json", small_gen("o"));
    ASSERT_EQ(run("gen", cfg, {"--set", "n_stacks=2", "--set", "synth.n_spots=5"}), 0);
    EXPECT_EQ(data::load_dataset(dir / "o" / "manifest.json").size(), 2u);
    EXPECT_EQ(read_json(dir / "o" / "manifest.json")["generator"]["synth"]["n_spots"], 5);
    EXPECT_EQ(run("gen", cfg, {"--set", "noequals"}), cli::kExitConfig);
}

TEST_F(Cli, TrainBothModelsThenEvaluate) {
    ASSERT_EQ(run("gen", write("g.json", small_gen("ds"))), 0);
    const json train = {{"max_epochs", 2}, {"batch_size", 64}};
    ASSERT_EQ(run("train", write("t1.json", {{"dataset", "ds/manifest.json"},
                                             {"model", 1},
                                             {"arch", {{"hidden_features", 4}}},
                                             {"train", train},
                                             {"out_params", "out/m1.json"},
                                             {"out_log", "out/m1.csv"},
                                             {"out_summary", "out/m1_summary.json"}})),
              0);
    EXPECT_EQ(read_json(dir / "out" / "m1_summary.json")["epochs_run"], 2);

    const auto t2 = write("t2.json", {{"dataset", "ds/manifest.json"},
                                      {"model", 2},
                                      {"train", train},
                                      {"out_params", "out/m2.json"}});
    EXPECT_EQ(run("train", t2), cli::kExitConfig);
    EXPECT_FALSE(fs::exists(dir / "out" / "m2.json"));
    ASSERT_EQ(run("train", t2, {"--init-model1", "out/m1.json"}), 0);

    ASSERT_EQ(run("eval", write("e.json", {{"params", "out/m2.json"},
                                           {"dataset", "ds/manifest.json"},
                                           {"psnr_mode", "standard"},
                                           {"out_report", "out/report.json"},
                                           {"out_predictions_dir", "out/pred"}})),
              0);
    const auto report = read_json(dir / "out" / "report.json");
    EXPECT_EQ(report["model"], "model2");
    EXPECT_EQ(report["per_stack"].size(), 3u);
    EXPECT_TRUE(fs::exists(dir / "out" / "pred" / "s0000_pred.json"));
}

TEST_F(Cli, TrainModel1WithModel2ParamsIsConfigError) {
    ASSERT_EQ(run("gen", write("g.json", small_gen("ds"))), 0);
    EXPECT_EQ(run("train", write("t.json", {{"dataset", "ds/manifest.json"},
                                            {"model", 1},
                                            {"init_model1", "m1.json"},
                                            {"out_params", "p.json"}})),
              cli::kExitConfig);
}

TEST_F(Cli, EvalWithoutGroundTruthIsDataError) {
    ASSERT_EQ(run("gen", write("g.json", small_gen("ds"))), 0);
    ASSERT_EQ(run("train", write("t.json", {{"dataset", "ds/manifest.json"},
                                            {"model", 1},
                                            {"arch", {{"hidden_features", 4}}},
                                            {"train", {{"max_epochs", 1}}},
                                            {"out_params", "m1.json"}})),
              0);
    auto manifest = read_json(dir / "ds" / "manifest.json");
    manifest["samples"][1].erase("hsi");
    write("ds/manifest_nogt.json", manifest);
    EXPECT_EQ(run("eval", write("e.json", {{"params", "m1.json"},
                                           {"dataset", "ds/manifest_nogt.json"},
                                           {"out_report", "r.json"}})),
              cli::kExitData);
    EXPECT_FALSE(fs::exists(dir / "r.json"));
}

TEST_F(Cli, MissingDatasetFileIsDataError) {
    EXPECT_EQ(run("eval", write("e.json", {{"params", "m1.json"},
                                           {"dataset", "nowhere/manifest.json"},
                                           {"out_report", "r.json"}})),
              cli::kExitData);
}

TEST_F(Cli, SceneBundleReconstructsWithMetricScale) {
    ASSERT_EQ(run("scene", write("s.json", {{"out_dir", "bundle"}})), 0);
    const auto cfg = dir / "bundle" / "reconstruct.json";
    ASSERT_EQ(run("reconstruct", cfg), 0);
    const auto m = read_json(dir / "bundle" / "metrics.json");
    EXPECT_EQ(m["status"], "ok");
    EXPECT_EQ(m["mode"], "fused");
    EXPECT_EQ(m["scale_status"], "metric");
    const auto motion = read_json(dir / "bundle" / "motion.json");
    const auto t = motion["translation_mm"].get<std::vector<double>>();
    const double true_norm = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
    EXPECT_NEAR(m["scale"]["s"].get<double>(), true_norm, 0.02 * true_norm);
    const auto cloud = geom::load_ply(dir / "bundle" / "reconstruction.ply");
    EXPECT_EQ(cloud.size(), m["fused_points"].get<std::size_t>());
}

TEST_F(Cli, ReconstructWithoutSecondViewIsStructuredLightOnly) {
    ASSERT_EQ(run("scene", write("s.json", {{"out_dir", "bundle"}})), 0);
    ASSERT_EQ(run("reconstruct", dir / "bundle" / "reconstruct.json", {"--set", "frames=null"}), 0);
    const auto m = read_json(dir / "bundle" / "metrics.json");
    EXPECT_EQ(m["mode"], "sl_only");
    EXPECT_TRUE(m["sl_only"].get<bool>());
}

TEST_F(Cli, TooFewCorrespondencesWritesFailureReport) {
    ASSERT_EQ(run("scene", write("s.json", {{"out_dir", "bundle"}, {"pairs", 4}})), 0);
    const int rc = run("reconstruct", dir / "bundle" / "reconstruct.json");
    EXPECT_TRUE(rc == cli::kExitData || rc == cli::kExitNumerical) << rc;
    const auto m = read_json(dir / "bundle" / "metrics.json");
    EXPECT_EQ(m["status"], "failed");
    EXPECT_EQ(m["correspondences"]["total"], 4);
    EXPECT_TRUE(m["insufficient"].get<bool>());
    EXPECT_FALSE(fs::exists(dir / "bundle" / "reconstruction.ply"));
}

TEST_F(Cli, ReconstructRejectsFramesAndCorrespondencesTogether) {
    ASSERT_EQ(run("scene", write("s.json", {{"out_dir", "bundle"}})), 0);
    EXPECT_EQ(run("reconstruct", dir / "bundle" / "reconstruct.json",
                  {"--set", "correspondences=pairs.csv"}),
              cli::kExitConfig);
    EXPECT_EQ(run("reconstruct", dir / "bundle" / "reconstruct.json", {"--set", "triangulation=dlt"}),
              cli::kExitConfig);
}

namespace {

// 8x6 camera looking down +z; one point per pixel centre (integer coordinates) on z = 20,
// plus one point behind the camera.
struct OverlayFixture {
    json camera = {{"fx", 8.0}, {"fy", 8.0}, {"cx", 4.0}, {"cy", 3.0}, {"width", 8}, {"height", 6}};
    geom::PointCloud cloud;

    OverlayFixture() {
        for (int v = 0; v < 6; ++v)
            for (int u = 0; u < 8; ++u) {
                const double z = 20.0;
                cloud.push({(u - 4.0) * z / 8.0, (v - 3.0) * z / 8.0, z},
                           geom::PointSource::sfm, v * 8 + u);
            }
        cloud.push({0.0, 0.0, -5.0}, geom::PointSource::sfm, 99);
    }
};

overlay::ExtinctionTable table() {
    overlay::ExtinctionTable t;
    for (double nm = 440.0; nm <= 700.0; nm += 10.0) {
        t.wavelengths_nm.push_back(nm);
        t.eps_hbo2.push_back(200.0 + 900.0 * std::exp(-std::pow((nm - 542.0) / 18.0, 2)));
        t.eps_hb.push_back(300.0 + 1100.0 * std::exp(-std::pow((nm - 556.0) / 22.0, 2)));
    }
    return t;
}

}  // namespace

TEST_F(Cli, OxygenSaturationOverlayRecoversUniformTissue) {
    const OverlayFixture f;
    geom::save_ply(f.cloud, dir / "cloud.ply");
    const auto t = table();
    overlay::save_extinction_csv(t, dir / "ext.csv");
    // Forward model: I = I0 exp(-(c1 eps_hbo2 + c2 eps_hb + c3)), saturation c1 / (c1 + c2) = 0.7.
    const auto grid = data::default_band_grid();
    const auto eps = t.resample(grid);
    data::SpectralStack msi(8, 6, grid);
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double a = 7e-4 * eps[0][c] + 3e-4 * eps[1][c] + 0.05;
        for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t x = 0; x < 8; ++x) msi.set(c, y, x, static_cast<float>(240.0 * std::exp(-a)));
    }
    data::save_stack(msi, dir / "msi.json");
    json cfg = {{"kind", "sao2"},       {"msi", "msi.json"},        {"cloud", "cloud.ply"},
                {"camera", f.camera},   {"extinction_csv", "ext.csv"}, {"i0", 240.0},
                {"out_ply", "o.ply"},   {"out_map", "sao2.json"},   {"out_summary", "summary.json"}};
    ASSERT_EQ(run("overlay", write("o.json", cfg)), 0);
    const auto s = read_json(dir / "summary.json");
    EXPECT_EQ(s["defined_pixels"], 48);
    EXPECT_NEAR(s["mean"].get<double>(), 0.7, 1e-3);
    EXPECT_EQ(s["points"], 49);
    EXPECT_EQ(s["points_with_data"], 48);
    const auto draped = geom::load_ply(dir / "o.ply");
    ASSERT_EQ(draped.values.size(), 49u);
    EXPECT_NEAR(draped.values[10], 0.7, 1e-3);
    EXPECT_TRUE(std::isnan(draped.values[48]));

    cfg.erase("extinction_csv");
    EXPECT_EQ(run("overlay", write("o.json", cfg)), cli::kExitConfig);
    cfg["extinction_csv"] = "ext.csv";
    cfg["bands_nm"] = {415.0};
    EXPECT_EQ(run("overlay", write("o.json", cfg)), cli::kExitConfig);
}

TEST_F(Cli, NarrowBandOverlayWarnsOnSubstitution) {
    const OverlayFixture f;
    geom::save_ply(f.cloud, dir / "cloud.ply");
    data::SpectralStack msi(8, 6, data::default_band_grid());
    for (std::size_t c = 0; c < msi.channels(); ++c)
        for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t x = 0; x < 8; ++x) msi.set(c, y, x, static_cast<float>(c * 10));
    data::save_stack(msi, dir / "msi.json");
    ASSERT_EQ(run("overlay", write("o.json", {{"kind", "nbi"},
                                              {"msi", "msi.json"},
                                              {"cloud", "cloud.ply"},
                                              {"camera", f.camera},
                                              {"out_ply", "nbi.ply"},
                                              {"out_stack", "nbi_stack.json"},
                                              {"out_summary", "summary.json"}})),
              0);
    EXPECT_NE(log.str().find("warning"), std::string::npos);
    const auto s = read_json(dir / "summary.json");
    EXPECT_TRUE(s["bands"][0]["substituted"].get<bool>());
    EXPECT_EQ(s["bands"][1]["band_nm"], 540.0);
    const auto draped = geom::load_ply(dir / "nbi.ply");
    ASSERT_EQ(draped.colors.size(), 49u);
    // Two bands: red carries 540 nm (band 8 -> 80), green and blue carry 460 nm (band 0 -> 0).
    EXPECT_EQ(draped.colors[0][0], 80);
    EXPECT_EQ(draped.colors[0][1], 0);
    EXPECT_EQ(data::load_stack(dir / "nbi_stack.json").channels(), 2u);

    EXPECT_EQ(run("overlay", write("bad.json", {{"kind", "nbi"},
                                                {"msi", "msi.json"},
                                                {"cloud", "cloud.ply"},
                                                {"camera", f.camera},
                                                {"i0", 255.0},
                                                {"out_ply", "nbi.ply"}})),
              cli::kExitConfig);
}
