#include <cmath>
#include <optional>
#include <ostream>

#include "config_util.hpp"
#include "ssr/dataset.hpp"
#include "ssr/models.hpp"
#include "ssr/training.hpp"

namespace ssr::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::Section;

namespace {

data::SynthOptions parse_synth(const Config& cfg, const json& j, json& resolved) {
    const Section s(j, "gen.synth",
                    {"wavelengths_nm", "species_seed", "library_size", "min_endmembers",
                     "max_endmembers", "n_spots", "sigma_px", "threshold", "max_band_step",
                     "camera_response_csv"});
    data::SynthOptions o;
    o.wavelengths_nm = s.get("wavelengths_nm", o.wavelengths_nm);
    o.species_seed = s.get("species_seed", o.species_seed);
    o.library_size = s.get("library_size", o.library_size);
    o.min_endmembers = s.get("min_endmembers", o.min_endmembers);
    o.max_endmembers = s.get("max_endmembers", o.max_endmembers);
    o.n_spots = s.get("n_spots", o.n_spots);
    o.sigma_px = s.get("sigma_px", o.sigma_px);
    o.threshold = s.get("threshold", o.threshold);
    o.max_band_step = s.get("max_band_step", o.max_band_step);
    resolved = {{"wavelengths_nm", o.wavelengths_nm}, {"species_seed", o.species_seed},
                {"library_size", o.library_size},     {"min_endmembers", o.min_endmembers},
                {"max_endmembers", o.max_endmembers}, {"n_spots", o.n_spots},
                {"sigma_px", o.sigma_px},             {"threshold", o.threshold},
                {"max_band_step", o.max_band_step},   {"camera_response_csv", nullptr}};
    if (s.has("camera_response_csv")) {
        const auto name = s.require<std::string>("camera_response_csv");
        o.use_custom_response = true;
        o.response = data::load_camera_response_csv(detail::resolve(cfg, name));
        resolved["camera_response_csv"] = name;
    }
    return o;
}

models::ArchConfig parse_arch(const json& j, const data::SpectralStack& like, const std::string& where) {
    if (j.contains("upscale_layers")) {
        auto a = models::ArchConfig::from_json(j);
        a.validate();
        return a;
    }
    const Section s(j, where, {"hidden_features", "merge_kernel", "merge_density"});
    auto a = models::ArchConfig::defaults(static_cast<int>(like.channels()),
                                          s.get("hidden_features", 32), like.wavelengths_nm());
    a.merge_kernel = s.get("merge_kernel", a.merge_kernel);
    const auto md = s.get<std::string>("merge_density", "d_hsi");
    if (md == "d_hsi") {
        a.merge_density = models::MergeDensity::hsi;
    } else if (md == "d_rgb") {
        a.merge_density = models::MergeDensity::rgb;
    } else {
        throw ConfigError(where + ".merge_density must be 'd_hsi' or 'd_rgb'");
    }
    a.validate();
    return a;
}

std::vector<data::Sample> load_nonempty(const fs::path& manifest) {
    auto samples = data::load_dataset(manifest);
    if (samples.empty()) throw DataError(manifest.string() + " lists no samples");
    return samples;
}

}  // namespace

int cmd_gen(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "gen",
                      {"schema_version", "out_dir", "n_stacks", "width", "height", "seed", "synth"});
    detail::schema_version(top);
    const auto out_dir = top.require<std::string>("out_dir");
    const auto n = top.get<long long>("n_stacks", 10);
    const auto width = top.get<long long>("width", 32);
    const auto height = top.get<long long>("height", 32);
    const auto seed = top.get<std::uint64_t>("seed", 1);
    if (n < 1) throw ConfigError("gen.n_stacks must be >= 1");
    if (width < 3 || height < 3) throw ConfigError("gen.width and gen.height must be >= 3");
    json synth_resolved;
    const auto opts = parse_synth(cfg, top.object("synth"), synth_resolved);
    json generator = {{"n_stacks", n}, {"width", width}, {"height", height}, {"seed", seed},
                      {"synth", synth_resolved}};
    json resolved = generator;
    resolved["schema_version"] = 1;
    resolved["out_dir"] = out_dir;
    detail::log_resolved(log, "gen", resolved);

    const auto samples = data::generate_synthetic_dataset(
        static_cast<std::size_t>(n), static_cast<std::size_t>(width), static_cast<std::size_t>(height),
        seed, opts);
    const auto dir = detail::resolve(cfg, out_dir);
    data::save_dataset(samples, dir, generator.dump());
    log << "[ssr gen] wrote " << samples.size() << " stacks and " << (dir / "manifest.json").string()
        << '\n';
    return kExitOk;
}

int cmd_train(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "train",
                      {"schema_version", "dataset", "model", "arch", "init_model1", "train",
                       "out_params", "out_log", "out_summary"});
    detail::schema_version(top);
    const int model = top.require<int>("model");
    if (model != 1 && model != 2) throw ConfigError("train.model must be 1 or 2");
    const auto dataset = top.require<std::string>("dataset");
    const auto out_params = top.require<std::string>("out_params");
    const auto tc = train::TrainConfig::from_json(top.object("train"));
    tc.validate();
    if (model == 2) {
        if (!top.has("init_model1")) {
            throw ConfigError("model 2 requires init_model1: the trained Model-1 parameters (--init-model1)");
        }
        if (top.has("arch")) throw ConfigError("model 2 takes its architecture from init_model1");
    } else if (top.has("init_model1")) {
        throw ConfigError("init_model1 applies to model 2 only");
    }

    const auto samples = load_nonempty(detail::resolve(cfg, dataset));
    json resolved = {{"schema_version", 1}, {"dataset", dataset}, {"model", model},
                     {"train", tc.to_json()}, {"out_params", out_params},
                     {"out_log", top.get<std::string>("out_log", "")},
                     {"out_summary", top.get<std::string>("out_summary", "")}};

    train::TrainResult result;
    json summary = {{"model", model}};
    if (model == 1) {
        const auto arch = parse_arch(top.object("arch"), samples.front().hsi, "train.arch");
        resolved["arch"] = arch.to_json();
        detail::log_resolved(log, "train", resolved);
        result = train::train_model1(samples, arch, tc);
    } else {
        const auto init_name = top.require<std::string>("init_model1");
        resolved["init_model1"] = init_name;
        const auto init = models::load_params(detail::resolve(cfg, init_name));
        if (init.arch != models::ArchId::model1) {
            throw ConfigError(init_name + " holds " + models::to_string(init.arch) +
                              " parameters, expected model1");
        }
        resolved["arch"] = init.config.to_json();
        detail::log_resolved(log, "train", resolved);
        auto r2 = train::train_model2(samples, init, tc);
        summary["stage_a_loss"] = r2.stage_a_loss;
        summary["stage_b_loss"] = r2.stage_b_loss;
        result = std::move(r2);
    }
    summary["epochs_run"] = result.epochs_run;
    summary["final_loss"] = std::isfinite(result.final_loss) ? json(result.final_loss) : json(nullptr);
    summary["diverged"] = result.diverged;
    summary["incident"] = result.incident;
    summary["parameter_count"] = result.params.parameter_count();

    if (top.has("out_log")) {
        const auto p = detail::resolve(cfg, top.require<std::string>("out_log"));
        detail::prepare_output(p);
        train::write_training_log(result.log, p);
    }
    if (top.has("out_summary")) {
        detail::write_json(detail::resolve(cfg, top.require<std::string>("out_summary")), summary);
    }
    if (result.diverged) throw NumericalError("training diverged: " + result.incident);
    const auto params_path = detail::resolve(cfg, out_params);
    detail::prepare_output(params_path);
    models::save_params(result.params, params_path);
    log << "[ssr train] model " << model << ": " << result.epochs_run << " epochs, final loss "
        << result.final_loss << '\n';
    return kExitOk;
}

namespace {

int eval_single(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "eval",
                      {"schema_version", "mode", "params", "dataset", "psnr_mode",
                       "saturation_threshold", "out_report", "out_maps_dir", "out_predictions_dir"});
    const auto params_name = top.require<std::string>("params");
    const auto dataset = top.require<std::string>("dataset");
    const auto out_report = top.require<std::string>("out_report");
    const auto mode = train::psnr_mode_from_string(top.get<std::string>("psnr_mode", "amplitude"));
    const double threshold = top.get("saturation_threshold", 250.0);
    const json resolved = {{"schema_version", 1},
                           {"mode", "single"},
                           {"params", params_name},
                           {"dataset", dataset},
                           {"psnr_mode", train::to_string(mode)},
                           {"saturation_threshold", threshold},
                           {"out_report", out_report},
                           {"out_maps_dir", top.get<std::string>("out_maps_dir", "")},
                           {"out_predictions_dir", top.get<std::string>("out_predictions_dir", "")}};
    detail::log_resolved(log, "eval", resolved);

    const auto params = models::load_params(detail::resolve(cfg, params_name));
    const auto samples = load_nonempty(detail::resolve(cfg, dataset));
    std::optional<fs::path> pred_dir, maps_dir;
    if (top.has("out_predictions_dir")) {
        pred_dir = detail::resolve(cfg, top.require<std::string>("out_predictions_dir"));
        fs::create_directories(*pred_dir);
    }
    if (top.has("out_maps_dir")) {
        maps_dir = detail::resolve(cfg, top.require<std::string>("out_maps_dir"));
        fs::create_directories(*maps_dir);
    }
    const train::Predictor predict = [&](const data::Sample& s) {
        auto pred = params.arch == models::ArchId::model1
                        ? models::model1_predict(params, s.rgb)
                        : models::model2_predict(params, s.rgb, s.d_hsi, s.sparse);
        if (pred_dir) data::save_stack(pred, *pred_dir / (s.id + "_pred.json"));
        return pred;
    };
    const auto report = train::evaluate(predict, samples, mode, threshold, maps_dir.has_value());
    if (maps_dir) {
        for (std::size_t i = 0; i < report.psnr_maps.size(); ++i) {
            data::save_map(report.psnr_maps[i], *maps_dir / (report.stack_ids[i] + "_psnr.json"));
        }
    }
    json j = report.to_json();
    j["model"] = models::to_string(params.arch);
    j["config_digest"] = params.config_digest;
    detail::write_json(detail::resolve(cfg, out_report), j);
    log << "[ssr eval] " << samples.size() << " stacks, mean PSNR " << report.mean_psnr << " dB ("
        << train::to_string(mode) << ")\n";
    return kExitOk;
}

int eval_cv(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "eval",
                      {"schema_version", "mode", "dataset", "folds", "arch", "train", "out_report"});
    const auto dataset = top.require<std::string>("dataset");
    const auto out_report = top.require<std::string>("out_report");
    const int folds = top.get("folds", 5);
    const auto tc = train::TrainConfig::from_json(top.object("train"));
    tc.validate();
    const auto samples = load_nonempty(detail::resolve(cfg, dataset));
    const auto arch = parse_arch(top.object("arch"), samples.front().hsi, "eval.arch");
    detail::log_resolved(log, "eval",
                         {{"schema_version", 1}, {"mode", "cv"}, {"dataset", dataset},
                          {"folds", folds}, {"arch", arch.to_json()}, {"train", tc.to_json()},
                          {"out_report", out_report}});
    const auto r = train::run_loocv(samples, folds, arch, tc);
    for (const auto& w : r.warnings) log << "[ssr eval] warning: " << w << '\n';
    detail::write_json(detail::resolve(cfg, out_report), r.to_json());
    std::size_t ok = 0;
    for (const auto& f : r.folds) ok += f.ok;
    if (ok == 0) throw NumericalError("every cross-validation fold failed");
    log << "[ssr eval] " << ok << "/" << r.folds.size() << " folds, mean PSNR model1 "
        << r.mean_psnr_model1 << " model2 " << r.mean_psnr_model2 << '\n';
    return kExitOk;
}

int eval_transfer(const Config& cfg, std::ostream& log) {
    const Section top(cfg.root, "eval",
                      {"schema_version", "mode", "datasets", "folds", "arch", "train", "out_report"});
    const auto out_report = top.require<std::string>("out_report");
    const int folds = top.get("folds", 5);
    const auto tc = train::TrainConfig::from_json(top.object("train"));
    tc.validate();
    const json& list = top.raw("datasets");
    if (!list.is_array() || list.empty()) throw ConfigError("eval.datasets must be a nonempty array");
    std::vector<train::NamedDataset> sets;
    json resolved_sets = json::array();
    for (const auto& item : list) {
        const Section s(item, "eval.datasets[]", {"name", "manifest"});
        const auto name = s.require<std::string>("name");
        const auto manifest = s.require<std::string>("manifest");
        sets.push_back({name, load_nonempty(detail::resolve(cfg, manifest))});
        resolved_sets.push_back({{"name", name}, {"manifest", manifest}});
    }
    const auto arch = parse_arch(top.object("arch"), sets.front().samples.front().hsi, "eval.arch");
    detail::log_resolved(log, "eval",
                         {{"schema_version", 1}, {"mode", "transfer"}, {"datasets", resolved_sets},
                          {"folds", folds}, {"arch", arch.to_json()}, {"train", tc.to_json()},
                          {"out_report", out_report}});
    const auto m = train::transfer_matrix(sets, folds, arch, tc);
    for (const auto& w : m.warnings) log << "[ssr eval] warning: " << w << '\n';
    detail::write_json(detail::resolve(cfg, out_report), m.to_json());
    log << "[ssr eval] transfer matrix " << m.sources.size() << "x" << m.targets.size() << '\n';
    return kExitOk;
}

}  // namespace

int cmd_eval(const Config& cfg, std::ostream& log) {
    const auto mode = cfg.root.contains("mode") && cfg.root["mode"].is_string()
                          ? cfg.root["mode"].get<std::string>()
                          : std::string("single");
    if (cfg.root.contains("mode") && !cfg.root["mode"].is_string()) {
        throw ConfigError("eval.mode must be a string");
    }
    detail::schema_version(Section(cfg.root.contains("schema_version")
                                       ? json{{"schema_version", cfg.root["schema_version"]}}
                                       : json::object(),
                                   "eval", {"schema_version"}));
    if (mode == "single") return eval_single(cfg, log);
    if (mode == "cv") return eval_cv(cfg, log);
    if (mode == "transfer") return eval_transfer(cfg, log);
    throw ConfigError("eval.mode must be 'single', 'cv' or 'transfer'");
}

}  // namespace ssr::cli
