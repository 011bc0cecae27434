#include <cmath>
#include <limits>
#include <map>

#include "ssr/errors.hpp"
#include "ssr/training.hpp"

namespace ssr::train {

using nlohmann::json;

namespace {

json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

json matrix_json(const std::vector<std::vector<double>>& m) {
    json rows = json::array();
    for (const auto& row : m) {
        json r = json::array();
        for (double v : row) r.push_back(number(v));
        rows.push_back(std::move(r));
    }
    return rows;
}

struct PairedRun {
    EvalReport model1;
    EvalReport model2;
    double model1_loss = 0.0;
    double stage_a = 0.0;
    double stage_b = 0.0;
};

// Trains both models on `train` and evaluates both on `test`.
PairedRun train_and_eval(const std::vector<Sample>& train, const std::vector<Sample>& test,
                         const ArchConfig& arch, const TrainConfig& cfg) {
    PairedRun out;
    const auto m1 = train_model1(train, arch, cfg);
    if (m1.diverged) throw NumericalError("Model 1 diverged: " + m1.incident);
    const auto m2 = train_model2(train, m1.params, cfg);
    if (m2.diverged) throw NumericalError("Model 2 diverged: " + m2.incident);
    out.model1_loss = m1.final_loss;
    out.stage_a = m2.stage_a_loss;
    out.stage_b = m2.stage_b_loss;
    out.model1 = evaluate(m1.params, test, cfg.psnr_mode, cfg.saturation_threshold);
    out.model2 = evaluate(m2.params, test, cfg.psnr_mode, cfg.saturation_threshold);
    return out;
}

}  // namespace

json LoocvResult::to_json() const {
    json j;
    j["mean_psnr_model1"] = number(mean_psnr_model1);
    j["mean_psnr_model2"] = number(mean_psnr_model2);
    j["per_band_psnr_model1"] = json::array();
    for (double v : per_band_psnr_model1) j["per_band_psnr_model1"].push_back(number(v));
    j["per_band_psnr_model2"] = json::array();
    for (double v : per_band_psnr_model2) j["per_band_psnr_model2"].push_back(number(v));
    j["warnings"] = warnings;
    json folds_j = json::array();
    for (const auto& f : folds) {
        json fj{{"fold", f.fold}, {"test_ids", f.test_ids}, {"ok", f.ok}};
        if (f.ok) {
            fj["model1"] = f.model1.to_json();
            fj["model2"] = f.model2.to_json();
            fj["model1_train_loss"] = number(f.model1_train_loss);
            fj["model2_stage_a_loss"] = number(f.model2_stage_a_loss);
            fj["model2_stage_b_loss"] = number(f.model2_stage_b_loss);
        } else {
            fj["error"] = f.error;
        }
        folds_j.push_back(std::move(fj));
    }
    j["folds"] = std::move(folds_j);
    return j;
}

LoocvResult run_loocv(const std::vector<Sample>& dataset, int k, const ArchConfig& arch,
                      const TrainConfig& cfg) {
    if (k < 2) throw ConfigError("cross-validation needs k >= 2, got " + std::to_string(k));
    cfg.validate();
    std::vector<std::string> ids;
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : dataset) {
        if (!by_id.emplace(s.id, &s).second) throw DataError("duplicate sample id " + s.id);
        ids.push_back(s.id);
    }
    const auto folds = data::split_folds(ids, k, cfg.seed);

    LoocvResult r;
    std::size_t ok = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        FoldResult fr;
        fr.fold = static_cast<int>(f);
        fr.test_ids = folds[f].test_ids;
        std::vector<Sample> train, test;
        for (const auto& id : folds[f].train_ids) train.push_back(*by_id.at(id));
        for (const auto& id : folds[f].test_ids) test.push_back(*by_id.at(id));
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + f;
        try {
            auto run = train_and_eval(train, test, arch, fold_cfg);
            fr.model1 = std::move(run.model1);
            fr.model2 = std::move(run.model2);
            fr.model1_train_loss = run.model1_loss;
            fr.model2_stage_a_loss = run.stage_a;
            fr.model2_stage_b_loss = run.stage_b;
            fr.ok = true;
        } catch (const Error& e) {
            fr.error = e.what();
            r.warnings.push_back("fold " + std::to_string(f) + " failed: " + e.what());
        }
        if (fr.ok) {
            ++ok;
            r.mean_psnr_model1 += fr.model1.mean_psnr;
            r.mean_psnr_model2 += fr.model2.mean_psnr;
            if (r.per_band_psnr_model1.empty()) {
                r.per_band_psnr_model1.assign(fr.model1.per_band_psnr.size(), 0.0);
                r.per_band_psnr_model2.assign(fr.model2.per_band_psnr.size(), 0.0);
            }
            for (std::size_t c = 0; c < r.per_band_psnr_model1.size(); ++c) {
                r.per_band_psnr_model1[c] += fr.model1.per_band_psnr[c];
                r.per_band_psnr_model2[c] += fr.model2.per_band_psnr[c];
            }
        }
        r.folds.push_back(std::move(fr));
    }
    if (ok == 0) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        r.mean_psnr_model1 = r.mean_psnr_model2 = nan;
        r.warnings.push_back("every fold failed");
        return r;
    }
    const double n = static_cast<double>(ok);
    r.mean_psnr_model1 /= n;
    r.mean_psnr_model2 /= n;
    for (auto& v : r.per_band_psnr_model1) v /= n;
    for (auto& v : r.per_band_psnr_model2) v /= n;
    return r;
}

json TransferMatrix::to_json() const {
    return {{"sources", sources},
            {"targets", targets},
            {"model1", matrix_json(model1)},
            {"model2", matrix_json(model2)},
            {"warnings", warnings}};
}

TransferMatrix transfer_matrix(const std::vector<NamedDataset>& datasets, int k,
                               const ArchConfig& arch, const TrainConfig& cfg) {
    if (datasets.size() < 2) throw ConfigError("transfer matrix needs at least 2 datasets");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = datasets.size();
    TransferMatrix t;
    for (const auto& d : datasets) {
        t.sources.push_back(d.name);
        t.targets.push_back(d.name);
    }
    t.model1.assign(n, std::vector<double>(n, nan));
    t.model2.assign(n, std::vector<double>(n, nan));

    for (std::size_t s = 0; s < n; ++s) {
        const auto& src = datasets[s];
        if (src.samples.empty()) {
            t.warnings.push_back("source '" + src.name + "' is empty; row skipped");
            continue;
        }
        try {
            const auto cv = run_loocv(src.samples, k, arch, cfg);
            t.model1[s][s] = cv.mean_psnr_model1;
            t.model2[s][s] = cv.mean_psnr_model2;
            for (const auto& w : cv.warnings) t.warnings.push_back(src.name + ": " + w);
        } catch (const Error& e) {
            t.warnings.push_back("diagonal '" + src.name + "' failed: " + e.what());
        }
        bool need_full = false;
        for (std::size_t g = 0; g < n; ++g) {
            if (g != s && !datasets[g].samples.empty()) need_full = true;
        }
        if (!need_full) continue;
        try {
            const auto m1 = train_model1(src.samples, arch, cfg);
            if (m1.diverged) throw NumericalError("Model 1 diverged: " + m1.incident);
            const auto m2 = train_model2(src.samples, m1.params, cfg);
            if (m2.diverged) throw NumericalError("Model 2 diverged: " + m2.incident);
            for (std::size_t g = 0; g < n; ++g) {
                if (g == s) continue;
                if (datasets[g].samples.empty()) {
                    t.warnings.push_back("target '" + datasets[g].name + "' is empty");
                    continue;
                }
                t.model1[s][g] = evaluate(m1.params, datasets[g].samples, cfg.psnr_mode,
                                          cfg.saturation_threshold).mean_psnr;
                t.model2[s][g] = evaluate(m2.params, datasets[g].samples, cfg.psnr_mode,
                                          cfg.saturation_threshold).mean_psnr;
            }
        } catch (const Error& e) {
            t.warnings.push_back("source '" + src.name + "' failed: " + e.what());
        }
    }
    return t;
}

}  // namespace ssr::train
