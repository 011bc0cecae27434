#include <algorithm>
#include <cmath>

#include "ssr/errors.hpp"
#include "ssr/training.hpp"

namespace ssr::train {

using nlohmann::json;

std::string to_string(PsnrMode m) { return m == PsnrMode::amplitude ? "amplitude" : "standard"; }

PsnrMode psnr_mode_from_string(const std::string& s) {
    if (s == "amplitude") return PsnrMode::amplitude;
    if (s == "standard") return PsnrMode::standard;
    throw ConfigError("psnr_mode must be 'amplitude' or 'standard', got '" + s + "'");
}

double psnr_from_mse(double mse, PsnrMode mode) {
    if (!(mse >= 0.0)) throw NumericalError("MSE must be >= 0");
    if (mse == 0.0) return kPsnrInfinity;
    return mode == PsnrMode::amplitude ? 20.0 * std::log10(255.0 / mse)
                                   : 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace {

void check_same_shape(const SpectralStack& pred, const SpectralStack& gt) {
    if (pred.width() != gt.width() || pred.height() != gt.height() ||
        pred.channels() != gt.channels()) {
        throw DataError("prediction " + std::to_string(pred.width()) + "x" +
                        std::to_string(pred.height()) + "x" + std::to_string(pred.channels()) +
                        " does not match ground truth " + std::to_string(gt.width()) + "x" +
                        std::to_string(gt.height()) + "x" + std::to_string(gt.channels()));
    }
}

json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

}  // namespace

double mse(const SpectralStack& pred, const SpectralStack& gt) {
    check_same_shape(pred, gt);
    const auto a = pred.values();
    const auto b = gt.values();
    if (a.empty()) throw DataError("empty stacks");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

double psnr(const SpectralStack& pred, const SpectralStack& gt, PsnrMode mode) {
    return psnr_from_mse(mse(pred, gt), mode);
}

PsnrMapResult psnr_map(const SpectralStack& pred, const SpectralStack& gt, PsnrMode mode,
                       double saturation_threshold) {
    check_same_shape(pred, gt);
    const std::size_t P = gt.pixels(), C = gt.channels();
    PsnrMapResult r;
    r.map = ScalarMap(gt.width(), gt.height());
    r.saturated.assign(P, 0);
    const auto a = pred.values();
    const auto b = gt.values();
    double sum = 0.0;
    double lo = kPsnrInfinity;
    for (std::size_t p = 0; p < P; ++p) {
        double acc = 0.0;
        bool sat = false;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = static_cast<double>(a[c * P + p]) - b[c * P + p];
            acc += d * d;
            if (b[c * P + p] >= saturation_threshold) sat = true;
        }
        const double v = psnr_from_mse(acc / static_cast<double>(C), mode);
        r.map.values[p] = static_cast<float>(v);
        if (sat) {
            r.saturated[p] = 1;
            ++r.summary.saturated;
            continue;
        }
        ++r.summary.counted;
        sum += v;
        lo = std::min(lo, v);
    }
    if (r.summary.counted > 0) {
        r.summary.defined = true;
        r.summary.min = lo;
        r.summary.mean = sum / static_cast<double>(r.summary.counted);
    }
    return r;
}

double EvalReport::mean_psnr_in(PsnrMode m) const {
    if (per_stack_mse.empty()) return 0.0;
    double acc = 0.0;
    for (double e : per_stack_mse) acc += psnr_from_mse(e, m);
    return acc / static_cast<double>(per_stack_mse.size());
}

json EvalReport::to_json() const {
    json j;
    j["psnr_mode"] = to_string(mode);
    j["mean_psnr"] = number(mean_psnr);
    j["mean_psnr_amplitude"] = number(mean_psnr_in(PsnrMode::amplitude));
    j["mean_psnr_standard"] = number(mean_psnr_in(PsnrMode::standard));
    j["saturation_mask_applied"] = saturation_mask_applied;
    j["saturation_threshold"] = saturation_threshold;
    json stacks = json::array();
    for (std::size_t i = 0; i < stack_ids.size(); ++i) {
        json s{{"id", stack_ids[i]},
               {"mse", number(per_stack_mse[i])},
               {"psnr_amplitude", number(psnr_from_mse(per_stack_mse[i], PsnrMode::amplitude))},
               {"psnr_standard", number(psnr_from_mse(per_stack_mse[i], PsnrMode::standard))}};
        if (i < map_summaries.size()) {
            const auto& m = map_summaries[i];
            s["map_defined"] = m.defined;
            s["map_min"] = m.defined ? number(m.min) : json(nullptr);
            s["map_mean"] = m.defined ? number(m.mean) : json(nullptr);
            s["saturated_pixels"] = m.saturated;
        }
        stacks.push_back(std::move(s));
    }
    j["per_stack"] = std::move(stacks);
    json bands = json::array();
    for (std::size_t c = 0; c < per_band_mse.size(); ++c) {
        bands.push_back({{"band", c},
                         {"mse", number(per_band_mse[c])},
                         {"psnr_amplitude", number(psnr_from_mse(per_band_mse[c], PsnrMode::amplitude))},
                         {"psnr_standard",
                          number(psnr_from_mse(per_band_mse[c], PsnrMode::standard))}});
    }
    j["per_band"] = std::move(bands);
    return j;
}

EvalReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, PsnrMode mode,
                    double saturation_threshold, bool keep_maps) {
    if (samples.empty()) throw DataError("evaluation set is empty");
    EvalReport r;
    r.mode = mode;
    r.saturation_threshold = saturation_threshold;
    std::vector<double> band_sq;
    std::size_t band_count = 0;
    for (const auto& s : samples) {
        const SpectralStack pred = predict(s);
        check_same_shape(pred, s.hsi);
        const std::size_t P = s.hsi.pixels(), C = s.hsi.channels();
        if (band_sq.empty()) band_sq.assign(C, 0.0);
        if (band_sq.size() != C) throw DataError("evaluation stacks differ in band count");
        const auto a = pred.values();
        const auto b = s.hsi.values();
        double total = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) {
                const double d = static_cast<double>(a[c * P + p]) - b[c * P + p];
                acc += d * d;
            }
            band_sq[c] += acc;
            total += acc;
        }
        band_count += P;
        const double e = total / static_cast<double>(P * C);
        r.stack_ids.push_back(s.id);
        r.per_stack_mse.push_back(e);
        r.per_stack_psnr.push_back(psnr_from_mse(e, mode));
        auto m = psnr_map(pred, s.hsi, mode, saturation_threshold);
        r.map_summaries.push_back(m.summary);
        if (keep_maps) r.psnr_maps.push_back(std::move(m.map));
    }
    for (double sq : band_sq) {
        const double e = sq / static_cast<double>(band_count);
        r.per_band_mse.push_back(e);
        r.per_band_psnr.push_back(psnr_from_mse(e, mode));
    }
    double acc = 0.0;
    for (double v : r.per_stack_psnr) acc += v;
    r.mean_psnr = acc / static_cast<double>(r.per_stack_psnr.size());
    return r;
}

EvalReport evaluate(const NetworkParams& params, const std::vector<Sample>& samples,
                    PsnrMode mode, double saturation_threshold, bool keep_maps) {
    Predictor p;
    if (params.arch == models::ArchId::model1) {
        p = [&](const Sample& s) { return models::model1_predict(params, s.rgb); };
    } else {
        p = [&](const Sample& s) { return models::model2_predict(params, s.rgb, s.d_hsi, s.sparse); };
    }
    return evaluate(p, samples, mode, saturation_threshold, keep_maps);
}

}  // namespace ssr::train
