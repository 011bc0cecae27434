#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>

#include "ssr/adam.hpp"
#include "ssr/errors.hpp"
#include "ssr/training.hpp"

namespace ssr::train {

using models::Tensor;
using nlohmann::json;

namespace {

// Normalized MSE -> MSE on the [0, 255] scale.
constexpr double kScale = 255.0 * 255.0;

float lr_at(const TrainConfig& cfg, int epoch, double base = 0.0) {
    return static_cast<float>((base > 0.0 ? base : cfg.lr) * std::pow(cfg.lr_decay, epoch - 1));
}

tensor::AdamState make_adam(const TrainConfig& cfg) {
    tensor::AdamState st;
    st.lr = static_cast<float>(cfg.lr);
    st.beta1 = static_cast<float>(cfg.beta1);
    st.beta2 = static_cast<float>(cfg.beta2);
    st.epsilon = static_cast<float>(cfg.epsilon);
    return st;
}

std::vector<Tensor> snapshot(const NetworkParams& p) {
    std::vector<Tensor> out;
    out.reserve(p.entries.size());
    for (const auto& e : p.entries) out.push_back(e.value);
    return out;
}

void restore(NetworkParams& p, const std::vector<Tensor>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) p.entries[i].value = values[i];
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx, std::size_t begin,
                   std::size_t end) {
    const std::size_t row = src.dim(2);
    Tensor out({end - begin, 1, row});
    for (std::size_t i = begin; i < end; ++i) {
        std::copy_n(src.data() + idx[i] * row, row, out.data() + (i - begin) * row);
    }
    return out;
}

double model1_full_loss(const NetworkParams& p, const Tensor& x, const Tensor& y) {
    return tensor::l2_loss(models::model1_run_chunked(p, x), y).loss * kScale;
}

/// Plateau bookkeeping shared by both trainers.
struct Tracker {
    double best = kPsnrInfinity;
    int since_best = 0;
    std::vector<Tensor> best_values;

    bool improve(double loss, const NetworkParams& p) {
        if (loss < best) {
            best = loss;
            since_best = 0;
            best_values = snapshot(p);
            return true;
        }
        ++since_best;
        return false;
    }
};

struct StackTensors {
    Tensor rgb_px;
    Tensor density;
    Tensor sparse;
    Tensor target;
    std::size_t width = 0, height = 0;
};

std::vector<StackTensors> prepare_stacks(const std::vector<Sample>& dataset, std::size_t bands) {
    std::vector<StackTensors> out;
    for (const auto& s : dataset) {
        if (s.hsi.channels() != bands || s.sparse.channels() != bands) {
            throw DataError("sample " + s.id + " has " + std::to_string(s.hsi.channels()) +
                            " bands, architecture expects " + std::to_string(bands));
        }
        StackTensors t;
        t.width = s.rgb.width();
        t.height = s.rgb.height();
        t.rgb_px = models::stack_to_pixels(s.rgb);
        t.density = models::density_to_planes(s.d_hsi);
        t.sparse = models::stack_to_planes(s.sparse);
        t.target = models::stack_to_planes(s.hsi);
        out.push_back(std::move(t));
    }
    return out;
}

double model2_full_loss(const NetworkParams& p, const std::vector<StackTensors>& stacks,
                        const std::vector<Tensor>* cores) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        const auto& s = stacks[i];
        const Tensor core = cores ? (*cores)[i]
                                  : models::pixels_to_planes(models::model1_run_chunked(p, s.rgb_px),
                                                             s.width, s.height);
        const Tensor y = models::model2_merge_forward(p, core, s.density, s.sparse, nullptr);
        acc += tensor::l2_loss(y, s.target).loss * static_cast<double>(y.size());
        n += y.size();
    }
    return acc / static_cast<double>(n) * kScale;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("beta1 and beta2 must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
    if (stage_a_epochs < 0) throw ConfigError("stage_a_epochs must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (!(model2_lr >= 0.0) || !std::isfinite(model2_lr)) throw ConfigError("model2_lr must be >= 0");
}

json TrainConfig::to_json() const {
    return {{"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"plateau_patience", plateau_patience},
            {"seed", seed},
            {"psnr_mode", to_string(psnr_mode)},
            {"pixels_per_stack", pixels_per_stack},
            {"stage_a_epochs", stage_a_epochs},
            {"saturation_threshold", saturation_threshold},
            {"lr_decay", lr_decay},
            {"model2_lr", model2_lr}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    TrainConfig c;
    static const std::set<std::string> known{
        "lr",   "beta1",     "beta2",            "epsilon",        "batch_size",          "max_epochs",
        "plateau_patience", "seed", "psnr_mode", "pixels_per_stack", "stage_a_epochs",
        "saturation_threshold", "lr_decay", "model2_lr"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown train config key '" + key + "'");
    }
    try {
        if (j.contains("lr")) c.lr = j["lr"].get<double>();
        if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
        if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
        if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<int>();
        if (j.contains("plateau_patience")) c.plateau_patience = j["plateau_patience"].get<int>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("psnr_mode")) c.psnr_mode = psnr_mode_from_string(j["psnr_mode"].get<std::string>());
        if (j.contains("pixels_per_stack")) c.pixels_per_stack = j["pixels_per_stack"].get<std::size_t>();
        if (j.contains("stage_a_epochs")) c.stage_a_epochs = j["stage_a_epochs"].get<int>();
        if (j.contains("lr_decay")) c.lr_decay = j["lr_decay"].get<double>();
        if (j.contains("model2_lr")) c.model2_lr = j["model2_lr"].get<double>();
        if (j.contains("saturation_threshold")) {
            c.saturation_threshold = j["saturation_threshold"].get<double>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainResult train_model1_pixels(const Tensor& rgb_px, const Tensor& target_px, NetworkParams init,
                                const TrainConfig& cfg) {
    cfg.validate();
    if (init.arch != models::ArchId::model1) throw ConfigError("train_model1 needs Model-1 params");
    const std::size_t P = rgb_px.rank() == 3 ? rgb_px.dim(0) : 0;
    if (P == 0) throw DataError("training set is empty");
    const auto C = static_cast<std::size_t>(init.config.spectral_out);
    if (target_px.shape() != tensor::Shape{P, 1, C}) {
        throw DataError("target batch " + tensor::shape_str(target_px.shape()) + " does not match (" +
                        std::to_string(P) + ", 1, " + std::to_string(C) + ")");
    }

    TrainResult r;
    r.params = std::move(init);
    auto adam = make_adam(cfg);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Tracker track;
    track.best_values = snapshot(r.params);

    for (int epoch = 1; epoch <= cfg.max_epochs && !r.diverged; ++epoch) {
        adam.lr = lr_at(cfg, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double acc = 0.0;
        for (std::size_t b = 0; b < P; b += cfg.batch_size) {
            const std::size_t e = std::min(P, b + cfg.batch_size);
            const Tensor x = gather_rows(rgb_px, order, b, e);
            const Tensor y = gather_rows(target_px, order, b, e);
            models::Model1Trace trace;
            const Tensor pred = models::model1_forward(r.params, x, &trace);
            const auto loss = tensor::l2_loss(pred, y);
            if (!std::isfinite(loss.loss)) {
                r.diverged = true;
                r.incident = "non-finite loss at epoch " + std::to_string(epoch);
                break;
            }
            auto grads = models::zero_grads(r.params);
            models::model1_backward(r.params, loss.grad, trace, grads);
            const auto step = tensor::adam_step(r.params.entries, grads, adam);
            if (!step.applied) {
                r.diverged = true;
                r.incident = "epoch " + std::to_string(epoch) + ": " + step.incident;
                break;
            }
            acc += loss.loss * static_cast<double>(e - b);
        }
        if (r.diverged) break;
        const double epoch_loss = acc / static_cast<double>(P) * kScale;
        r.epochs_run = epoch;
        r.log.push_back({epoch, "train", epoch_loss, psnr_from_mse(epoch_loss, cfg.psnr_mode)});
        track.improve(epoch_loss, r.params);
        if (track.since_best >= cfg.plateau_patience) break;
    }
    restore(r.params, track.best_values);
    r.final_loss = model1_full_loss(r.params, rgb_px, target_px);
    if (!std::isfinite(r.final_loss)) {
        r.diverged = true;
        if (r.incident.empty()) r.incident = "non-finite loss on the final pass";
    }
    return r;
}

TrainResult train_model1(const std::vector<Sample>& dataset, const ArchConfig& arch,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw DataError("training set is empty");
    const auto C = static_cast<std::size_t>(arch.spectral_out);
    std::vector<float> xs, ys;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (const auto& s : dataset) {
        if (s.hsi.channels() != C) {
            throw DataError("sample " + s.id + " has " + std::to_string(s.hsi.channels()) +
                            " bands, architecture expects " + std::to_string(C));
        }
        const Tensor x = models::stack_to_pixels(s.rgb);
        const Tensor y = models::stack_to_pixels(s.hsi);
        const std::size_t P = x.dim(0);
        std::vector<std::size_t> idx(P);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (cfg.pixels_per_stack > 0 && cfg.pixels_per_stack < P) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(cfg.pixels_per_stack);
            std::sort(idx.begin(), idx.end());
        }
        for (std::size_t p : idx) {
            xs.insert(xs.end(), x.data() + p * 3, x.data() + p * 3 + 3);
            ys.insert(ys.end(), y.data() + p * C, y.data() + p * C + C);
        }
    }
    const std::size_t n = xs.size() / 3;
    return train_model1_pixels(Tensor({n, 1, 3}, std::move(xs)), Tensor({n, 1, C}, std::move(ys)),
                               models::build_model1(arch, cfg.seed), cfg);
}

Model2Result train_model2(const std::vector<Sample>& dataset, const NetworkParams& init_model1,
                          const TrainConfig& cfg) {
    cfg.validate();
    if (init_model1.arch != models::ArchId::model1) {
        throw ConfigError("Model-2 training must be initialized from Model-1 params");
    }
    if (dataset.empty()) throw DataError("training set is empty");
    const auto stacks =
        prepare_stacks(dataset, static_cast<std::size_t>(init_model1.config.spectral_out));

    Model2Result r;
    r.params = models::promote_to_model2(init_model1, cfg.seed);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(stacks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    // Stage A: shared layers frozen, so their prediction is a constant input.
    models::set_frozen(r.params, models::kModel1Prefix, true);
    std::vector<Tensor> cores;
    for (const auto& s : stacks) {
        cores.push_back(models::pixels_to_planes(models::model1_run_chunked(r.params, s.rgb_px),
                                                 s.width, s.height));
    }
    const std::vector<Tensor> shared_before = snapshot(r.params);
    auto adam = make_adam(cfg);
    Tracker track;
    track.improve(model2_full_loss(r.params, stacks, &cores), r.params);
    const int stage_a_cap = cfg.stage_a_epochs > 0 ? cfg.stage_a_epochs : cfg.max_epochs;
    int epoch = 0;
    for (int e = 1; e <= stage_a_cap; ++e) {
        adam.lr = lr_at(cfg, e, cfg.model2_lr);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i : order) {
            models::Model2Trace trace;
            const Tensor y = models::model2_merge_forward(r.params, cores[i], stacks[i].density,
                                                          stacks[i].sparse, &trace);
            const auto loss = tensor::l2_loss(y, stacks[i].target);
            auto grads = models::zero_grads(r.params);
            models::model2_merge_backward(r.params, loss.grad, trace, grads);
            const auto step = tensor::adam_step(r.params.entries, grads, adam);
            if (!std::isfinite(loss.loss) || !step.applied) {
                r.diverged = true;
                r.incident = "stage A epoch " + std::to_string(e) + ": " +
                             (step.incident.empty() ? "non-finite loss" : step.incident);
                break;
            }
        }
        if (r.diverged) break;
        const double l = model2_full_loss(r.params, stacks, &cores);
        epoch = e;
        r.log.push_back({e, "stage_a", l, psnr_from_mse(l, cfg.psnr_mode)});
        if (!std::isfinite(l)) {
            r.diverged = true;
            r.incident = "non-finite stage A loss at epoch " + std::to_string(e);
            break;
        }
        track.improve(l, r.params);
        if (track.since_best >= cfg.plateau_patience) break;
    }
    restore(r.params, track.best_values);
    for (std::size_t i = 0; i < r.params.entries.size(); ++i) {
        const auto& e = r.params.entries[i];
        if (e.name.starts_with(models::kModel1Prefix) && !(e.value == shared_before[i])) {
            throw NumericalError("stage A modified frozen entry " + e.name);
        }
    }
    r.stage_a_loss = track.best;
    r.after_stage_a = r.params;
    r.epochs_run = epoch;
    if (r.diverged) {
        r.stage_b_loss = r.stage_a_loss;
        r.final_loss = r.stage_a_loss;
        return r;
    }

    // Stage B: everything trainable; the stage-A result is the checkpoint to beat.
    models::set_frozen(r.params, models::kModel1Prefix, false);
    adam = make_adam(cfg);
    track.since_best = 0;
    for (int e = 1; e <= cfg.max_epochs; ++e) {
        adam.lr = lr_at(cfg, e, cfg.model2_lr);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i : order) {
            const auto& s = stacks[i];
            models::Model2Trace trace;
            const Tensor y = models::model2_forward(r.params, s.rgb_px, s.density, s.sparse,
                                                    s.width, s.height, &trace);
            const auto loss = tensor::l2_loss(y, s.target);
            auto grads = models::zero_grads(r.params);
            models::model2_backward(r.params, loss.grad, trace, grads);
            const auto step = tensor::adam_step(r.params.entries, grads, adam);
            if (!std::isfinite(loss.loss) || !step.applied) {
                r.diverged = true;
                r.incident = "stage B epoch " + std::to_string(e) + ": " +
                             (step.incident.empty() ? "non-finite loss" : step.incident);
                break;
            }
        }
        if (r.diverged) break;
        const double l = model2_full_loss(r.params, stacks, nullptr);
        r.epochs_run = epoch + e;
        r.log.push_back({e, "stage_b", l, psnr_from_mse(l, cfg.psnr_mode)});
        if (!std::isfinite(l)) {
            r.diverged = true;
            r.incident = "non-finite stage B loss at epoch " + std::to_string(e);
            break;
        }
        track.improve(l, r.params);
        if (track.since_best >= cfg.plateau_patience) break;
    }
    restore(r.params, track.best_values);
    r.stage_b_loss = track.best;
    r.final_loss = track.best;
    return r;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,split,loss,psnr\n" << std::setprecision(10);
    for (const auto& e : log) {
        out << e.epoch << ',' << e.split << ',' << e.loss << ',' << e.psnr << '\n';
    }
    if (!out) throw DataError("short write to " + path.string());
}

}  // namespace ssr::train
