#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hsi_data.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "ops.hpp"

namespace mumlp {

struct TrainConfig {
    double lr0 = 2e-4;
    double weight_decay = 8e-7;
    double lr_gamma = 0.98;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 300;
    std::size_t batch_size = 1000;
    std::uint64_t seed = 42;

    void validate() const {
        auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); };
        if (!(lr0 > 0.0)) fail("lr0 must be positive");
        if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) fail("lr_gamma must lie in (0, 1]");
        if (!(weight_decay >= 0.0 && weight_decay < 1.0)) fail("weight_decay must lie in [0, 1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
        if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
        if (batch_size == 0) fail("batch_size must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr0", c.lr0},       {"weight_decay", c.weight_decay}, {"lr_gamma", c.lr_gamma},
                       {"beta1", c.beta1},   {"beta2", c.beta2},               {"adam_eps", c.adam_eps},
                       {"epochs", c.epochs}, {"batch_size", c.batch_size},     {"seed", c.seed}};
}

inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    return cfg.lr0 * std::pow(cfg.lr_gamma, static_cast<double>(epoch));
}

template <class T>
struct OptimizerState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;
};

/// One Adam update with decoupled weight decay: p <- p - lr*wd*p, then the
/// bias-corrected moment step. Parameters without a gradient see g = 0.
template <class T>
void adam_step(std::span<Tensor<T>> params, OptimizerState<T>& state, double lr, const TrainConfig& cfg) {
    if (state.m.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), T{0});
            state.v.emplace_back(p.size(), T{0});
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw Error(ErrorKind::ShapeMismatch, "optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                                                  std::to_string(params.size()));
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T decay = static_cast<T>(lr * cfg.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].data();
        auto grad = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != values.size() || v.size() != values.size()) {
            throw Error(ErrorKind::ShapeMismatch, "optimizer moments for tensor " + std::to_string(i) + " have wrong length");
        }
        const bool has_grad = !grad.empty();
        for (std::size_t k = 0; k < values.size(); ++k) {
            const T g = has_grad ? grad[k] : T{0};
            values[k] -= decay * values[k];
            m[k] = b1 * m[k] + (T{1} - b1) * g;
            v[k] = b2 * v[k] + (T{1} - b2) * g * g;
            const double m_hat = static_cast<double>(m[k]) / bc1;
            const double v_hat = static_cast<double>(v[k]) / bc2;
            values[k] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

/// 0-based class predictions for arbitrary pixels, computed in inference
/// mode. Work is split into contiguous ranges over up to `threads` workers;
/// each prediction only depends on its own pixel, so the result does not
/// depend on the thread count.
template <class T>
std::vector<std::size_t> predict_pixels(const Model<T>& model, const HsiCube& cube, std::span<const std::size_t> indices,
                                        std::size_t batch_size = 1000, std::size_t threads = 1) {
    std::vector<std::size_t> out(indices.size());
    if (indices.empty()) return out;
    batch_size = std::max<std::size_t>(batch_size, 1);
    auto work = [&](std::size_t begin, std::size_t end) {
        NoGradGuard guard;
        for (std::size_t pos = begin; pos < end; pos += batch_size) {
            const std::size_t stop = std::min(pos + batch_size, end);
            auto pixels = gather_pixels<T>(cube, indices.subspan(pos, stop - pos));
            auto logits = model.predict_logits(pixels);
            const std::size_t K = logits.dim(1);
            for (std::size_t r = 0; r < stop - pos; ++r) out[pos + r] = argmax<T>(logits.data().subspan(r * K, K));
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, (indices.size() + batch_size - 1) / batch_size);
    if (threads == 1) {
        work(0, indices.size());
        return out;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (indices.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk, end = std::min(indices.size(), begin + chunk);
        if (begin < end) pool.emplace_back(work, begin, end);
    }
    pool.clear();  // join before `out` is returned
    return out;
}

struct Evaluation {
    std::vector<std::size_t> predictions;  // 0-based, aligned with the evaluated indices
    ConfusionMatrix confusion;
};

template <class T>
Evaluation evaluate_model(const Model<T>& model, const HsiCube& cube, const LabelMap& labels,
                          std::span<const std::size_t> indices, std::size_t batch_size = 1000, std::size_t threads = 1) {
    if (indices.empty()) throw Error(ErrorKind::EmptyMatrix, "cannot evaluate an empty split part");
    Evaluation ev{predict_pixels(model, cube, indices, batch_size, threads), ConfusionMatrix(model.config().classes)};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto truth = labels.labels.at(indices[i]);
        if (truth == 0) throw Error(ErrorKind::LabelOutOfRange, "background pixel in evaluated split part");
        ev.confusion.add(truth - 1u, ev.predictions[i]);
    }
    return ev;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_oa = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"val_oa", r.val_oa}};
}

template <class T>
struct TrainResult {
    Model<T> best;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_oa = -1.0;
    double best_train_loss = 0.0;
};

/// Adam training over the train part with per-epoch validation. The kept
/// parameters are those with the highest validation OA; ties go to the epoch
/// with the lower mean training loss.
template <class T>
TrainResult<T> train_model(const Model<T>& initial, const HsiCube& cube, const LabelMap& labels, const PixelSplit& split,
                           const TrainConfig& cfg, std::size_t eval_threads = 1,
                           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (cfg.epochs > 0 && (split.train.empty() || split.val.empty())) {
        throw Error(ErrorKind::ConfigError, "training needs non-empty train and val parts");
    }
    TrainResult<T> result{initial.clone(), {}, 0, -1.0, 0.0};
    Model<T> model = initial.clone();
    std::vector<Tensor<T>> params;
    for (std::size_t i = 0; i < model.num_tensors(); ++i) params.push_back(model.tensor(i));
    OptimizerState<T> opt;
    const RngStream root(cfg.seed);
    RngStream dropout_rng = root.split("dropout");
    const RngStream shuffle_root = root.split("shuffle");

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        BatchIterator<T> batches(cube, labels, split.train, cfg.batch_size, shuffle_root.split(epoch).seed());
        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        while (auto batch = batches.next()) {
            model.zero_grad();
            auto logits = model.forward(batch->pixels, true, dropout_rng);
            auto loss = softmax_cross_entropy(logits, std::span<const std::size_t>(batch->labels));
            const double value = static_cast<double>(loss.item());
            if (!std::isfinite(value)) {
                throw Error(ErrorKind::NonFiniteLoss, "loss is " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                                                          ", batch " + std::to_string(batch_no));
            }
            backward(loss);
            adam_step(std::span(params), opt, lr, cfg);
            loss_sum += value * static_cast<double>(batch->labels.size());
            seen += batch->labels.size();
            ++batch_no;
        }
        const auto val = evaluate_model(model, cube, labels, split.val, cfg.batch_size, eval_threads);
        EpochRecord record{epoch, lr, loss_sum / static_cast<double>(seen), classification_scores(val.confusion).oa};
        result.history.push_back(record);
        const bool better = record.val_oa > result.best_val_oa ||
                            (record.val_oa == result.best_val_oa && record.train_loss < result.best_train_loss);
        if (better) {
            result.best_val_oa = record.val_oa;
            result.best_train_loss = record.train_loss;
            result.best_epoch = epoch;
            result.best = model.clone();
        }
        if (on_epoch) on_epoch(record);
    }
    return result;
}

}  // namespace mumlp
