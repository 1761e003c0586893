#pragma once

#include <cmath>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "t4d/dataset.hpp"
#include "t4d/metrics.hpp"
#include "t4d/models.hpp"
#include "t4d/preprocess.hpp"

namespace t4d {

struct TrainConfig {
    int epochs = 500;
    int batch_size = 10;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int val_interval = 5;  // epochs between validation passes
    int crop_length = 15;
    int eval_stride = 8;  // sliding-window stride for validation/test
    std::uint64_t seed = 99;

    enum class Metric { F1, Accuracy };
    Metric metric = Metric::F1;  // best-model selection criterion

    void validate() const {
        if (epochs < 1 || batch_size < 1 || val_interval < 1 || crop_length < 1 || eval_stride < 1)
            throw ConfigError("TrainConfig: counts must be positive");
        if (lr <= 0.0 || beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0 ||
            epsilon <= 0.0)
            throw ConfigError("TrainConfig: bad optimizer constants");
        if (val_interval > epochs)
            throw ConfigError("TrainConfig: validation interval exceeds epoch count");
    }
};

// Adam first/second moments, one pair per trainable parameter (index-aligned
// with the model's trainable parameters in order).
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    std::int64_t step = 0;
};

// Bias-corrected Adam update. `grads` is aligned with `params`; entries for
// non-trainable parameters are ignored (may be empty tensors).
template <typename T>
void adam_step(std::vector<Param<T>>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, double lr, double beta1, double beta2, double epsilon) {
    if (grads.size() != params.size())
        throw ShapeError("adam_step: gradient list not aligned with parameters");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(p.trainable ? Tensor<T>::zeros(p.value.shape()) : Tensor<T>());
            state.v.push_back(p.trainable ? Tensor<T>::zeros(p.value.shape()) : Tensor<T>());
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        const Tensor<T>& g = grads[i];
        if (!g.same_shape(params[i].value))
            throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        Tensor<T>& theta = params[i].value;
        for (std::int64_t j = 0; j < g.numel(); ++j) {
            const double gj = static_cast<double>(g[j]);
            if (!std::isfinite(gj))
                throw NumericError("adam_step: non-finite gradient in parameter " +
                                   params[i].name);
            const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * gj;
            const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + epsilon);
            theta[j] = static_cast<T>(static_cast<double>(theta[j]) - update);
        }
    }
}

// Sliding-window subject evaluation: every window's class probabilities are
// averaged per subject, the subject is classified from the mean (tie ->
// class 0), and metrics are computed over subjects, not windows. Eval mode
// only; neither parameters nor batch-norm running statistics change.
template <typename T>
MetricsReport evaluate_subjects(Model<T>& model, const std::vector<const FmriRecord<T>*>& records,
                                std::int64_t window, std::int64_t stride) {
    if (records.empty()) throw ShapeError("evaluate_subjects: no records");
    MetricsReport report;
    std::vector<int> predictions, labels;
    for (const FmriRecord<T>* record : records) {
        const std::int64_t frames = record->image.extent(5);
        const auto starts = sliding_window_starts(frames, window, stride);

        // All windows of one subject evaluated as a single batch.
        const Shape& s = record->image.shape();
        Tensor<T> batch({static_cast<std::int64_t>(starts.size()), 1, s[2], s[3], s[4], window});
        const std::int64_t crop_numel = s[2] * s[3] * s[4] * window;
        for (std::size_t k = 0; k < starts.size(); ++k) {
            Tensor<T> c = crop_time(record->image, starts[k], window);
            std::copy(c.data(), c.data() + crop_numel,
                      batch.data() + static_cast<std::int64_t>(k) * crop_numel);
        }
        const Tensor<T> probs = softmax_rows(model.predict(batch));
        double p1 = 0.0;
        for (std::int64_t k = 0; k < probs.extent(0); ++k) p1 += static_cast<double>(probs(k, 1));
        p1 /= static_cast<double>(probs.extent(0));

        MetricsReport::SubjectResult sr;
        sr.subject = record->subject;
        sr.label = record->label;
        sr.p_positive = p1;
        sr.predicted = p1 > 0.5 ? 1 : 0;
        sr.crops = static_cast<int>(starts.size());
        report.subjects.push_back(sr);
        predictions.push_back(sr.predicted);
        labels.push_back(sr.label);
    }
    MetricsReport counts = f1_and_accuracy(predictions, labels);
    counts.subjects = std::move(report.subjects);
    return counts;
}

template <typename T>
struct TrainState {
    AdamState<T> adam;
    std::int64_t epoch = 0;
    Rng rng{0};

    bool has_best = false;
    double best_metric = -1.0;
    std::int64_t best_epoch = 0;
    std::vector<Tensor<T>> best_params;               // aligned with model params
    std::vector<BatchNormRunning<T>> best_bn_stats;   // aligned with model bn_stats
};

template <typename T>
void snapshot_best(TrainState<T>& state, const Model<T>& model, double metric,
                   std::int64_t epoch) {
    state.has_best = true;
    state.best_metric = metric;
    state.best_epoch = epoch;
    state.best_params.clear();
    for (const auto& p : model.params) state.best_params.push_back(p.value);
    state.best_bn_stats.clear();
    for (const auto& [name, running] : model.bn_stats) state.best_bn_stats.push_back(running);
}

// Copies the best snapshot back into the model (used before test evaluation).
template <typename T>
void apply_best(Model<T>& model, const TrainState<T>& state) {
    if (!state.has_best) return;
    for (std::size_t i = 0; i < model.params.size(); ++i)
        model.params[i].value = state.best_params[i];
    for (std::size_t i = 0; i < model.bn_stats.size(); ++i)
        model.bn_stats[i].second = state.best_bn_stats[i];
}

struct EpochLog {
    std::int64_t epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double train_f1 = 0.0;  // over the epoch's crops
    bool has_val = false;
    double val_accuracy = 0.0;
    double val_f1 = 0.0;
};

template <typename T>
struct TrainResult {
    TrainState<T> state;
    std::vector<EpochLog> log;
};

// Training protocol: per epoch one random temporal crop per training
// subject, shuffled, batched (trailing partial batch included); Adam on the
// softmax cross-entropy after every batch; every `val_interval` epochs a
// sliding-window validation pass, keeping the snapshot with the best
// selection metric (strictly-greater replacement, so ties keep the earlier
// snapshot). Deterministic given (config, model seed): crop draws and
// shuffles consume a single generator stream that resume continues exactly.
template <typename T>
TrainResult<T> train(Model<T>& model, const Dataset<T>& data, const TrainConfig& config,
                     const TrainState<T>* resume = nullptr, std::ostream* log_stream = nullptr) {
    config.validate();
    if (config.crop_length != model.spec.crop_length)
        throw ConfigError("train: config crop_length differs from the model's");
    const auto train_records = data.split(Split::Train);
    const auto val_records = data.split(Split::Val);
    if (train_records.empty()) throw ShapeError("train: empty train split");
    if (val_records.empty()) throw ShapeError("train: empty val split");
    for (const auto* r : data.split(Split::Train))
        if (r->image.extent(5) < config.crop_length)
            throw ShapeError("train: subject " + r->subject + " has fewer frames than the crop");

    TrainResult<T> result;
    if (resume != nullptr) {
        result.state = *resume;
    } else {
        result.state.rng = Rng(config.seed);
    }
    TrainState<T>& state = result.state;

    const std::int64_t w = config.crop_length;
    for (std::int64_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
        // One crop per subject, then a Fisher-Yates shuffle; both consume the
        // train stream in manifest order so runs are reproducible.
        std::vector<std::pair<std::size_t, std::int64_t>> samples;
        for (std::size_t i = 0; i < train_records.size(); ++i) {
            const std::int64_t frames = train_records[i]->image.extent(5);
            samples.push_back(
                {i, static_cast<std::int64_t>(state.rng.uniform_int(
                        static_cast<std::uint64_t>(frames - w + 1)))});
        }
        for (std::size_t i = samples.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(state.rng.uniform_int(i));
            std::swap(samples[i - 1], samples[j]);
        }

        double loss_sum = 0.0;
        std::vector<int> epoch_preds, epoch_labels;
        for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(samples.size(), begin + static_cast<std::size_t>(config.batch_size));
            const std::int64_t b = static_cast<std::int64_t>(end - begin);

            const Shape& s = train_records[0]->image.shape();
            Tensor<T> batch({b, 1, s[2], s[3], s[4], w});
            std::vector<int> labels;
            const std::int64_t crop_numel = s[2] * s[3] * s[4] * w;
            for (std::size_t k = begin; k < end; ++k) {
                const auto& [rec_idx, start] = samples[k];
                Tensor<T> c = crop_time(train_records[rec_idx]->image, start, w);
                std::copy(c.data(), c.data() + crop_numel,
                          batch.data() + static_cast<std::int64_t>(k - begin) * crop_numel);
                labels.push_back(train_records[rec_idx]->label);
            }

            Tape<T> tape;
            std::vector<int> leaves;
            const int logits = model.forward(tape, batch, true, &leaves);
            const int loss = softmax_cross_entropy(tape, logits, labels);
            tape.backward(loss);

            const Tensor<T>& lv = tape.value(logits);
            for (std::int64_t k = 0; k < b; ++k) {
                epoch_preds.push_back(lv(k, 1) > lv(k, 0) ? 1 : 0);
                epoch_labels.push_back(labels[static_cast<std::size_t>(k)]);
            }
            loss_sum += static_cast<double>(tape.value(loss)[0]) * static_cast<double>(b);

            std::vector<Tensor<T>> grads(model.params.size());
            for (std::size_t i = 0; i < model.params.size(); ++i)
                if (model.params[i].trainable) grads[i] = tape.grad(leaves[i]);
            adam_step(model.params, grads, state.adam, config.lr, config.beta1, config.beta2,
                      config.epsilon);
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.loss = loss_sum / static_cast<double>(samples.size());
        const MetricsReport crop_metrics = f1_and_accuracy(epoch_preds, epoch_labels);
        entry.train_accuracy = crop_metrics.accuracy;
        entry.train_f1 = crop_metrics.f1;

        if (epoch % config.val_interval == 0) {
            const MetricsReport val =
                evaluate_subjects(model, val_records, w, config.eval_stride);
            entry.has_val = true;
            entry.val_accuracy = val.accuracy;
            entry.val_f1 = val.f1;
            const double metric =
                config.metric == TrainConfig::Metric::F1 ? val.f1 : val.accuracy;
            if (!state.has_best || metric > state.best_metric)
                snapshot_best(state, model, metric, epoch);
        }

        state.epoch = epoch;
        result.log.push_back(entry);
        if (log_stream != nullptr) {
            *log_stream << "epoch=" << entry.epoch << " split=train loss=" << entry.loss
                        << " accuracy=" << entry.train_accuracy << " f1=" << entry.train_f1
                        << "\n";
            if (entry.has_val)
                *log_stream << "epoch=" << entry.epoch << " split=val accuracy=" << entry.val_accuracy
                            << " f1=" << entry.val_f1 << "\n";
            log_stream->flush();
        }
    }

    // A run with no validation pass would return untrained "best" weights;
    // config validation (val_interval <= epochs) rules that out, but guard
    // resumed edge cases anyway.
    if (!state.has_best) snapshot_best(state, model, -1.0, state.epoch);
    return result;
}

}  // namespace t4d
