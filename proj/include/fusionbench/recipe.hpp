#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusionbench/backbone.hpp"
#include "fusionbench/clip_sample.hpp"
#include "fusionbench/decoder.hpp"
#include "fusionbench/errors.hpp"
#include "fusionbench/stream_encoder.hpp"

namespace fusionbench {

// ---------------------------------------------------------------------------
// Schedules. Linear warmup into a truncated cosine: the cosine's nominal
// period is stretch * (remaining steps) but only the first (remaining steps)
// of it are ever evaluated, so stretch 1.25 stops at 80% of the arc.

struct ScheduleSpec {
    std::size_t epochs = 10;
    std::size_t samples_per_epoch = 1000;
    double lr_start = 1e-6;
    double lr_max = 1e-4;
    double lr_end = 0.0;
    double wd_start = 1e-4;
    double wd_end = 1e-4;
    std::size_t warmup_epochs = 1;
    double stretch = 1.0;

    void validate() const {
        if (epochs < 1) throw ConfigError("schedule: epochs must be >= 1");
        if (samples_per_epoch < 1) throw ConfigError("schedule: samples per epoch must be >= 1");
        if (lr_start < 0.0 || lr_max < 0.0 || lr_end < 0.0 || wd_start < 0.0 || wd_end < 0.0)
            throw ConfigError("schedule: rates must be non-negative");
        if (stretch < 1.0) throw ConfigError("schedule: stretch factor must be >= 1");
    }
};

// Table-style presets selectable by name in run configs.
inline std::optional<ScheduleSpec> schedule_preset(const std::string& name) {
    ScheduleSpec s;
    if (name == "heico-step2") {
        s.epochs = 25;
        s.samples_per_epoch = 50000;
        s.lr_start = 1e-3;
        s.lr_max = 1e-3;
        s.lr_end = 0.0;
        s.wd_start = 1e-2;
        s.wd_end = 1e-6;
        s.stretch = 1.0;
        return s;
    }
    if (name == "inhouse-step2") {
        s.epochs = 25;
        s.samples_per_epoch = 1000;
        s.lr_start = 1e-5;
        s.lr_max = 1e-3;
        s.lr_end = 0.0;
        s.wd_start = 1e-2;
        s.wd_end = 1e-2;
        s.stretch = 1.25;
        return s;
    }
    if (name == "steps34") {
        s.epochs = 10;
        s.samples_per_epoch = 1000;
        s.lr_start = 1e-6;
        s.lr_max = 1e-4;
        s.lr_end = 0.0;
        s.wd_start = 1e-4;
        s.wd_end = 1e-4;
        s.stretch = 1.25;
        return s;
    }
    return std::nullopt;
}

inline std::size_t steps_per_epoch(const ScheduleSpec& spec, std::size_t batch_size) {
    return std::max<std::size_t>(1, spec.samples_per_epoch / batch_size);
}

inline std::size_t total_optimizer_steps(const ScheduleSpec& spec, std::size_t batch_size) {
    return spec.epochs * steps_per_epoch(spec, batch_size);
}

namespace detail {

// Truncated cosine between two endpoints, evaluated at i of n steps. The
// endpoint convention is i/(n-1): with stretch 1 the final step lands on
// `end` exactly.
inline double truncated_cosine(std::size_t i, std::size_t n, double start, double end,
                               double stretch) {
    double progress = (n <= 1) ? 1.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    progress /= stretch;
    if (progress <= 0.0) return start;
    if (progress >= 1.0) return end;
    return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace detail

inline double lr_at(std::size_t step_index, std::size_t total_steps, const ScheduleSpec& spec) {
    if (step_index >= total_steps) throw ConfigError("lr_at: step index out of range");
    std::size_t warmup = total_steps * spec.warmup_epochs / spec.epochs;
    if (warmup >= total_steps) warmup = total_steps - 1;
    if (step_index < warmup) {
        const double frac = static_cast<double>(step_index) / static_cast<double>(warmup);
        return spec.lr_start + (spec.lr_max - spec.lr_start) * frac;
    }
    return detail::truncated_cosine(step_index - warmup, total_steps - warmup, spec.lr_max,
                                    spec.lr_end, spec.stretch);
}

inline double wd_at(std::size_t step_index, std::size_t total_steps, const ScheduleSpec& spec) {
    if (step_index >= total_steps) throw ConfigError("wd_at: step index out of range");
    return detail::truncated_cosine(step_index, total_steps, spec.wd_start, spec.wd_end,
                                    spec.stretch);
}

// ---------------------------------------------------------------------------
// Loss composition: task term plus the weighted state-change penalty
// (mean-over-elements squared difference, so the weight is comparable across
// state shapes).

struct LossReport {
    double task = 0.0;
    double penalty = 0.0;
    double total = 0.0;
};

inline LossReport combined_loss(const Matrix& logits, std::size_t label, const Matrix& s_out,
                                const Matrix& s_in, double lambda) {
    LossReport report;
    report.task = cross_entropy(logits, label);
    report.penalty = mean_squared_diff(s_out, s_in);
    report.total = report.task + lambda * report.penalty;
    return report;
}

// ---------------------------------------------------------------------------
// Parameter-state machine for the four training steps.

enum class ParameterState { Frozen, Fluid, Hot };

inline std::map<std::string, ParameterState> component_states(int step_id) {
    switch (step_id) {
        case 1:
            return {{"backbone", ParameterState::Hot}};
        case 2:
            return {{"backbone", ParameterState::Frozen}, {"decoder", ParameterState::Hot}};
        case 3:
            return {{"backbone", ParameterState::Frozen},
                    {"decoder", ParameterState::Fluid},
                    {"stream_encoder", ParameterState::Hot}};
        case 4:
            return {{"backbone", ParameterState::Frozen},
                    {"stream_encoder", ParameterState::Frozen},
                    {"decoder", ParameterState::Hot}};
        default:
            throw ConfigError("unknown training step id " + std::to_string(step_id));
    }
}

struct StepPlan {
    int step_id = 2;
    ScheduleSpec schedule;
    double lambda = 1e-3;
    std::size_t batch_size = 4;
};

// ---------------------------------------------------------------------------
// Class-balanced sampling: pick a class uniformly among the classes present,
// then a clip uniformly within that class.

class ClipSource {
public:
    virtual ~ClipSource() = default;
    virtual std::vector<std::size_t> classes_present() const = 0;
    virtual std::size_t class_size(std::size_t cls) const = 0;
    virtual ClipSample sample(std::size_t cls, std::size_t index) const = 0;
};

struct SampleRef {
    std::size_t cls = 0;
    std::size_t index = 0;
};

inline std::vector<SampleRef> sample_batch_refs(const ClipSource& source, std::size_t batch_size,
                                                Rng& rng) {
    const std::vector<std::size_t> classes = source.classes_present();
    if (classes.empty()) throw ConfigError("sample_batch: dataset has no samples");
    for (std::size_t cls : classes)
        if (source.class_size(cls) == 0)
            throw ConfigError("sample_batch: class " + std::to_string(cls) + " has no samples");
    std::vector<SampleRef> refs;
    refs.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t cls = classes[rng.index(classes.size())];
        refs.push_back({cls, rng.index(source.class_size(cls))});
    }
    return refs;
}

inline std::vector<ClipSample> sample_batch(const ClipSource& source, std::size_t batch_size,
                                            Rng& rng) {
    std::vector<ClipSample> batch;
    batch.reserve(batch_size);
    for (const SampleRef& ref : sample_batch_refs(source, batch_size, rng))
        batch.push_back(source.sample(ref.cls, ref.index));
    return batch;
}

// ---------------------------------------------------------------------------
// Step runners. Each runner updates exactly the component the state machine
// marks hot; everything else stays bit-identical.

struct TrainLogRecord {
    std::size_t step = 0;
    double task = 0.0;
    double penalty = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double wd = 0.0;
};

using TrainLogSink = std::function<void(const TrainLogRecord&)>;

namespace detail {

// Backbone states are pure functions of frozen weights, so they are cached
// per (class, index) across the whole run.
class StateCache {
public:
    const Matrix& get(const SampleRef& ref, const BackboneProvider& provider,
                      const ClipSample& sample) {
        const auto key = std::make_pair(ref.cls, ref.index);
        auto it = cache_.find(key);
        if (it == cache_.end())
            it = cache_.emplace(key, provider.encode(sample.clip)).first;
        return it->second;
    }

private:
    std::map<std::pair<std::size_t, std::size_t>, Matrix> cache_;
};

inline void check_finite_loss(double loss, int step_id, std::size_t step_index) {
    if (!std::isfinite(loss))
        throw DivergenceError("step " + std::to_string(step_id) + " diverged at optimizer step " +
                              std::to_string(step_index) + ": loss is not finite");
}

}  // namespace detail

// Step 2: decoder trains on the backbone's initial state.
inline void run_step2(const ClipSource& dataset, const BackboneProvider& backbone,
                      AttentiveClassifierParams& decoder, const StepPlan& plan, Rng& rng,
                      AdamW& opt, const TrainLogSink& log = nullptr) {
    plan.schedule.validate();
    const std::size_t total = total_optimizer_steps(plan.schedule, plan.batch_size);
    detail::StateCache states;
    for (std::size_t step = 0; step < total; ++step) {
        const double lr = lr_at(step, total, plan.schedule);
        const double wd = wd_at(step, total, plan.schedule);
        zero_grads([&](const ParamFn& fn) { decoder.visit_params(fn); });
        double loss = 0.0;
        const auto refs = sample_batch_refs(dataset, plan.batch_size, rng);
        const double inv_batch = 1.0 / static_cast<double>(refs.size());
        for (const SampleRef& ref : refs) {
            const ClipSample sample = dataset.sample(ref.cls, ref.index);
            const Matrix& s0 = states.get(ref, backbone, sample);
            ClassifierCache cache;
            const Matrix logits = classify(s0, decoder, &cache);
            loss += cross_entropy(logits, sample.label) * inv_batch;
            Matrix d_logits = cross_entropy_backward(logits, sample.label);
            scale_in_place(d_logits, inv_batch);
            classify_backward(decoder, cache, d_logits);
        }
        detail::check_finite_loss(loss, 2, step);
        opt.step(lr, wd, [&](const ParamFn& fn) { decoder.visit_params(fn); });
        if (log) log({step, loss, 0.0, loss, lr, wd});
    }
}

// Step 3: gradients flow through the decoder (fluid) into the stream
// encoder; only the encoder's parameters receive optimizer updates. The task
// loss is combined with the state-change penalty.
inline void run_step3(const ClipSource& dataset, const BackboneProvider& backbone,
                      AttentiveClassifierParams& decoder, StreamEncoder& encoder,
                      const StepPlan& plan, Rng& rng, AdamW& opt,
                      const TrainLogSink& log = nullptr) {
    plan.schedule.validate();
    const std::size_t total = total_optimizer_steps(plan.schedule, plan.batch_size);
    detail::StateCache states;
    for (std::size_t step = 0; step < total; ++step) {
        const double lr = lr_at(step, total, plan.schedule);
        const double wd = wd_at(step, total, plan.schedule);
        zero_grads([&](const ParamFn& fn) { encoder.visit_params(fn); });
        zero_grads([&](const ParamFn& fn) { decoder.visit_params(fn); });
        double task_sum = 0.0, penalty_sum = 0.0;
        const auto refs = sample_batch_refs(dataset, plan.batch_size, rng);
        const double inv_batch = 1.0 / static_cast<double>(refs.size());
        for (const SampleRef& ref : refs) {
            const ClipSample sample = dataset.sample(ref.cls, ref.index);
            const Matrix& s0 = states.get(ref, backbone, sample);

            StreamTokenizerCache tok_cache;
            std::vector<FusionLayerCache> fusion_caches;
            const Matrix s_out =
                encoder.encode(sample.stream_window, s0, &rng, &tok_cache, &fusion_caches);

            ClassifierCache cls_cache;
            const Matrix logits = classify(s_out, decoder, &cls_cache);
            const LossReport report = combined_loss(logits, sample.label, s_out, s0, plan.lambda);
            task_sum += report.task * inv_batch;
            penalty_sum += report.penalty * inv_batch;

            // Decoder grads accumulate (and are discarded): it stays in the
            // gradient flow without receiving updates.
            Matrix d_logits = cross_entropy_backward(logits, sample.label);
            scale_in_place(d_logits, inv_batch);
            Matrix d_state = classify_backward(decoder, cls_cache, d_logits);
            const double penalty_scale =
                2.0 * plan.lambda * inv_batch / static_cast<double>(s_out.size());
            for (std::size_t i = 0; i < d_state.size(); ++i)
                d_state.raw()[i] += penalty_scale * (s_out.raw()[i] - s0.raw()[i]);

            Matrix d_s0, d_tokens;
            encode_streams_backward(encoder.fusion, fusion_caches, d_state, d_s0, d_tokens);
            encoder.tokenizer.backward(tok_cache, d_tokens);
        }
        const double total_loss = task_sum + plan.lambda * penalty_sum;
        detail::check_finite_loss(total_loss, 3, step);
        opt.step(lr, wd, [&](const ParamFn& fn) { encoder.visit_params(fn); });
        if (log) log({step, task_sum, penalty_sum, total_loss, lr, wd});
    }
}

// Step 4: the stream encoder is frozen (eval mode, no dropout); the decoder
// retrains on the fused state.
inline void run_step4(const ClipSource& dataset, const BackboneProvider& backbone,
                      StreamEncoder& encoder, AttentiveClassifierParams& decoder,
                      const StepPlan& plan, Rng& rng, AdamW& opt,
                      const TrainLogSink& log = nullptr) {
    plan.schedule.validate();
    const std::size_t total = total_optimizer_steps(plan.schedule, plan.batch_size);
    detail::StateCache states;
    std::map<std::pair<std::size_t, std::size_t>, Matrix> fused_cache;
    for (std::size_t step = 0; step < total; ++step) {
        const double lr = lr_at(step, total, plan.schedule);
        const double wd = wd_at(step, total, plan.schedule);
        zero_grads([&](const ParamFn& fn) { decoder.visit_params(fn); });
        double loss = 0.0;
        const auto refs = sample_batch_refs(dataset, plan.batch_size, rng);
        const double inv_batch = 1.0 / static_cast<double>(refs.size());
        for (const SampleRef& ref : refs) {
            const ClipSample sample = dataset.sample(ref.cls, ref.index);
            const auto key = std::make_pair(ref.cls, ref.index);
            auto it = fused_cache.find(key);
            if (it == fused_cache.end()) {
                const Matrix& s0 = states.get(ref, backbone, sample);
                it = fused_cache.emplace(key, encoder.encode(sample.stream_window, s0)).first;
            }
            const Matrix& s_fused = it->second;
            ClassifierCache cache;
            const Matrix logits = classify(s_fused, decoder, &cache);
            loss += cross_entropy(logits, sample.label) * inv_batch;
            Matrix d_logits = cross_entropy_backward(logits, sample.label);
            scale_in_place(d_logits, inv_batch);
            classify_backward(decoder, cache, d_logits);
        }
        detail::check_finite_loss(loss, 4, step);
        opt.step(lr, wd, [&](const ParamFn& fn) { decoder.visit_params(fn); });
        if (log) log({step, loss, 0.0, loss, lr, wd});
    }
}

}  // namespace fusionbench
