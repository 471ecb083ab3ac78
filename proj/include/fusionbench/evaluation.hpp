#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionbench/backbone.hpp"
#include "fusionbench/datapipe.hpp"
#include "fusionbench/decoder.hpp"
#include "fusionbench/errors.hpp"
#include "fusionbench/stream_encoder.hpp"

namespace fusionbench {

// ---------------------------------------------------------------------------
// Prediction tracks: one (anchor, prediction, ground truth) row per densely
// sampled second of one video.

struct PredictionTrack {
    std::string video_id;
    std::vector<double> anchors;
    std::vector<std::size_t> predicted;
    std::vector<std::size_t> actual;

    void validate() const {
        if (predicted.size() != anchors.size() || actual.size() != anchors.size())
            throw ShapeError("prediction track: column lengths disagree");
        for (std::size_t i = 1; i < anchors.size(); ++i)
            if (!(anchors[i] > anchors[i - 1]))
                throw ShapeError("prediction track: anchors must be strictly increasing");
    }
};

// IoU of one class over one track; absent when the class appears in neither
// predictions nor ground truth.
inline std::optional<double> per_class_iou(const PredictionTrack& track, std::size_t cls) {
    if (track.anchors.empty()) throw ShapeError("per_class_iou: empty track");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < track.anchors.size(); ++i) {
        const bool p = track.predicted[i] == cls;
        const bool a = track.actual[i] == cls;
        if (p && a) ++inter;
        if (p || a) ++uni;
    }
    if (uni == 0) return std::nullopt;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Empirical quantile with linear interpolation between order statistics.
inline double quantile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw ShapeError("quantile: empty input");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double rank = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

struct IoUAggregate {
    double average = 0.0;  // aIoU
    double median = 0.0;   // mIoU
    double sixth = 0.0;    // qIoU, the 1/6 quantile
};

inline IoUAggregate aggregate(const std::vector<double>& iou_values) {
    if (iou_values.empty()) throw ShapeError("aggregate: empty IoU list");
    IoUAggregate result;
    double sum = 0.0;
    for (double v : iou_values) sum += v;
    result.average = sum / static_cast<double>(iou_values.size());
    result.median = quantile_linear(iou_values, 0.5);
    result.sixth = quantile_linear(iou_values, 1.0 / 6.0);
    return result;
}

inline double accuracy(const PredictionTrack& track) {
    if (track.anchors.empty()) throw ShapeError("accuracy: empty track");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < track.anchors.size(); ++i)
        if (track.predicted[i] == track.actual[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(track.anchors.size());
}

// ---------------------------------------------------------------------------
// Report.

struct MetricsReport {
    std::map<std::string, std::map<std::size_t, double>> per_video_iou;
    double a_iou = 0.0;
    double m_iou = 0.0;
    double q_iou = 0.0;
    double acc = 0.0;
    bool include_exception_class = true;
    std::optional<std::size_t> exception_class;
    std::size_t anchor_count = 0;

    // Conventions recorded so alternate protocol readings can be compared.
    std::string quantile_convention = "linear interpolation between order statistics";
    std::string aggregation = "per-video per-class IoU pooled over the test split";
    std::string accuracy_pooling = "sample-level across all videos";
};

inline json metrics_to_json(const MetricsReport& report) {
    json doc;
    doc["aIoU"] = report.a_iou;
    doc["mIoU"] = report.m_iou;
    doc["qIoU"] = report.q_iou;
    doc["accuracy"] = report.acc;
    doc["anchors"] = report.anchor_count;
    doc["variant"] = {{"include_exception_class", report.include_exception_class}};
    if (report.exception_class) doc["variant"]["exception_class"] = *report.exception_class;
    doc["conventions"] = {{"quantile", report.quantile_convention},
                          {"aggregation", report.aggregation},
                          {"accuracy", report.accuracy_pooling}};
    json per_video = json::object();
    for (const auto& [video, by_class] : report.per_video_iou) {
        json entry = json::object();
        for (const auto& [cls, iou] : by_class) entry[std::to_string(cls)] = iou;
        per_video[video] = entry;
    }
    doc["per_video_iou"] = per_video;
    return doc;
}

// ---------------------------------------------------------------------------
// Metric computation over already-collected tracks. IoU values per class are
// always computed on the full track; the exception flag only restricts which
// entries enter the aggregation and which anchors enter the accuracy.

inline MetricsReport compute_metrics(const std::vector<PredictionTrack>& tracks,
                                     std::size_t n_classes,
                                     std::optional<std::size_t> exception_class,
                                     bool include_exception_class) {
    if (tracks.empty()) throw ShapeError("compute_metrics: no prediction tracks");
    MetricsReport report;
    report.exception_class = exception_class;
    report.include_exception_class = include_exception_class;

    std::vector<double> pooled;
    for (const PredictionTrack& track : tracks) {
        track.validate();
        for (std::size_t cls = 0; cls < n_classes; ++cls) {
            const auto iou = per_class_iou(track, cls);
            if (!iou) continue;
            report.per_video_iou[track.video_id][cls] = *iou;
            if (!include_exception_class && exception_class && cls == *exception_class) continue;
            pooled.push_back(*iou);
        }
    }
    if (pooled.empty()) throw ShapeError("compute_metrics: no IoU values to aggregate");
    const IoUAggregate agg = aggregate(pooled);
    report.a_iou = agg.average;
    report.m_iou = agg.median;
    report.q_iou = agg.sixth;

    std::size_t hits = 0, total = 0;
    for (const PredictionTrack& track : tracks) {
        for (std::size_t i = 0; i < track.anchors.size(); ++i) {
            if (!include_exception_class && exception_class &&
                track.actual[i] == *exception_class)
                continue;
            ++total;
            if (track.predicted[i] == track.actual[i]) ++hits;
        }
    }
    if (total == 0) throw ShapeError("compute_metrics: no anchors left for accuracy");
    report.acc = static_cast<double>(hits) / static_cast<double>(total);
    report.anchor_count = total;
    return report;
}

// ---------------------------------------------------------------------------
// Dense evaluation of a frozen model over a dataset split.

inline std::vector<PredictionTrack> collect_tracks(const ClipDataset& dataset,
                                                   const BackboneProvider& backbone,
                                                   StreamEncoder* encoder,
                                                   AttentiveClassifierParams& decoder) {
    std::vector<PredictionTrack> tracks;
    for (std::size_t vi = 0; vi < dataset.video_count(); ++vi) {
        PredictionTrack track;
        track.video_id = dataset.video(vi).meta.id;
        for (double anchor : dataset.video(vi).anchors) {
            const ClipSample sample = dataset.sample_at(vi, anchor);
            Matrix state = backbone.encode(sample.clip);
            if (encoder) {
                if (sample.stream_window.channel_count() == 0)
                    throw ConfigError("evaluate: streams requested but video '" + track.video_id +
                                      "' provides none");
                state = encoder->encode(sample.stream_window, state);
            }
            track.anchors.push_back(anchor);
            track.predicted.push_back(argmax_class(classify(state, decoder)));
            track.actual.push_back(sample.label);
        }
        if (!track.anchors.empty()) tracks.push_back(std::move(track));
    }
    if (tracks.empty()) throw ConfigError("evaluate: split produced no anchors");
    return tracks;
}

inline MetricsReport evaluate_model(const ClipDataset& dataset, const BackboneProvider& backbone,
                                    StreamEncoder* encoder, AttentiveClassifierParams& decoder,
                                    bool include_exception_class) {
    const std::vector<PredictionTrack> tracks =
        collect_tracks(dataset, backbone, encoder, decoder);
    return compute_metrics(tracks, dataset.task().n_classes, dataset.task().exception_class,
                           include_exception_class);
}

}  // namespace fusionbench
