#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionbench/backbone.hpp"
#include "fusionbench/clip_sample.hpp"
#include "fusionbench/errors.hpp"
#include "fusionbench/recipe.hpp"
#include "fusionbench/rng.hpp"
#include "fusionbench/stream_encoder.hpp"
#include "fusionbench/tensor_io.hpp"

namespace fusionbench {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest schema.

struct TaskDescriptor {
    std::string name = "synthetic";  // synthetic | phase | los | cci
    std::size_t n_classes = 2;
    std::optional<std::size_t> exception_class;  // class 13 for the phase task

    static TaskDescriptor named(const std::string& name) {
        TaskDescriptor t;
        t.name = name;
        if (name == "phase") {
            t.n_classes = 14;
            t.exception_class = 13;
        } else if (name == "los" || name == "cci" || name == "synthetic") {
            t.n_classes = 2;
        } else {
            throw ConfigError("unknown task name: " + name);
        }
        return t;
    }
};

struct OutcomeRecord {
    std::string id;
    double los_days = 0.0;
    double cci = 0.0;

    void validate() const {
        if (los_days < 0.0) throw ConfigError("outcome " + id + ": length of stay must be >= 0");
        if (cci < 0.0 || cci > 100.0)
            throw ConfigError("outcome " + id + ": CCI must lie in [0, 100]");
    }
};

struct ManifestVideo {
    std::string id;
    std::string frames_path;   // raw tensor container, (T x H x W x C) f32
    std::string labels_path;   // csv: time_s,label
    std::string streams_path;  // csv: time_s,<channel> [<unit>],...
    std::string split;         // train | val | test
    double fps = 1.0;
    double duration = 0.0;
};

struct DatasetManifest {
    TaskDescriptor task;
    std::vector<ManifestVideo> videos;
    std::map<std::string, OutcomeRecord> outcomes;
    std::filesystem::path base_dir;  // directory of the manifest file

    std::string resolve(const std::string& relative) const {
        return (base_dir / relative).string();
    }

    void validate() const {
        if (task.n_classes < 2) throw ConfigError("manifest: task needs at least two classes");
        std::set<std::string> ids;
        for (const auto& v : videos) {
            if (v.id.empty()) throw ConfigError("manifest: video with empty id");
            if (!ids.insert(v.id).second)
                throw ConfigError("manifest: video id '" + v.id +
                                  "' assigned more than once (splits must be disjoint)");
            if (v.split != "train" && v.split != "val" && v.split != "test")
                throw ConfigError("manifest: video '" + v.id + "' has unknown split '" + v.split +
                                  "'");
            if (v.fps <= 0.0) throw ConfigError("manifest: video '" + v.id + "' has fps <= 0");
            if (v.duration <= 0.0)
                throw ConfigError("manifest: video '" + v.id + "' has duration <= 0");
            if (v.frames_path.empty() || v.labels_path.empty())
                throw ConfigError("manifest: video '" + v.id + "' missing frames or labels path");
        }
        for (const auto& [id, rec] : outcomes) rec.validate();
    }
};

inline json manifest_to_json(const DatasetManifest& manifest) {
    json doc;
    doc["schema"] = "fusionbench-manifest-v1";
    doc["task"] = {{"name", manifest.task.name}, {"n_classes", manifest.task.n_classes}};
    if (manifest.task.exception_class)
        doc["task"]["exception_class"] = *manifest.task.exception_class;
    doc["videos"] = json::array();
    for (const auto& v : manifest.videos) {
        doc["videos"].push_back({{"id", v.id},
                                 {"frames", v.frames_path},
                                 {"labels", v.labels_path},
                                 {"streams", v.streams_path},
                                 {"split", v.split},
                                 {"fps", v.fps},
                                 {"duration", v.duration}});
    }
    if (!manifest.outcomes.empty()) {
        json outs = json::object();
        for (const auto& [id, rec] : manifest.outcomes)
            outs[id] = {{"los_days", rec.los_days}, {"cci", rec.cci}};
        doc["outcomes"] = outs;
    }
    return doc;
}

inline void write_manifest(const DatasetManifest& manifest, const std::string& path) {
    manifest.validate();
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open manifest for writing: " + path);
    out << manifest_to_json(manifest).dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ConfigError("manifest " + path + ": " + e.what());
    }
    DatasetManifest manifest;
    manifest.base_dir = std::filesystem::path(path).parent_path();
    try {
        if (doc.value("schema", "") != "fusionbench-manifest-v1")
            throw ConfigError("manifest " + path + ": missing or unknown schema tag");
        const json& task = doc.at("task");
        manifest.task.name = task.at("name").get<std::string>();
        manifest.task.n_classes = task.at("n_classes").get<std::size_t>();
        if (task.contains("exception_class") && !task["exception_class"].is_null())
            manifest.task.exception_class = task["exception_class"].get<std::size_t>();
        for (const json& v : doc.at("videos")) {
            ManifestVideo video;
            video.id = v.at("id").get<std::string>();
            video.frames_path = v.at("frames").get<std::string>();
            video.labels_path = v.at("labels").get<std::string>();
            video.streams_path = v.value("streams", "");
            video.split = v.at("split").get<std::string>();
            video.fps = v.at("fps").get<double>();
            video.duration = v.at("duration").get<double>();
            manifest.videos.push_back(std::move(video));
        }
        if (doc.contains("outcomes")) {
            for (auto it = doc["outcomes"].begin(); it != doc["outcomes"].end(); ++it) {
                OutcomeRecord rec;
                rec.id = it.key();
                rec.los_days = it.value().at("los_days").get<double>();
                rec.cci = it.value().at("cci").get<double>();
                manifest.outcomes[rec.id] = rec;
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError("manifest " + path + ": " + e.what());
    }
    manifest.validate();
    return manifest;
}

// ---------------------------------------------------------------------------
// Out-of-body detection: frames replaced by (nearly) pure blue.

struct FrameView {
    std::size_t height = 0, width = 0, channels = 0;
    const float* data = nullptr;  // (H x W x C)

    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }
};

inline bool detect_out_of_body(const FrameView& frame, double tolerance = 0.1) {
    if (frame.channels != 3)
        throw ShapeError("detect_out_of_body: expected 3 channels, got " +
                         std::to_string(frame.channels));
    std::size_t blue = 0;
    const std::size_t total = frame.height * frame.width;
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x) {
            const double r = frame.at(y, x, 0);
            const double g = frame.at(y, x, 1);
            const double b = frame.at(y, x, 2);
            if (std::abs(r) <= tolerance && std::abs(g) <= tolerance &&
                std::abs(b - 1.0) <= tolerance)
                ++blue;
        }
    return static_cast<double>(blue) > 0.99 * static_cast<double>(total);
}

// Contiguous out-of-body frame runs as [start, end) second intervals.
inline std::vector<std::pair<double, double>> out_of_body_segments(
    const std::vector<float>& frames, std::size_t n_frames, std::size_t height, std::size_t width,
    std::size_t channels, double fps, double tolerance = 0.1) {
    std::vector<std::pair<double, double>> segments;
    std::optional<std::size_t> run_start;
    for (std::size_t t = 0; t < n_frames; ++t) {
        FrameView view{height, width, channels, frames.data() + t * height * width * channels};
        const bool oob = detect_out_of_body(view, tolerance);
        if (oob && !run_start) run_start = t;
        if (!oob && run_start) {
            segments.emplace_back(static_cast<double>(*run_start) / fps,
                                  static_cast<double>(t) / fps);
            run_start.reset();
        }
    }
    if (run_start)
        segments.emplace_back(static_cast<double>(*run_start) / fps,
                              static_cast<double>(n_frames) / fps);
    return segments;
}

// ---------------------------------------------------------------------------
// Dense anchor grid at fixed intervals; anchors whose clip span overlaps a
// skipped segment are removed entirely.

inline std::vector<double> dense_clip_index(
    double video_duration, double clip_duration, double interval = 1.0,
    const std::vector<std::pair<double, double>>& skip = {}) {
    if (clip_duration > video_duration + 1e-9)
        throw ConfigError("dense_clip_index: clip longer than video");
    if (interval <= 0.0) throw ConfigError("dense_clip_index: interval must be positive");
    std::vector<double> anchors;
    for (std::size_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * interval;
        if (t + clip_duration > video_duration + 1e-9) break;
        bool overlaps = false;
        for (const auto& [a, b] : skip) {
            if (t < b - 1e-12 && a < t + clip_duration - 1e-12) {
                overlaps = true;
                break;
            }
        }
        if (!overlaps) anchors.push_back(t);
    }
    return anchors;
}

// ---------------------------------------------------------------------------
// Stream resampling: linear interpolation inside the recorded range, clamped
// to the nearest endpoint outside it.

inline StreamSeries resample_stream(const StreamSeries& stream,
                                    const std::vector<double>& query_times) {
    if (stream.length() == 0) throw ConfigError("resample_stream: empty stream");
    stream.validate();
    StreamSeries out;
    out.timestamps = query_times;
    out.channel_names = stream.channel_names;
    out.units = stream.units;
    for (std::size_t c = 0; c < stream.channel_count(); ++c) {
        std::vector<double> vals;
        vals.reserve(query_times.size());
        for (double t : query_times) {
            const auto& ts = stream.timestamps;
            const auto& ys = stream.values[c];
            if (t <= ts.front()) {
                vals.push_back(ys.front());
            } else if (t >= ts.back()) {
                vals.push_back(ys.back());
            } else {
                const auto it = std::upper_bound(ts.begin(), ts.end(), t);
                const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
                const std::size_t lo = hi - 1;
                const double frac = (t - ts[lo]) / (ts[hi] - ts[lo]);
                vals.push_back(ys[lo] + frac * (ys[hi] - ys[lo]));
            }
        }
        out.values.push_back(std::move(vals));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Median binarization: class 0 at or below the threshold, class 1 above. The
// threshold is computed once on the provided population and reused.

struct BinarizationResult {
    double threshold = 0.0;
    std::vector<std::size_t> labels;
};

inline double median_of(std::vector<double> values) {
    if (values.empty()) throw ConfigError("median: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline BinarizationResult binarize_by_median(const std::vector<double>& values) {
    BinarizationResult result;
    result.threshold = median_of(values);
    result.labels.reserve(values.size());
    for (double v : values) result.labels.push_back(v <= result.threshold ? 0 : 1);
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generator. Videos are textured noise whose mean level
// optionally encodes the frame label; streams are AR(1) noise whose mean
// level optionally encodes it. With label_source = streams the video content
// is statistically independent of the labels.

enum class LabelSource { Video, Streams, Both };

inline std::string to_string(LabelSource source) {
    switch (source) {
        case LabelSource::Video: return "video";
        case LabelSource::Streams: return "streams";
        case LabelSource::Both: return "both";
    }
    return "streams";
}

inline LabelSource label_source_from_string(const std::string& s) {
    if (s == "video") return LabelSource::Video;
    if (s == "streams") return LabelSource::Streams;
    if (s == "both") return LabelSource::Both;
    throw ConfigError("unknown label source: " + s);
}

struct SyntheticSpec {
    std::size_t n_videos = 8;
    double duration = 64.0;  // seconds
    double fps = 4.0;
    std::size_t height = 16, width = 16;
    std::size_t n_channels = 4;  // stream channels
    LabelSource label_source = LabelSource::Streams;
    std::size_t n_classes = 2;
    double stream_hz = 1.0;
    double mean_segment_seconds = 12.0;

    void validate() const {
        if (n_videos < 3) throw ConfigError("synthetic: need at least 3 videos for the splits");
        if (duration <= 2.0 || fps <= 0.0) throw ConfigError("synthetic: bad duration/fps");
        if (n_classes < 2) throw ConfigError("synthetic: need at least 2 classes");
        if (n_channels < 1) throw ConfigError("synthetic: need at least 1 stream channel");
        if (height < 4 || width < 4) throw ConfigError("synthetic: frames too small");
    }
};

inline DatasetManifest make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed,
                                              const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "frames");
    fs::create_directories(fs::path(out_dir) / "labels");
    fs::create_directories(fs::path(out_dir) / "streams");

    Rng rng(seed);
    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    manifest.task = TaskDescriptor::named("synthetic");
    manifest.task.n_classes = spec.n_classes;

    const std::size_t frames_total = static_cast<std::size_t>(std::llround(spec.duration * spec.fps));
    const bool video_signal =
        spec.label_source == LabelSource::Video || spec.label_source == LabelSource::Both;
    const bool stream_signal =
        spec.label_source == LabelSource::Streams || spec.label_source == LabelSource::Both;

    for (std::size_t vi = 0; vi < spec.n_videos; ++vi) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "vid%03zu", vi);
        const std::string id = idbuf;

        // Frame labels: blocks of one segment per class in shuffled order,
        // equal spans within a block, final block sized to fill the video.
        // Per-video class counts stay balanced to within a few frames.
        std::vector<std::size_t> labels(frames_total);
        {
            std::vector<std::size_t> order(spec.n_classes);
            std::iota(order.begin(), order.end(), 0);
            std::size_t frame = 0;
            while (frame < frames_total) {
                const std::size_t remaining = frames_total - frame;
                const double seconds = spec.mean_segment_seconds * rng.uniform(0.6, 1.4);
                std::size_t span = std::max<std::size_t>(
                    1, static_cast<std::size_t>(std::llround(seconds * spec.fps)));
                if (span * spec.n_classes > remaining)
                    span = std::max<std::size_t>(1, remaining / spec.n_classes);
                rng.shuffle(order);
                for (std::size_t cls : order)
                    for (std::size_t k = 0; k < span && frame < frames_total; ++k, ++frame)
                        labels[frame] = cls;
                // Sub-class-count tail: extend the last class to the end.
                if (frames_total - frame < spec.n_classes)
                    while (frame < frames_total) labels[frame] = order.back(), ++frame;
            }
        }

        // Frames: uniform noise around a level that encodes the label only in
        // video mode; a label-independent slow wave adds texture.
        RawTensor frames;
        frames.dims = {static_cast<std::uint32_t>(frames_total),
                       static_cast<std::uint32_t>(spec.height),
                       static_cast<std::uint32_t>(spec.width), 3};
        frames.dtype = ElementType::F32;
        frames.f32.resize(frames_total * spec.height * spec.width * 3);
        const double wave_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        std::size_t w_idx = 0;
        for (std::size_t t = 0; t < frames_total; ++t) {
            const double level =
                video_signal
                    ? 0.3 + 0.4 * static_cast<double>(labels[t]) /
                                static_cast<double>(spec.n_classes - 1)
                    : 0.5;
            for (std::size_t y = 0; y < spec.height; ++y)
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const double wave =
                        0.05 * std::sin(2.0 * 3.14159265358979323846 *
                                            static_cast<double>(x) /
                                            static_cast<double>(spec.width) +
                                        wave_phase);
                    for (std::size_t ch = 0; ch < 3; ++ch, ++w_idx) {
                        const double noise = 0.15 * (2.0 * rng.uniform() - 1.0);
                        frames.f32[w_idx] =
                            static_cast<float>(std::clamp(level + wave + noise, 0.0, 1.0));
                    }
                }
        }
        const std::string frames_rel = "frames/" + id + ".fbt";
        write_raw_tensor((fs::path(out_dir) / frames_rel).string(), frames);

        // Label track csv.
        CsvTable label_csv;
        label_csv.header = {"time_s", "label"};
        for (std::size_t t = 0; t < frames_total; ++t)
            label_csv.rows.push_back(
                {static_cast<double>(t) / spec.fps, static_cast<double>(labels[t])});
        const std::string labels_rel = "labels/" + id + ".csv";
        write_csv((fs::path(out_dir) / labels_rel).string(), label_csv);

        // Streams at their own rate: AR(1) noise plus the label-dependent
        // offset resampled from the frame labels.
        CsvTable stream_csv;
        stream_csv.header = {"time_s"};
        for (std::size_t c = 0; c < spec.n_channels; ++c)
            stream_csv.header.push_back("ch" + std::to_string(c) + " [au]");
        const std::size_t stream_samples =
            static_cast<std::size_t>(std::llround(spec.duration * spec.stream_hz));
        std::vector<double> ar_state(spec.n_channels, 0.0);
        for (std::size_t i = 0; i < stream_samples; ++i) {
            const double t = static_cast<double>(i) / spec.stream_hz;
            std::size_t frame = static_cast<std::size_t>(std::llround(t * spec.fps));
            frame = std::min(frame, frames_total - 1);
            const double offset =
                stream_signal
                    ? (static_cast<double>(labels[frame]) -
                       0.5 * static_cast<double>(spec.n_classes - 1))
                    : 0.0;
            std::vector<double> row{t};
            for (std::size_t c = 0; c < spec.n_channels; ++c) {
                ar_state[c] = 0.9 * ar_state[c] + 0.2 * rng.normal();
                row.push_back(offset + ar_state[c]);
            }
            stream_csv.rows.push_back(std::move(row));
        }
        const std::string streams_rel = "streams/" + id + ".csv";
        write_csv((fs::path(out_dir) / streams_rel).string(), stream_csv);

        ManifestVideo video;
        video.id = id;
        video.frames_path = frames_rel;
        video.labels_path = labels_rel;
        video.streams_path = streams_rel;
        video.fps = spec.fps;
        video.duration = spec.duration;
        // Deterministic split layout: 2 of every 4 to train, 1 val, 1 test.
        switch (vi % 4) {
            case 2: video.split = "val"; break;
            case 3: video.split = "test"; break;
            default: video.split = "train"; break;
        }
        manifest.videos.push_back(std::move(video));
    }

    write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

// ---------------------------------------------------------------------------
// Loaded dataset: frames, labels, resampled streams, out-of-body segments,
// and the dense anchor index per split. Implements the balanced-sampler
// source for training and per-video access for evaluation.

struct LoadedVideo {
    ManifestVideo meta;
    std::size_t frames = 0, height = 0, width = 0, channels = 0;
    std::vector<float> data;
    std::vector<std::size_t> labels;        // per frame
    StreamSeries frame_streams;             // resampled onto frame timestamps
    std::vector<std::pair<double, double>> oob_segments;
    std::vector<double> anchors;
};

struct DatasetOptions {
    std::size_t clip_frames = 8;
    double anchor_interval = 1.0;
    double blue_tolerance = 0.1;
};

class ClipDataset : public ClipSource {
public:
    ClipDataset(const DatasetManifest& manifest, const std::string& split,
                const DatasetOptions& options)
        : task_(manifest.task), options_(options) {
        for (const auto& meta : manifest.videos) {
            if (meta.split != split) continue;
            videos_.push_back(load_video(manifest, meta));
        }
        if (videos_.empty())
            throw ConfigError("dataset: split '" + split + "' has no videos");
        build_anchor_index();
    }

    const TaskDescriptor& task() const { return task_; }
    const DatasetOptions& options() const { return options_; }

    // --- sampler interface -------------------------------------------------
    std::vector<std::size_t> classes_present() const override {
        std::vector<std::size_t> classes;
        for (const auto& [cls, refs] : by_class_) classes.push_back(cls);
        return classes;
    }

    std::size_t class_size(std::size_t cls) const override {
        const auto it = by_class_.find(cls);
        return it == by_class_.end() ? 0 : it->second.size();
    }

    ClipSample sample(std::size_t cls, std::size_t index) const override {
        const auto it = by_class_.find(cls);
        if (it == by_class_.end() || index >= it->second.size())
            throw ConfigError("dataset: sample reference out of range");
        const auto& [video_idx, anchor] = it->second[index];
        return cut_sample(video_idx, anchor);
    }

    // --- evaluation interface ----------------------------------------------
    std::size_t video_count() const { return videos_.size(); }
    const LoadedVideo& video(std::size_t i) const { return *videos_[i]; }
    ClipSample sample_at(std::size_t video_idx, double anchor) const {
        return cut_sample(video_idx, anchor);
    }

    // Per-class anchor counts, reported at load time.
    std::map<std::size_t, std::size_t> class_histogram() const {
        std::map<std::size_t, std::size_t> hist;
        for (const auto& [cls, refs] : by_class_) hist[cls] = refs.size();
        return hist;
    }

private:
    std::shared_ptr<LoadedVideo> load_video(const DatasetManifest& manifest,
                                            const ManifestVideo& meta) const {
        auto video = std::make_shared<LoadedVideo>();
        video->meta = meta;

        const RawTensor tensor = read_raw_tensor(manifest.resolve(meta.frames_path));
        if (tensor.dims.size() != 4 || tensor.dtype != ElementType::F32)
            throw ConfigError("video '" + meta.id + "': expected rank-4 f32 frame container");
        video->frames = tensor.dims[0];
        video->height = tensor.dims[1];
        video->width = tensor.dims[2];
        video->channels = tensor.dims[3];
        video->data = tensor.f32;

        const std::size_t expected_frames =
            static_cast<std::size_t>(std::llround(meta.duration * meta.fps));
        if (video->frames != expected_frames)
            throw ConfigError("video '" + meta.id + "': frame count " +
                              std::to_string(video->frames) + " disagrees with duration*fps = " +
                              std::to_string(expected_frames));

        const CsvTable label_csv = read_csv(manifest.resolve(meta.labels_path));
        if (label_csv.header.size() < 2)
            throw ConfigError("video '" + meta.id + "': label track needs time + label columns");
        if (label_csv.rows.size() != video->frames)
            throw ConfigError("video '" + meta.id + "': label track length " +
                              std::to_string(label_csv.rows.size()) +
                              " does not match frame count " + std::to_string(video->frames));
        for (const auto& row : label_csv.rows) {
            const auto label = static_cast<long long>(std::llround(row[1]));
            if (label < 0 || static_cast<std::size_t>(label) >= task_.n_classes)
                throw ConfigError("video '" + meta.id + "': label out of range");
            video->labels.push_back(static_cast<std::size_t>(label));
        }

        if (!meta.streams_path.empty()) {
            const CsvTable stream_csv = read_csv(manifest.resolve(meta.streams_path));
            if (stream_csv.header.size() < 2)
                throw ConfigError("video '" + meta.id + "': stream csv needs value columns");
            StreamSeries raw;
            for (std::size_t j = 1; j < stream_csv.header.size(); ++j) {
                std::string name = stream_csv.header[j];
                std::string unit;
                const auto bracket = name.find(" [");
                if (bracket != std::string::npos && name.back() == ']') {
                    unit = name.substr(bracket + 2, name.size() - bracket - 3);
                    name = name.substr(0, bracket);
                }
                raw.channel_names.push_back(name);
                raw.units.push_back(unit);
                raw.values.emplace_back();
            }
            for (const auto& row : stream_csv.rows) {
                raw.timestamps.push_back(row[0]);
                for (std::size_t j = 1; j < row.size(); ++j) raw.values[j - 1].push_back(row[j]);
            }
            raw.validate();
            std::vector<double> frame_times(video->frames);
            for (std::size_t t = 0; t < video->frames; ++t)
                frame_times[t] = static_cast<double>(t) / meta.fps;
            video->frame_streams = resample_stream(raw, frame_times);
        }

        if (video->channels == 3)
            video->oob_segments =
                out_of_body_segments(video->data, video->frames, video->height, video->width,
                                     video->channels, meta.fps, options_.blue_tolerance);

        const double clip_seconds = static_cast<double>(options_.clip_frames) / meta.fps;
        video->anchors = dense_clip_index(meta.duration, clip_seconds, options_.anchor_interval,
                                          video->oob_segments);
        return video;
    }

    void build_anchor_index() {
        for (std::size_t vi = 0; vi < videos_.size(); ++vi) {
            const LoadedVideo& video = *videos_[vi];
            for (double anchor : video.anchors) {
                const std::size_t frame =
                    static_cast<std::size_t>(std::llround(anchor * video.meta.fps));
                by_class_[video.labels[frame]].emplace_back(vi, anchor);
            }
        }
        if (by_class_.empty()) throw ConfigError("dataset: no usable anchors in split");
    }

    ClipSample cut_sample(std::size_t video_idx, double anchor) const {
        const LoadedVideo& video = *videos_[video_idx];
        const std::size_t start =
            static_cast<std::size_t>(std::llround(anchor * video.meta.fps));
        if (start + options_.clip_frames > video.frames)
            throw ConfigError("dataset: clip at anchor " + std::to_string(anchor) +
                              " runs past the end of video '" + video.meta.id + "'");
        ClipSample sample;
        sample.anchor_time = anchor;
        sample.label = video.labels[start];
        sample.clip.frames = options_.clip_frames;
        sample.clip.height = video.height;
        sample.clip.width = video.width;
        sample.clip.channels = video.channels;
        sample.clip.fps = video.meta.fps;
        sample.clip.anchor_time = anchor;
        const std::size_t frame_elems = video.height * video.width * video.channels;
        sample.clip.data.assign(
            video.data.begin() + static_cast<std::ptrdiff_t>(start * frame_elems),
            video.data.begin() +
                static_cast<std::ptrdiff_t>((start + options_.clip_frames) * frame_elems));
        if (video.frame_streams.channel_count() > 0) {
            sample.stream_window.channel_names = video.frame_streams.channel_names;
            sample.stream_window.units = video.frame_streams.units;
            for (std::size_t t = 0; t < options_.clip_frames; ++t)
                sample.stream_window.timestamps.push_back(
                    video.frame_streams.timestamps[start + t]);
            for (const auto& channel : video.frame_streams.values)
                sample.stream_window.values.emplace_back(
                    channel.begin() + static_cast<std::ptrdiff_t>(start),
                    channel.begin() + static_cast<std::ptrdiff_t>(start + options_.clip_frames));
        }
        return sample;
    }

    TaskDescriptor task_;
    DatasetOptions options_;
    std::vector<std::shared_ptr<LoadedVideo>> videos_;
    std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> by_class_;
};

}  // namespace fusionbench
