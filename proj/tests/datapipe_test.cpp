#include "fusionbench/datapipe.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace fusionbench;
namespace fs = std::filesystem;

namespace {

std::vector<float> uniform_frame(std::size_t h, std::size_t w, float r, float g, float b) {
    std::vector<float> frame(h * w * 3);
    for (std::size_t i = 0; i < h * w; ++i) {
        frame[3 * i + 0] = r;
        frame[3 * i + 1] = g;
        frame[3 * i + 2] = b;
    }
    return frame;
}

}  // namespace

TEST(OutOfBody, PureBlueFrameDetected) {
    const auto frame = uniform_frame(8, 8, 0.0f, 0.0f, 1.0f);
    EXPECT_TRUE(detect_out_of_body(FrameView{8, 8, 3, frame.data()}));
}

TEST(OutOfBody, BlackFrameNotDetected) {
    const auto frame = uniform_frame(8, 8, 0.0f, 0.0f, 0.0f);
    EXPECT_FALSE(detect_out_of_body(FrameView{8, 8, 3, frame.data()}));
}

TEST(OutOfBody, FivePercentContaminationNotDetected) {
    auto frame = uniform_frame(10, 10, 0.0f, 0.0f, 1.0f);
    // 5 of 100 pixels turned red: blue fraction 0.95 < 0.99.
    for (std::size_t i = 0; i < 5; ++i) {
        frame[3 * i + 0] = 1.0f;
        frame[3 * i + 2] = 0.0f;
    }
    EXPECT_FALSE(detect_out_of_body(FrameView{10, 10, 3, frame.data()}));
}

TEST(OutOfBody, WrongChannelCountThrows) {
    std::vector<float> frame(8 * 8, 0.0f);
    EXPECT_THROW(detect_out_of_body(FrameView{8, 8, 1, frame.data()}), ShapeError);
}

TEST(OutOfBody, SegmentsFromFrameRuns) {
    // 6 frames at 2 fps; frames 2,3 blue -> segment [1.0, 2.0).
    std::vector<float> frames;
    for (int t = 0; t < 6; ++t) {
        const bool blue = (t == 2 || t == 3);
        const auto f = uniform_frame(4, 4, 0.0f, 0.0f, blue ? 1.0f : 0.2f);
        frames.insert(frames.end(), f.begin(), f.end());
    }
    const auto segments = out_of_body_segments(frames, 6, 4, 4, 3, 2.0);
    ASSERT_EQ(segments.size(), 1u);
    EXPECT_DOUBLE_EQ(segments[0].first, 1.0);
    EXPECT_DOUBLE_EQ(segments[0].second, 2.0);
}

TEST(DenseClipIndex, FloorArithmetic) {
    const auto anchors = dense_clip_index(10.0, 2.0);
    ASSERT_EQ(anchors.size(), 9u);
    EXPECT_DOUBLE_EQ(anchors.front(), 0.0);
    EXPECT_DOUBLE_EQ(anchors.back(), 8.0);
}

TEST(DenseClipIndex, SingleAnchorWhenDurationsMatch) {
    const auto anchors = dense_clip_index(2.0, 2.0);
    ASSERT_EQ(anchors.size(), 1u);
    EXPECT_DOUBLE_EQ(anchors[0], 0.0);
}

TEST(DenseClipIndex, OverlapRuleRemovesAnchors) {
    // Skip [3, 5) with 2 s clips: anchors 2, 3, 4 overlap and disappear.
    const auto anchors = dense_clip_index(10.0, 2.0, 1.0, {{3.0, 5.0}});
    const std::vector<double> expected{0.0, 1.0, 5.0, 6.0, 7.0, 8.0};
    EXPECT_EQ(anchors, expected);
}

TEST(DenseClipIndex, ClipLongerThanVideoThrows) {
    EXPECT_THROW(dense_clip_index(1.0, 2.0), ConfigError);
}

TEST(DenseClipIndex, NoAnchorEverOverlapsSkippedSegments) {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const double duration = 10.0 + rng.uniform(0.0, 30.0);
        const double clip = 1.0 + rng.uniform(0.0, 3.0);
        std::vector<std::pair<double, double>> segments;
        double cursor = 0.0;
        while (cursor < duration) {
            const double start = cursor + rng.uniform(0.0, 6.0);
            const double stop = start + rng.uniform(0.5, 4.0);
            if (start >= duration) break;
            segments.emplace_back(start, std::min(stop, duration));
            cursor = stop + 0.5;
        }
        for (double anchor : dense_clip_index(duration, clip, 1.0, segments)) {
            EXPECT_LE(anchor + clip, duration + 1e-9);
            for (const auto& [a, b] : segments) {
                const bool overlaps = anchor < b - 1e-12 && a < anchor + clip - 1e-12;
                EXPECT_FALSE(overlaps) << "anchor " << anchor << " overlaps [" << a << "," << b
                                       << ")";
            }
        }
    }
}

TEST(ResampleStream, IdentityOnOwnSamplePoints) {
    StreamSeries s;
    s.timestamps = {0.0, 1.0, 2.5, 4.0};
    s.channel_names = {"a"};
    s.units = {""};
    s.values = {{3.0, -1.0, 7.0, 2.0}};
    const StreamSeries out = resample_stream(s, s.timestamps);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.values[0][i], s.values[0][i]);
}

TEST(ResampleStream, LinearInterpolationMidpoint) {
    StreamSeries s;
    s.timestamps = {0.0, 2.0};
    s.channel_names = {"a"};
    s.units = {""};
    s.values = {{0.0, 10.0}};
    const StreamSeries out = resample_stream(s, {1.0});
    EXPECT_DOUBLE_EQ(out.values[0][0], 5.0);
}

TEST(ResampleStream, ClampsOutsideRange) {
    StreamSeries s;
    s.timestamps = {0.0, 2.0};
    s.channel_names = {"a"};
    s.units = {""};
    s.values = {{4.0, 10.0}};
    const StreamSeries out = resample_stream(s, {-1.0, 3.0});
    EXPECT_DOUBLE_EQ(out.values[0][0], 4.0);
    EXPECT_DOUBLE_EQ(out.values[0][1], 10.0);
}

TEST(ResampleStream, EmptyStreamThrows) {
    StreamSeries s;
    EXPECT_THROW(resample_stream(s, {0.0}), ConfigError);
}

TEST(ResampleStream, MonotonePreservingBetweenAdjacentPoints) {
    Rng rng(2);
    StreamSeries s;
    s.channel_names = {"a"};
    s.units = {""};
    s.values.emplace_back();
    double t = 0.0, v = 0.0;
    for (int i = 0; i < 20; ++i) {
        s.timestamps.push_back(t);
        s.values[0].push_back(v);
        t += rng.uniform(0.5, 2.0);
        v += rng.uniform(-1.0, 1.0);
    }
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t seg = rng.index(19);
        const double q =
            s.timestamps[seg] + rng.uniform() * (s.timestamps[seg + 1] - s.timestamps[seg]);
        const double lo = std::min(s.values[0][seg], s.values[0][seg + 1]);
        const double hi = std::max(s.values[0][seg], s.values[0][seg + 1]);
        const StreamSeries out = resample_stream(s, {q});
        EXPECT_GE(out.values[0][0], lo - 1e-12);
        EXPECT_LE(out.values[0][0], hi + 1e-12);
    }
}

TEST(BinarizeByMedian, OutcomeExamples) {
    // Length-of-stay style: median 4 days.
    const BinarizationResult los = binarize_by_median({2.0, 3.0, 4.0, 7.0, 14.0});
    EXPECT_DOUBLE_EQ(los.threshold, 4.0);
    EXPECT_EQ(los.labels[2], 0u);  // 4 d -> at median -> class 0
    EXPECT_EQ(los.labels[4], 1u);  // 14 d -> class 1
    // CCI style: median 0.
    const BinarizationResult cci = binarize_by_median({0.0, 0.0, 0.0, 12.2, 36.2});
    EXPECT_DOUBLE_EQ(cci.threshold, 0.0);
    EXPECT_EQ(cci.labels[0], 0u);
    EXPECT_EQ(cci.labels[4], 1u);
}

TEST(BinarizeByMedian, AllEqualIsAllClassZero) {
    const BinarizationResult r = binarize_by_median({5.0, 5.0, 5.0, 5.0});
    for (std::size_t label : r.labels) EXPECT_EQ(label, 0u);
}

TEST(BinarizeByMedian, EmptyThrows) { EXPECT_THROW(binarize_by_median({}), ConfigError); }

TEST(RawTensor, RoundTrip) {
    const std::string dir = fbtest::temp_dir("rawtensor");
    RawTensor t;
    t.dims = {2, 3};
    t.dtype = ElementType::F32;
    t.f32 = {1.0f, -2.5f, 0.0f, 4.25f, 1e-7f, 9.0f};
    const std::string path = dir + "/t.fbt";
    write_raw_tensor(path, t);
    const RawTensor back = read_raw_tensor(path);
    EXPECT_EQ(back.dims, t.dims);
    EXPECT_EQ(back.f32, t.f32);
}

TEST(RawTensor, RejectsGarbage) {
    const std::string dir = fbtest::temp_dir("rawtensor_bad");
    const std::string path = dir + "/bad.fbt";
    std::ofstream(path) << "not a tensor";
    EXPECT_THROW(read_raw_tensor(path), ConfigError);
}

TEST(Manifest, RoundTripEquality) {
    const std::string dir = fbtest::temp_dir("manifest_roundtrip");
    const SyntheticSpec spec;
    const DatasetManifest written = make_synthetic_dataset(spec, 42, dir);
    const DatasetManifest loaded = load_manifest(dir + "/manifest.json");
    EXPECT_EQ(manifest_to_json(written).dump(), manifest_to_json(loaded).dump());
}

TEST(Manifest, DuplicateVideoIdRejected) {
    DatasetManifest manifest;
    manifest.task = TaskDescriptor::named("synthetic");
    ManifestVideo v;
    v.id = "dup";
    v.frames_path = "f.fbt";
    v.labels_path = "l.csv";
    v.split = "train";
    v.fps = 1.0;
    v.duration = 10.0;
    manifest.videos.push_back(v);
    v.split = "test";
    manifest.videos.push_back(v);
    EXPECT_THROW(manifest.validate(), ConfigError);
}

TEST(Manifest, UnknownSplitRejected) {
    DatasetManifest manifest;
    manifest.task = TaskDescriptor::named("synthetic");
    ManifestVideo v;
    v.id = "a";
    v.frames_path = "f.fbt";
    v.labels_path = "l.csv";
    v.split = "holdout";
    v.fps = 1.0;
    v.duration = 10.0;
    manifest.videos.push_back(v);
    EXPECT_THROW(manifest.validate(), ConfigError);
}

TEST(Manifest, LabelTrackLengthMismatchRejectedAtLoad) {
    const std::string dir = fbtest::temp_dir("manifest_mismatch");
    SyntheticSpec spec;
    spec.n_videos = 4;
    spec.duration = 16.0;
    make_synthetic_dataset(spec, 7, dir);
    // Truncate one label track.
    const DatasetManifest manifest = load_manifest(dir + "/manifest.json");
    const std::string labels = manifest.resolve(manifest.videos[0].labels_path);
    CsvTable table = read_csv(labels);
    table.rows.pop_back();
    write_csv(labels, table);
    EXPECT_THROW(ClipDataset(manifest, "train", DatasetOptions{}), ConfigError);
}

TEST(Synthetic, SameSeedSameBytes) {
    const std::string dir_a = fbtest::temp_dir("synthetic_a");
    const std::string dir_b = fbtest::temp_dir("synthetic_b");
    SyntheticSpec spec;
    spec.n_videos = 4;
    spec.duration = 16.0;
    make_synthetic_dataset(spec, 123, dir_a);
    make_synthetic_dataset(spec, 123, dir_b);
    for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), dir_a).string();
        EXPECT_EQ(hash_file(entry.path().string()), hash_file((fs::path(dir_b) / rel).string()))
            << rel;
    }
}

TEST(Synthetic, ClassFrequenciesNearBalance) {
    const std::string dir = fbtest::temp_dir("synthetic_balance");
    SyntheticSpec spec;
    spec.n_videos = 4;
    spec.duration = 80.0;
    spec.fps = 4.0;  // 4 * 320 = 1280 frames total
    make_synthetic_dataset(spec, 9, dir);
    const DatasetManifest manifest = load_manifest(dir + "/manifest.json");
    std::size_t ones = 0, total = 0;
    for (const auto& v : manifest.videos) {
        const CsvTable labels = read_csv(manifest.resolve(v.labels_path));
        for (const auto& row : labels.rows) {
            ones += static_cast<std::size_t>(row[1]);
            ++total;
        }
    }
    EXPECT_GE(total, 1000u);
    EXPECT_NEAR(static_cast<double>(ones) / static_cast<double>(total), 0.5, 0.05);
}

TEST(ClipDataset, ClipLabelAlignmentInvariant) {
    const std::string dir = fbtest::temp_dir("dataset_alignment");
    SyntheticSpec spec;
    spec.n_videos = 4;
    spec.duration = 24.0;
    make_synthetic_dataset(spec, 11, dir);
    const DatasetManifest manifest = load_manifest(dir + "/manifest.json");
    DatasetOptions options;
    options.clip_frames = 8;
    const ClipDataset dataset(manifest, "train", options);

    for (std::size_t vi = 0; vi < dataset.video_count(); ++vi) {
        const LoadedVideo& video = dataset.video(vi);
        for (double anchor : video.anchors) {
            const ClipSample sample = dataset.sample_at(vi, anchor);
            const std::size_t frame =
                static_cast<std::size_t>(std::llround(anchor * video.meta.fps));
            EXPECT_EQ(sample.label, video.labels[frame]);
            // The stream window covers the clip's frame timestamps.
            ASSERT_EQ(sample.stream_window.timestamps.size(), options.clip_frames);
            EXPECT_DOUBLE_EQ(sample.stream_window.timestamps.front(),
                             static_cast<double>(frame) / video.meta.fps);
        }
    }
}

TEST(ClipDataset, SamplerSeesEveryClass) {
    const std::string dir = fbtest::temp_dir("dataset_classes");
    SyntheticSpec spec;
    spec.n_videos = 4;
    spec.duration = 48.0;
    make_synthetic_dataset(spec, 13, dir);
    const DatasetManifest manifest = load_manifest(dir + "/manifest.json");
    const ClipDataset dataset(manifest, "train", DatasetOptions{});
    const auto classes = dataset.classes_present();
    EXPECT_EQ(classes.size(), 2u);
    for (std::size_t cls : classes) EXPECT_GT(dataset.class_size(cls), 0u);
}

TEST(ClipDataset, BlueSegmentsRemoveAnchors) {
    // Hand-built manifest with an all-blue stretch in the middle.
    const std::string dir = fbtest::temp_dir("dataset_blue");
    fs::create_directories(fs::path(dir) / "frames");
    fs::create_directories(fs::path(dir) / "labels");

    const std::size_t frames_total = 24, h = 8, w = 8;
    const double fps = 2.0;  // 12 seconds
    RawTensor frames;
    frames.dims = {frames_total, h, w, 3};
    frames.dtype = ElementType::F32;
    for (std::size_t t = 0; t < frames_total; ++t) {
        const bool blue = t >= 8 && t < 12;  // seconds [4, 6)
        const auto f = blue ? uniform_frame(h, w, 0.0f, 0.0f, 1.0f)
                            : uniform_frame(h, w, 0.5f, 0.4f, 0.3f);
        frames.f32.insert(frames.f32.end(), f.begin(), f.end());
    }
    write_raw_tensor(dir + "/frames/vid.fbt", frames);

    CsvTable labels;
    labels.header = {"time_s", "label"};
    for (std::size_t t = 0; t < frames_total; ++t)
        labels.rows.push_back({static_cast<double>(t) / fps, static_cast<double>(t % 2)});
    write_csv(dir + "/labels/vid.csv", labels);

    DatasetManifest manifest;
    manifest.base_dir = dir;
    manifest.task = TaskDescriptor::named("synthetic");
    ManifestVideo v;
    v.id = "vid";
    v.frames_path = "frames/vid.fbt";
    v.labels_path = "labels/vid.csv";
    v.split = "test";
    v.fps = fps;
    v.duration = 12.0;
    manifest.videos.push_back(v);

    DatasetOptions options;
    options.clip_frames = 4;  // 2-second clips
    const ClipDataset dataset(manifest, "test", options);
    ASSERT_EQ(dataset.video_count(), 1u);
    // Segment [4,6): anchors 3, 4, 5 overlap; valid anchors 0..10 minus those.
    const std::vector<double> expected{0.0, 1.0, 2.0, 6.0, 7.0, 8.0, 9.0, 10.0};
    EXPECT_EQ(dataset.video(0).anchors, expected);
}
