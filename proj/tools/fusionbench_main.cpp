// Batch front end: synth, finetune, train, evaluate, plot. Every run is
// seeded and single-threaded; FUSIONBENCH_DETERMINISTIC=1 additionally strips
// wall-clock fields from logs so artifacts are byte-reproducible.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fusionbench/backbone.hpp"
#include "fusionbench/checkpoint.hpp"
#include "fusionbench/datapipe.hpp"
#include "fusionbench/decoder.hpp"
#include "fusionbench/evaluation.hpp"
#include "fusionbench/plot.hpp"
#include "fusionbench/recipe.hpp"
#include "fusionbench/stream_encoder.hpp"

namespace fs = std::filesystem;
using namespace fusionbench;

namespace {

bool deterministic_mode() {
    const char* v = std::getenv("FUSIONBENCH_DETERMINISTIC");
    return v != nullptr && std::string(v) == "1";
}

class JsonlLog {
public:
    explicit JsonlLog(const std::string& path) : out_(path) {
        if (!out_) throw ConfigError("cannot open log for writing: " + path);
        start_ = std::chrono::steady_clock::now();
    }

    void write(json record) {
        if (!deterministic_mode()) {
            const auto elapsed = std::chrono::steady_clock::now() - start_;
            record["wall_ms"] =
                std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
        }
        out_ << record.dump() << '\n';
    }

private:
    std::ofstream out_;
    std::chrono::steady_clock::time_point start_;
};

json train_record_json(const TrainLogRecord& r) {
    return json{{"step", r.step}, {"task", r.task},          {"penalty", r.penalty},
                {"total", r.total}, {"lr", r.lr},            {"wd", r.wd}};
}

std::vector<std::string> splits_present(const DatasetManifest& manifest) {
    std::set<std::string> seen;
    for (const auto& v : manifest.videos) seen.insert(v.split);
    return {seen.begin(), seen.end()};
}

BackboneGeometry geometry_for(const RunConfig& cfg, const ClipDataset& dataset) {
    BackboneGeometry geo;
    geo.clip_frames = cfg.data_options.clip_frames;
    geo.height = dataset.video(0).height;
    geo.width = dataset.video(0).width;
    geo.channels = dataset.video(0).channels;
    geo.tubelet = {cfg.tubelet_temporal, cfg.tubelet_spatial, cfg.embed_dim};
    geo.depth = cfg.backbone_depth;
    geo.heads = cfg.backbone_heads;
    geo.validate();
    return geo;
}

std::string step_checkpoint_path(const RunConfig& cfg, int step) {
    return (fs::path(cfg.out_dir) / ("step" + std::to_string(step) + ".ckpt.json")).string();
}

// Backbone for training/evaluation: explicit checkpoint wins, then a prior
// step-1 artifact in the run directory, then a fresh seeded stub.
VideoBackbone obtain_backbone(const RunConfig& cfg, const BackboneGeometry& geo) {
    std::string source;
    if (cfg.backbone_checkpoint) {
        source = *cfg.backbone_checkpoint;
    } else if (fs::exists(step_checkpoint_path(cfg, 1))) {
        source = step_checkpoint_path(cfg, 1);
    }
    if (!source.empty()) {
        const Checkpoint ckpt = load_checkpoint(source);
        if (!ckpt.backbone) throw ConfigError("checkpoint has no backbone section: " + source);
        VideoBackbone model = backbone_from_json(*ckpt.backbone);
        std::cout << "backbone: loaded from " << source << "\n";
        return model;
    }
    std::cout << "backbone: fresh stub (seed " << cfg.seed << ")\n";
    return VideoBackbone::init(geo, cfg.seed);
}

Checkpoint base_checkpoint(const RunConfig& cfg, const TaskDescriptor& task, int step,
                           const Rng& rng) {
    Checkpoint ckpt;
    ckpt.step = step;
    ckpt.config_hash = cfg.config_hash;
    ckpt.seed = cfg.seed;
    ckpt.rng_state = rng.save_state();
    ckpt.task = task;
    return ckpt;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
    std::string out;
    std::uint64_t seed = 7;
    SyntheticSpec spec;
    std::string label_source = "streams";
};

int cmd_synth(const SynthOptions& opt) {
    SyntheticSpec spec = opt.spec;
    spec.label_source = label_source_from_string(opt.label_source);
    const DatasetManifest manifest = make_synthetic_dataset(spec, opt.seed, opt.out);

    std::map<std::string, std::size_t> split_videos;
    std::map<std::string, double> split_seconds;
    std::map<std::size_t, std::size_t> class_frames;
    for (const auto& v : manifest.videos) {
        ++split_videos[v.split];
        split_seconds[v.split] += v.duration;
        const CsvTable labels = read_csv(manifest.resolve(v.labels_path));
        for (const auto& row : labels.rows)
            ++class_frames[static_cast<std::size_t>(std::llround(row[1]))];
    }
    std::cout << "wrote " << manifest.videos.size() << " videos to " << opt.out << "\n";
    for (const auto& [split, n] : split_videos)
        std::cout << "  " << split << ": " << n << " videos, " << split_seconds[split] << " s\n";
    std::cout << "  label source: " << to_string(spec.label_source) << "\n";
    for (const auto& [cls, frames] : class_frames)
        std::cout << "  class " << cls << ": " << frames << " frames\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_finetune(const std::string& config_path, std::optional<std::uint64_t> seed_override) {
    RunConfig cfg = load_run_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    if (cfg.manifest_path.empty()) throw ConfigError("config: data.manifest is required");
    fs::create_directories(cfg.out_dir);

    const DatasetManifest manifest = load_manifest(cfg.manifest_path);
    // Self-supervised: all splits, labels ignored.
    std::vector<ClipDataset> datasets;
    for (const std::string& split : splits_present(manifest))
        datasets.emplace_back(manifest, split, cfg.data_options);
    std::vector<std::pair<const ClipDataset*, std::pair<std::size_t, double>>> corpus;
    for (const ClipDataset& ds : datasets)
        for (std::size_t vi = 0; vi < ds.video_count(); ++vi)
            for (double anchor : ds.video(vi).anchors) corpus.push_back({&ds, {vi, anchor}});
    if (corpus.empty()) throw ConfigError("finetune: no usable clips in manifest");

    const BackboneGeometry geo = geometry_for(cfg, datasets.front());
    VideoBackbone model = obtain_backbone(cfg, geo);

    Rng rng(cfg.seed);
    AdamW opt;
    JsonlLog log((fs::path(cfg.out_dir) / "step1.log.jsonl").string());
    const std::size_t per_epoch = steps_per_epoch(cfg.jepa, cfg.batch_size);
    const std::size_t total = total_optimizer_steps(cfg.jepa, cfg.batch_size);
    for (std::size_t step = 0; step < total; ++step) {
        std::vector<VideoClip> batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const auto& [ds, ref] = corpus[rng.index(corpus.size())];
            batch.push_back(ds->sample_at(ref.first, ref.second).clip);
        }
        const double lr = lr_at(step, total, cfg.jepa);
        const double wd = wd_at(step, total, cfg.jepa);
        const double loss =
            jepa_step(batch, model, cfg.mask_ratio, cfg.ema_momentum, opt, lr, wd, rng);
        log.write(json{{"step", step},
                       {"epoch", step / per_epoch},
                       {"loss", loss},
                       {"lr", lr},
                       {"wd", wd}});
    }

    Checkpoint ckpt = base_checkpoint(cfg, manifest.task, 1, rng);
    ckpt.backbone = backbone_to_json(model);
    ckpt.optimizer = adamw_to_json(opt);
    save_checkpoint(ckpt, step_checkpoint_path(cfg, 1));
    std::cout << "finetune: wrote " << step_checkpoint_path(cfg, 1) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, std::vector<int> steps,
              std::optional<std::uint64_t> seed_override) {
    if (steps.empty()) steps = {2, 3, 4};
    std::set<int> requested(steps.begin(), steps.end());
    for (int s : requested)
        if (s < 2 || s > 4)
            throw ConfigError("train: steps must be a subset of {2,3,4}; run finetune for step 1");

    RunConfig cfg = load_run_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    if (cfg.manifest_path.empty()) throw ConfigError("config: data.manifest is required");
    fs::create_directories(cfg.out_dir);

    const DatasetManifest manifest = load_manifest(cfg.manifest_path);
    const ClipDataset train_set(manifest, "train", cfg.data_options);
    const BackboneGeometry geo = geometry_for(cfg, train_set);

    auto backbone = std::make_shared<VideoBackbone>(obtain_backbone(cfg, geo));
    StubBackboneProvider provider(backbone);

    std::optional<AttentiveClassifierParams> decoder;
    std::optional<StreamEncoder> encoder;

    // Pull prerequisites from earlier checkpoints when their step is not in
    // the requested set.
    if (!requested.count(2)) {
        const std::string prev = step_checkpoint_path(cfg, 2);
        if (requested.count(3)) {
            if (!fs::exists(prev))
                throw PrerequisiteError("step 3 requires a step-2 decoder; missing checkpoint " +
                                        prev);
            const Checkpoint ckpt = load_checkpoint(prev);
            if (!ckpt.decoder)
                throw PrerequisiteError("checkpoint " + prev + " carries no decoder");
            decoder = decoder_from_json(*ckpt.decoder);
        } else if (requested.count(4)) {
            const std::string prev3 = step_checkpoint_path(cfg, 3);
            if (!fs::exists(prev3))
                throw PrerequisiteError(
                    "step 4 requires a step-3 stream encoder; missing checkpoint " + prev3);
            const Checkpoint ckpt = load_checkpoint(prev3);
            if (!ckpt.decoder || !ckpt.stream_encoder)
                throw PrerequisiteError("checkpoint " + prev3 +
                                        " carries no decoder/stream encoder");
            decoder = decoder_from_json(*ckpt.decoder);
            encoder = stream_encoder_from_json(*ckpt.stream_encoder);
        }
    } else if (requested.count(4) && !requested.count(3)) {
        const std::string prev3 = step_checkpoint_path(cfg, 3);
        if (!fs::exists(prev3))
            throw PrerequisiteError("step 4 requires a step-3 stream encoder; missing checkpoint " +
                                    prev3);
        const Checkpoint ckpt = load_checkpoint(prev3);
        if (!ckpt.stream_encoder)
            throw PrerequisiteError("checkpoint " + prev3 + " carries no stream encoder");
        encoder = stream_encoder_from_json(*ckpt.stream_encoder);
    }

    for (int step : {2, 3, 4}) {
        if (!requested.count(step)) continue;
        Rng rng(cfg.seed + 1000 * static_cast<std::uint64_t>(step));
        AdamW opt;
        StepPlan plan;
        plan.step_id = step;
        plan.batch_size = cfg.batch_size;
        plan.lambda = cfg.lambda;

        JsonlLog log((fs::path(cfg.out_dir) / ("step" + std::to_string(step) + ".log.jsonl"))
                         .string());
        const TrainLogSink sink = [&](const TrainLogRecord& r) { log.write(train_record_json(r)); };

        if (step == 2) {
            plan.schedule = cfg.step2;
            decoder = init_classifier(cfg.embed_dim, manifest.task.n_classes, cfg.decoder_heads,
                                      cfg.seed + 20, cfg.decoder_mlp_hidden);
            run_step2(train_set, provider, *decoder, plan, rng, opt, sink);
        } else if (step == 3) {
            plan.schedule = cfg.step3;
            if (!decoder) throw PrerequisiteError("step 3 requires a trained decoder");
            const std::size_t channels = train_set.video(0).frame_streams.channel_count();
            if (channels == 0)
                throw ConfigError("step 3 requires stream data, but the manifest provides none");
            Rng enc_rng(cfg.seed + 30);
            encoder = StreamEncoder{
                StreamTokenizer::init({cfg.stream_window(), cfg.encoder_stride, cfg.embed_dim},
                                      channels, enc_rng),
                init_fusion_params(cfg.embed_dim, cfg.encoder_heads, cfg.encoder_layers,
                                   cfg.seed + 31, cfg.encoder_dropout, cfg.encoder_mlp_hidden)};
            run_step3(train_set, provider, *decoder, *encoder, plan, rng, opt, sink);
        } else {
            plan.schedule = cfg.step4;
            if (!decoder || !encoder)
                throw PrerequisiteError("step 4 requires the step-2 decoder and step-3 encoder");
            run_step4(train_set, provider, *encoder, *decoder, plan, rng, opt, sink);
        }

        Checkpoint ckpt = base_checkpoint(cfg, manifest.task, step, rng);
        ckpt.backbone = backbone_to_json(*backbone);
        if (decoder) ckpt.decoder = decoder_to_json(*decoder);
        if (encoder) ckpt.stream_encoder = stream_encoder_to_json(*encoder);
        ckpt.optimizer = adamw_to_json(opt);
        save_checkpoint(ckpt, step_checkpoint_path(cfg, step));
        std::cout << "train: step " << step << " done, wrote " << step_checkpoint_path(cfg, step)
                  << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path,
                 bool with_streams, bool include_class13, bool force, std::string out_path) {
    const RunConfig cfg = load_run_config(config_path);
    if (cfg.manifest_path.empty()) throw ConfigError("config: data.manifest is required");
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);

    if (ckpt.config_hash != cfg.config_hash) {
        std::cerr << "warning: checkpoint was produced under config hash " << ckpt.config_hash
                  << ", current config hashes to " << cfg.config_hash << "\n";
        if (!force)
            throw ConfigError("config/checkpoint hash mismatch; pass --force to evaluate anyway");
    }
    if (!ckpt.backbone) throw ConfigError("checkpoint has no backbone: " + checkpoint_path);
    if (!ckpt.decoder)
        throw ConfigError("checkpoint has no decoder (train step 2 first): " + checkpoint_path);
    std::optional<StreamEncoder> encoder;
    if (with_streams) {
        if (!ckpt.stream_encoder)
            throw ConfigError(
                "--with-streams requested but the checkpoint is video-only (no stream encoder): " +
                checkpoint_path);
        encoder = stream_encoder_from_json(*ckpt.stream_encoder);
    }

    const auto provider = make_backbone_provider(*ckpt.backbone);
    AttentiveClassifierParams decoder = decoder_from_json(*ckpt.decoder);

    const DatasetManifest manifest = load_manifest(cfg.manifest_path);
    const ClipDataset test_set(manifest, "test", cfg.data_options);

    const MetricsReport report = evaluate_model(test_set, *provider,
                                                encoder ? &*encoder : nullptr, decoder,
                                                include_class13);

    json doc = metrics_to_json(report);
    doc["metadata"] = {{"checkpoint", checkpoint_path},
                       {"checkpoint_hash", to_hex(hash_file(checkpoint_path))},
                       {"config_hash", cfg.config_hash},
                       {"with_streams", with_streams},
                       {"step", ckpt.step}};
    if (out_path.empty()) out_path = (fs::path(cfg.out_dir) / "report.json").string();
    fs::create_directories(fs::path(out_path).parent_path());
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot open report for writing: " + out_path);
    out << doc.dump(1) << '\n';

    std::printf("%24s %8s %8s %8s %8s\n", "", "%aIoU", "%mIoU", "%qIoU", "%Acc");
    std::printf("%24s %8.1f %8.1f %8.1f %8.1f\n",
                (with_streams ? "video+streams" : "video-only"), 100.0 * report.a_iou,
                100.0 * report.m_iou, 100.0 * report.q_iou, 100.0 * report.acc);
    std::cout << "evaluate: wrote " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_plot(const std::string& input, const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (input.size() > 6 && input.substr(input.size() - 6) == ".jsonl") {
        std::ifstream in(input);
        if (!in) throw ConfigError("cannot open training log: " + input);
        std::vector<TrainLogRecord> records;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json doc = json::parse(line, nullptr, false);
            if (doc.is_discarded()) throw ConfigError("plot: malformed log line in " + input);
            TrainLogRecord r;
            r.step = doc.value("step", static_cast<std::size_t>(records.size()));
            r.total = doc.contains("total") ? doc["total"].get<double>()
                                            : doc.value("loss", 0.0);
            r.task = doc.value("task", r.total);
            r.penalty = doc.value("penalty", 0.0);
            r.lr = doc.value("lr", 0.0);
            r.wd = doc.value("wd", 0.0);
            records.push_back(r);
        }
        if (records.empty()) throw ConfigError("plot: training log is empty: " + input);
        const std::string out_path =
            (fs::path(out_dir) / (fs::path(input).stem().string() + ".svg")).string();
        std::ofstream out(out_path);
        out << render_training_curves(records);
        std::cout << "plot: wrote " << out_path << "\n";
        return 0;
    }

    const DatasetManifest manifest = load_manifest(input);
    for (const std::string& split : splits_present(manifest)) {
        const std::string out_path =
            (fs::path(out_dir) / ("composition_" + split + ".svg")).string();
        std::ofstream out(out_path);
        out << render_split_composition(manifest, split);
        std::cout << "plot: wrote " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fusionbench: frozen video backbone + cross-attention stream fusion"};
    app.require_subcommand(1);

    SynthOptions synth_opt;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", synth_opt.out, "output directory")->required();
    synth->add_option("--seed", synth_opt.seed, "generator seed");
    synth->add_option("--videos", synth_opt.spec.n_videos, "number of videos");
    synth->add_option("--duration", synth_opt.spec.duration, "seconds per video");
    synth->add_option("--fps", synth_opt.spec.fps, "frames per second");
    synth->add_option("--channels", synth_opt.spec.n_channels, "stream channels");
    synth->add_option("--classes", synth_opt.spec.n_classes, "number of classes");
    synth->add_option("--label-source", synth_opt.label_source, "video | streams | both");
    synth->add_option("--stream-hz", synth_opt.spec.stream_hz, "stream sample rate");
    synth->add_option("--height", synth_opt.spec.height, "frame height");
    synth->add_option("--width", synth_opt.spec.width, "frame width");

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::uint64_t seed_value = 0;

    CLI::App* finetune = app.add_subcommand("finetune", "self-supervised backbone training");
    finetune->add_option("--config", config_path, "run config json")->required();
    CLI::Option* ft_seed = finetune->add_option("--seed", seed_value, "seed override");

    std::vector<int> steps;
    CLI::App* train = app.add_subcommand("train", "run recipe steps 2-4");
    train->add_option("--config", config_path, "run config json")->required();
    train->add_option("--steps", steps, "subset of 2,3,4")->delimiter(',');
    CLI::Option* tr_seed = train->add_option("--seed", seed_value, "seed override");

    std::string checkpoint_path, report_path;
    bool with_streams = false, include_class13 = false, force = false;
    CLI::App* evaluate = app.add_subcommand("evaluate", "dense evaluation on the test split");
    evaluate->add_option("--config", config_path, "run config json")->required();
    evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
    evaluate->add_flag("--with-streams", with_streams, "run the stream encoder");
    evaluate->add_flag("--include-class13", include_class13,
                       "keep the exception class in the aggregates");
    evaluate->add_flag("--force", force, "ignore config/checkpoint hash mismatch");
    evaluate->add_option("--out", report_path, "report path (default <out_dir>/report.json)");

    std::string plot_input, plot_out = ".";
    CLI::App* plot = app.add_subcommand("plot", "dataset composition or training curves");
    plot->add_option("--input", plot_input, "manifest.json or training log .jsonl")->required();
    plot->add_option("--out", plot_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_opt);
        if (finetune->parsed()) {
            if (ft_seed->count()) seed_override = seed_value;
            return cmd_finetune(config_path, seed_override);
        }
        if (train->parsed()) {
            if (tr_seed->count()) seed_override = seed_value;
            return cmd_train(config_path, steps, seed_override);
        }
        if (evaluate->parsed())
            return cmd_evaluate(config_path, checkpoint_path, with_streams, include_class13,
                                force, report_path);
        if (plot->parsed()) return cmd_plot(plot_input, plot_out);
    } catch (const PrerequisiteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
