#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusionbench/backbone.hpp"
#include "fusionbench/datapipe.hpp"
#include "fusionbench/decoder.hpp"
#include "fusionbench/errors.hpp"
#include "fusionbench/hash.hpp"
#include "fusionbench/nn.hpp"
#include "fusionbench/recipe.hpp"
#include "fusionbench/stream_encoder.hpp"

namespace fusionbench {

// ---------------------------------------------------------------------------
// Parameter array (de)serialization. nlohmann prints doubles with shortest
// round-trip precision, so save -> load -> save is bit-stable.

inline json matrix_to_json(const Matrix& m) {
    json doc;
    doc["shape"] = {m.rows(), m.cols()};
    doc["data"] = m.raw();
    return doc;
}

inline Matrix matrix_from_json(const json& doc) {
    const auto shape = doc.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ConfigError("checkpoint: matrix shape must have rank 2");
    Matrix m(shape[0], shape[1]);
    const auto data = doc.at("data").get<std::vector<double>>();
    if (data.size() != m.size())
        throw ConfigError("checkpoint: matrix payload size disagrees with shape");
    m.raw() = data;
    return m;
}

template <typename VisitAll>
json params_to_json(VisitAll&& visit_all) {
    json doc = json::object();
    visit_all([&](const std::string& name, Param& p) { doc[name] = matrix_to_json(p.value); });
    return doc;
}

template <typename VisitAll>
void params_from_json(const json& doc, VisitAll&& visit_all) {
    visit_all([&](const std::string& name, Param& p) {
        if (!doc.contains(name)) throw ConfigError("checkpoint: missing parameter " + name);
        Matrix loaded = matrix_from_json(doc.at(name));
        if (!loaded.same_shape(p.value))
            throw ConfigError("checkpoint: shape mismatch for parameter " + name);
        p.value = std::move(loaded);
        p.grad = Matrix(p.value.rows(), p.value.cols());
    });
}

// ---------------------------------------------------------------------------
// Backbone.

inline json geometry_to_json(const BackboneGeometry& geo) {
    return json{{"clip_frames", geo.clip_frames},
                {"height", geo.height},
                {"width", geo.width},
                {"channels", geo.channels},
                {"tubelet_temporal", geo.tubelet.temporal_width},
                {"tubelet_spatial", geo.tubelet.spatial_size},
                {"embed_dim", geo.tubelet.embed_dim},
                {"depth", geo.depth},
                {"heads", geo.heads}};
}

inline BackboneGeometry geometry_from_json(const json& doc) {
    BackboneGeometry geo;
    geo.clip_frames = doc.at("clip_frames").get<std::size_t>();
    geo.height = doc.at("height").get<std::size_t>();
    geo.width = doc.at("width").get<std::size_t>();
    geo.channels = doc.at("channels").get<std::size_t>();
    geo.tubelet.temporal_width = doc.at("tubelet_temporal").get<std::size_t>();
    geo.tubelet.spatial_size = doc.at("tubelet_spatial").get<std::size_t>();
    geo.tubelet.embed_dim = doc.at("embed_dim").get<std::size_t>();
    geo.depth = doc.at("depth").get<std::size_t>();
    geo.heads = doc.at("heads").get<std::size_t>();
    geo.validate();
    return geo;
}

inline json backbone_to_json(VideoBackbone& model) {
    json doc;
    doc["provider"] = "stub";
    doc["geometry"] = geometry_to_json(model.geometry);
    doc["params"] = params_to_json([&](const ParamFn& fn) { model.visit_all(fn); });
    return doc;
}

inline VideoBackbone backbone_from_json(const json& doc) {
    VideoBackbone model = VideoBackbone::init(geometry_from_json(doc.at("geometry")), 0);
    params_from_json(doc.at("params"), [&](const ParamFn& fn) { model.visit_all(fn); });
    return model;
}

// ---------------------------------------------------------------------------
// Decoder.

inline json decoder_to_json(AttentiveClassifierParams& decoder) {
    json doc;
    doc["embed_dim"] = decoder.embed_dim;
    doc["n_classes"] = decoder.n_classes;
    doc["heads"] = decoder.heads;
    doc["mlp_hidden"] = decoder.mlp_w1.value.cols();
    doc["params"] = params_to_json([&](const ParamFn& fn) { decoder.visit_params(fn); });
    return doc;
}

inline AttentiveClassifierParams decoder_from_json(const json& doc) {
    AttentiveClassifierParams decoder = init_classifier(
        doc.at("embed_dim").get<std::size_t>(), doc.at("n_classes").get<std::size_t>(),
        doc.at("heads").get<std::size_t>(), 0, doc.at("mlp_hidden").get<std::size_t>());
    params_from_json(doc.at("params"), [&](const ParamFn& fn) { decoder.visit_params(fn); });
    return decoder;
}

// ---------------------------------------------------------------------------
// Stream encoder: the shared q/k/v arrays are stored once under "shared" and
// rebound to every layer on load.

inline json stream_encoder_to_json(StreamEncoder& encoder) {
    json doc;
    doc["sharing"] = "q/k/v transforms stored once, referenced by all fusion layers";
    doc["embed_dim"] = encoder.fusion.embed_dim;
    doc["heads"] = encoder.fusion.heads;
    doc["dropout"] = encoder.fusion.dropout;
    doc["layer_count"] = encoder.fusion.layer_count();
    doc["mlp_hidden"] = encoder.fusion.layers.at(0).mlp_w1.value.cols();
    doc["tokenizer"] = {{"window", encoder.tokenizer.spec.window},
                        {"stride", encoder.tokenizer.spec.stride},
                        {"channels", encoder.tokenizer.channel_count()}};
    json shared;
    shared["w_q"] = matrix_to_json(encoder.fusion.w_q.value);
    shared["b_q"] = matrix_to_json(encoder.fusion.b_q.value);
    shared["w_k"] = matrix_to_json(encoder.fusion.w_k.value);
    shared["b_k"] = matrix_to_json(encoder.fusion.b_k.value);
    shared["w_v"] = matrix_to_json(encoder.fusion.w_v.value);
    shared["b_v"] = matrix_to_json(encoder.fusion.b_v.value);
    doc["shared"] = shared;
    doc["layers"] = json::array();
    for (auto& lp : encoder.fusion.layers) {
        json layer;
        layer["norm_t_gain"] = matrix_to_json(lp.norm_t_gain.value);
        layer["norm_t_bias"] = matrix_to_json(lp.norm_t_bias.value);
        layer["w_out"] = matrix_to_json(lp.w_out.value);
        layer["b_out"] = matrix_to_json(lp.b_out.value);
        layer["norm_s_gain"] = matrix_to_json(lp.norm_s_gain.value);
        layer["norm_s_bias"] = matrix_to_json(lp.norm_s_bias.value);
        layer["mlp_w1"] = matrix_to_json(lp.mlp_w1.value);
        layer["mlp_b1"] = matrix_to_json(lp.mlp_b1.value);
        layer["mlp_w2"] = matrix_to_json(lp.mlp_w2.value);
        layer["mlp_b2"] = matrix_to_json(lp.mlp_b2.value);
        doc["layers"].push_back(layer);
    }
    doc["tokenizer_params"] =
        params_to_json([&](const ParamFn& fn) { encoder.tokenizer.visit_params(fn); });
    return doc;
}

inline StreamEncoder stream_encoder_from_json(const json& doc) {
    StreamTokenizerSpec spec;
    spec.window = doc.at("tokenizer").at("window").get<std::size_t>();
    spec.stride = doc.at("tokenizer").at("stride").get<std::size_t>();
    spec.embed_dim = doc.at("embed_dim").get<std::size_t>();
    Rng scratch(0);
    StreamEncoder encoder{
        StreamTokenizer::init(spec, doc.at("tokenizer").at("channels").get<std::size_t>(),
                              scratch),
        init_fusion_params(doc.at("embed_dim").get<std::size_t>(),
                           doc.at("heads").get<std::size_t>(),
                           doc.at("layer_count").get<std::size_t>(), 0,
                           doc.at("dropout").get<double>(),
                           doc.at("mlp_hidden").get<std::size_t>())};
    const json& shared = doc.at("shared");
    encoder.fusion.w_q.value = matrix_from_json(shared.at("w_q"));
    encoder.fusion.b_q.value = matrix_from_json(shared.at("b_q"));
    encoder.fusion.w_k.value = matrix_from_json(shared.at("w_k"));
    encoder.fusion.b_k.value = matrix_from_json(shared.at("b_k"));
    encoder.fusion.w_v.value = matrix_from_json(shared.at("w_v"));
    encoder.fusion.b_v.value = matrix_from_json(shared.at("b_v"));
    const json& layers = doc.at("layers");
    if (layers.size() != encoder.fusion.layer_count())
        throw ConfigError("checkpoint: fusion layer count disagrees");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        FusionLayerParams& lp = encoder.fusion.layers[l];
        lp.norm_t_gain.value = matrix_from_json(layers[l].at("norm_t_gain"));
        lp.norm_t_bias.value = matrix_from_json(layers[l].at("norm_t_bias"));
        lp.w_out.value = matrix_from_json(layers[l].at("w_out"));
        lp.b_out.value = matrix_from_json(layers[l].at("b_out"));
        lp.norm_s_gain.value = matrix_from_json(layers[l].at("norm_s_gain"));
        lp.norm_s_bias.value = matrix_from_json(layers[l].at("norm_s_bias"));
        lp.mlp_w1.value = matrix_from_json(layers[l].at("mlp_w1"));
        lp.mlp_b1.value = matrix_from_json(layers[l].at("mlp_b1"));
        lp.mlp_w2.value = matrix_from_json(layers[l].at("mlp_w2"));
        lp.mlp_b2.value = matrix_from_json(layers[l].at("mlp_b2"));
    }
    params_from_json(doc.at("tokenizer_params"),
                     [&](const ParamFn& fn) { encoder.tokenizer.visit_params(fn); });
    return encoder;
}

// ---------------------------------------------------------------------------
// Optimizer state.

inline json adamw_to_json(const AdamW& opt) {
    json doc;
    doc["t"] = opt.t;
    doc["beta1"] = opt.beta1;
    doc["beta2"] = opt.beta2;
    doc["eps"] = opt.eps;
    json moments = json::object();
    for (const auto& [name, mv] : opt.moments)
        moments[name] = {{"m", matrix_to_json(mv.first)}, {"v", matrix_to_json(mv.second)}};
    doc["moments"] = moments;
    return doc;
}

inline AdamW adamw_from_json(const json& doc) {
    AdamW opt;
    opt.t = doc.at("t").get<std::uint64_t>();
    opt.beta1 = doc.at("beta1").get<double>();
    opt.beta2 = doc.at("beta2").get<double>();
    opt.eps = doc.at("eps").get<double>();
    for (auto it = doc.at("moments").begin(); it != doc.at("moments").end(); ++it)
        opt.moments[it.key()] = {matrix_from_json(it.value().at("m")),
                                 matrix_from_json(it.value().at("v"))};
    return opt;
}

// ---------------------------------------------------------------------------
// Run configuration.

struct RunConfig {
    std::uint64_t seed = 1234;
    std::string out_dir = "runs/default";
    std::string manifest_path;
    DatasetOptions data_options;

    std::string provider = "stub";
    std::optional<std::string> backbone_checkpoint;
    std::size_t embed_dim = 32;
    std::size_t backbone_depth = 2;
    std::size_t backbone_heads = 4;
    std::size_t tubelet_temporal = 2;
    std::size_t tubelet_spatial = 8;

    std::size_t encoder_layers = 4;
    std::size_t encoder_heads = 4;
    double encoder_dropout = 0.2;
    std::size_t encoder_window = 0;  // 0: follow the tubelet temporal width
    std::size_t encoder_stride = 1;
    std::size_t encoder_mlp_hidden = 0;

    std::size_t decoder_heads = 4;
    std::size_t decoder_mlp_hidden = 0;

    std::size_t batch_size = 4;
    double lambda = 1e-3;
    ScheduleSpec step2 = *schedule_preset("inhouse-step2");
    ScheduleSpec step3 = *schedule_preset("steps34");
    ScheduleSpec step4 = *schedule_preset("steps34");

    double mask_ratio = 0.75;
    double ema_momentum = 0.998;
    ScheduleSpec jepa;
    // Applies the step-1 reductions relative to the configured values:
    // learning rates / 100, weight decay / 10.
    bool finetune_reductions = false;

    std::string config_hash;

    std::size_t stream_window() const {
        return encoder_window == 0 ? tubelet_temporal : encoder_window;
    }
};

namespace detail {

inline ScheduleSpec schedule_from_json(const json& doc, const ScheduleSpec& fallback) {
    ScheduleSpec spec = fallback;
    if (doc.contains("preset")) {
        const auto preset = schedule_preset(doc["preset"].get<std::string>());
        if (!preset) throw ConfigError("unknown schedule preset: " + doc["preset"].dump());
        spec = *preset;
    }
    if (doc.contains("epochs")) spec.epochs = doc["epochs"].get<std::size_t>();
    if (doc.contains("samples_per_epoch"))
        spec.samples_per_epoch = doc["samples_per_epoch"].get<std::size_t>();
    if (doc.contains("lr_start")) spec.lr_start = doc["lr_start"].get<double>();
    if (doc.contains("lr_max")) spec.lr_max = doc["lr_max"].get<double>();
    if (doc.contains("lr_end")) spec.lr_end = doc["lr_end"].get<double>();
    if (doc.contains("wd_start")) spec.wd_start = doc["wd_start"].get<double>();
    if (doc.contains("wd_end")) spec.wd_end = doc["wd_end"].get<double>();
    if (doc.contains("warmup_epochs")) spec.warmup_epochs = doc["warmup_epochs"].get<std::size_t>();
    if (doc.contains("stretch")) spec.stretch = doc["stretch"].get<double>();
    spec.validate();
    return spec;
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& doc, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    cfg.config_hash = to_hex(hash_bytes(doc.dump()));
    try {
        if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("out_dir"))
            cfg.out_dir = (base_dir / doc["out_dir"].get<std::string>()).string();
        if (doc.contains("data")) {
            const json& data = doc["data"];
            if (data.contains("manifest"))
                cfg.manifest_path = (base_dir / data["manifest"].get<std::string>()).string();
            if (data.contains("clip_frames"))
                cfg.data_options.clip_frames = data["clip_frames"].get<std::size_t>();
            if (data.contains("anchor_interval"))
                cfg.data_options.anchor_interval = data["anchor_interval"].get<double>();
            if (data.contains("blue_tolerance"))
                cfg.data_options.blue_tolerance = data["blue_tolerance"].get<double>();
        }
        if (doc.contains("backbone")) {
            const json& bb = doc["backbone"];
            if (bb.contains("provider")) cfg.provider = bb["provider"].get<std::string>();
            if (bb.contains("checkpoint") && !bb["checkpoint"].is_null())
                cfg.backbone_checkpoint = (base_dir / bb["checkpoint"].get<std::string>()).string();
            if (bb.contains("embed_dim")) cfg.embed_dim = bb["embed_dim"].get<std::size_t>();
            if (bb.contains("depth")) cfg.backbone_depth = bb["depth"].get<std::size_t>();
            if (bb.contains("heads")) cfg.backbone_heads = bb["heads"].get<std::size_t>();
            if (bb.contains("tubelet_temporal"))
                cfg.tubelet_temporal = bb["tubelet_temporal"].get<std::size_t>();
            if (bb.contains("tubelet_spatial"))
                cfg.tubelet_spatial = bb["tubelet_spatial"].get<std::size_t>();
        }
        if (doc.contains("stream_encoder")) {
            const json& enc = doc["stream_encoder"];
            if (enc.contains("layers")) cfg.encoder_layers = enc["layers"].get<std::size_t>();
            if (enc.contains("heads")) cfg.encoder_heads = enc["heads"].get<std::size_t>();
            if (enc.contains("dropout")) cfg.encoder_dropout = enc["dropout"].get<double>();
            if (enc.contains("window")) cfg.encoder_window = enc["window"].get<std::size_t>();
            if (enc.contains("stride")) cfg.encoder_stride = enc["stride"].get<std::size_t>();
            if (enc.contains("mlp_hidden"))
                cfg.encoder_mlp_hidden = enc["mlp_hidden"].get<std::size_t>();
        }
        if (doc.contains("decoder")) {
            const json& dec = doc["decoder"];
            if (dec.contains("heads")) cfg.decoder_heads = dec["heads"].get<std::size_t>();
            if (dec.contains("mlp_hidden"))
                cfg.decoder_mlp_hidden = dec["mlp_hidden"].get<std::size_t>();
        }
        if (doc.contains("training")) {
            const json& tr = doc["training"];
            if (tr.contains("batch_size")) cfg.batch_size = tr["batch_size"].get<std::size_t>();
            if (tr.contains("lambda")) cfg.lambda = tr["lambda"].get<double>();
            if (tr.contains("step2")) cfg.step2 = detail::schedule_from_json(tr["step2"], cfg.step2);
            if (tr.contains("step3")) cfg.step3 = detail::schedule_from_json(tr["step3"], cfg.step3);
            if (tr.contains("step4")) cfg.step4 = detail::schedule_from_json(tr["step4"], cfg.step4);
        }
        cfg.jepa.epochs = 3;
        cfg.jepa.samples_per_epoch = 64;
        cfg.jepa.lr_start = 1e-4;
        cfg.jepa.lr_max = 1e-3;
        cfg.jepa.lr_end = 0.0;
        cfg.jepa.wd_start = 1e-4;
        cfg.jepa.wd_end = 1e-4;
        if (doc.contains("jepa")) {
            const json& jp = doc["jepa"];
            if (jp.contains("mask_ratio")) cfg.mask_ratio = jp["mask_ratio"].get<double>();
            if (jp.contains("ema_momentum")) cfg.ema_momentum = jp["ema_momentum"].get<double>();
            cfg.jepa = detail::schedule_from_json(jp, cfg.jepa);
            if (jp.contains("finetune_reductions"))
                cfg.finetune_reductions = jp["finetune_reductions"].get<bool>();
        }
        if (cfg.finetune_reductions) {
            cfg.jepa.lr_start /= 100.0;
            cfg.jepa.lr_max /= 100.0;
            cfg.jepa.lr_end /= 100.0;
            cfg.jepa.wd_start /= 10.0;
            cfg.jepa.wd_end /= 10.0;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    if (cfg.batch_size < 1) throw ConfigError("run config: batch size must be >= 1");
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config ") + path + ": " + e.what());
    }
    return run_config_from_json(doc, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Checkpoint container.

struct Checkpoint {
    int step = 0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string rng_state;
    TaskDescriptor task;
    std::optional<json> backbone;
    std::optional<json> decoder;
    std::optional<json> stream_encoder;
    std::optional<json> optimizer;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json doc;
    doc["schema"] = "fusionbench-checkpoint-v1";
    doc["step"] = ckpt.step;
    doc["config_hash"] = ckpt.config_hash;
    doc["seed"] = ckpt.seed;
    doc["rng_state"] = ckpt.rng_state;
    doc["task"] = {{"name", ckpt.task.name}, {"n_classes", ckpt.task.n_classes}};
    if (ckpt.task.exception_class) doc["task"]["exception_class"] = *ckpt.task.exception_class;
    doc["backbone"] = ckpt.backbone ? *ckpt.backbone : json();
    doc["decoder"] = ckpt.decoder ? *ckpt.decoder : json();
    doc["stream_encoder"] = ckpt.stream_encoder ? *ckpt.stream_encoder : json();
    doc["optimizer"] = ckpt.optimizer ? *ckpt.optimizer : json();
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    out << doc.dump(1) << '\n';
    if (!out) throw ConfigError("short write on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("checkpoint ") + path + ": " + e.what());
    }
    Checkpoint ckpt;
    try {
        if (doc.value("schema", "") != "fusionbench-checkpoint-v1")
            throw ConfigError("checkpoint " + path + ": missing or unknown schema tag");
        ckpt.step = doc.at("step").get<int>();
        ckpt.config_hash = doc.at("config_hash").get<std::string>();
        ckpt.seed = doc.at("seed").get<std::uint64_t>();
        ckpt.rng_state = doc.at("rng_state").get<std::string>();
        const json& task = doc.at("task");
        ckpt.task.name = task.at("name").get<std::string>();
        ckpt.task.n_classes = task.at("n_classes").get<std::size_t>();
        if (task.contains("exception_class") && !task["exception_class"].is_null())
            ckpt.task.exception_class = task["exception_class"].get<std::size_t>();
        if (!doc.at("backbone").is_null()) ckpt.backbone = doc["backbone"];
        if (!doc.at("decoder").is_null()) ckpt.decoder = doc["decoder"];
        if (!doc.at("stream_encoder").is_null()) ckpt.stream_encoder = doc["stream_encoder"];
        if (!doc.at("optimizer").is_null()) ckpt.optimizer = doc["optimizer"];
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint " + path + ": " + e.what());
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Backbone provider registry: run configs select providers by name, and the
// factory rebuilds one from the checkpoint's backbone section.

using ProviderFactory = std::function<std::unique_ptr<BackboneProvider>(const json&)>;

inline std::map<std::string, ProviderFactory>& provider_registry() {
    static std::map<std::string, ProviderFactory> registry{
        {"stub", [](const json& doc) -> std::unique_ptr<BackboneProvider> {
             return std::make_unique<StubBackboneProvider>(
                 std::make_shared<VideoBackbone>(backbone_from_json(doc)));
         }}};
    return registry;
}

inline void register_backbone_provider(const std::string& name, ProviderFactory factory) {
    provider_registry()[name] = std::move(factory);
}

inline std::unique_ptr<BackboneProvider> make_backbone_provider(const json& backbone_doc) {
    const std::string name = backbone_doc.value("provider", "stub");
    const auto it = provider_registry().find(name);
    if (it == provider_registry().end())
        throw ConfigError("unknown backbone provider: " + name);
    return it->second(backbone_doc);
}

}  // namespace fusionbench
