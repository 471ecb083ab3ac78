#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "fusionbench/errors.hpp"
#include "fusionbench/matrix.hpp"
#include "fusionbench/nn.hpp"
#include "fusionbench/rng.hpp"
#include "fusionbench/stream_encoder.hpp"  // sinusoidal_position_row

namespace fusionbench {

// ---------------------------------------------------------------------------
// Video domain types.

struct VideoClip {
    std::size_t frames = 0, height = 0, width = 0, channels = 0;
    std::vector<float> data;  // (T x H x W x C), values in [0, 1]
    double fps = 1.0;
    double anchor_time = 0.0;

    float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return data[((t * height + y) * width + x) * channels + c];
    }
    float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
        return data[((t * height + y) * width + x) * channels + c];
    }
};

struct TubeletSpec {
    std::size_t temporal_width = 2;
    std::size_t spatial_size = 8;
    std::size_t embed_dim = 32;
};

struct TokenizedVideo {
    struct Position {
        std::size_t t = 0, row = 0, col = 0;
    };
    Matrix tokens;  // (n_v x d_raw), d_raw = temporal_width * spatial^2 * C
    std::vector<Position> positions;
};

struct TokenMask {
    std::vector<std::size_t> masked;  // sorted, strictly inside [0, n_v)
    double ratio = 0.0;
};

// ---------------------------------------------------------------------------
// Tubelet tokenization: non-overlapping (w_t x p x p) cells in scan order
// (time-major, then row, then column), each flattened to one raw token.

inline std::size_t raw_token_dim(const TubeletSpec& spec, std::size_t channels) {
    return spec.temporal_width * spec.spatial_size * spec.spatial_size * channels;
}

inline std::size_t token_count(const VideoClip& clip, const TubeletSpec& spec) {
    return (clip.frames / spec.temporal_width) * (clip.height / spec.spatial_size) *
           (clip.width / spec.spatial_size);
}

inline TokenizedVideo tokenize_video(const VideoClip& clip, const TubeletSpec& spec) {
    if (clip.frames == 0 || clip.height == 0 || clip.width == 0 || clip.channels == 0)
        throw ShapeError("tokenize_video: empty clip");
    if (clip.frames % spec.temporal_width != 0)
        throw ShapeError("tokenize_video: frame count not divisible by tubelet temporal width");
    if (clip.height % spec.spatial_size != 0 || clip.width % spec.spatial_size != 0)
        throw ShapeError("tokenize_video: frame size not divisible by tubelet spatial size");

    const std::size_t nt = clip.frames / spec.temporal_width;
    const std::size_t nr = clip.height / spec.spatial_size;
    const std::size_t nc = clip.width / spec.spatial_size;
    const std::size_t d_raw = raw_token_dim(spec, clip.channels);

    TokenizedVideo out;
    out.tokens = Matrix(nt * nr * nc, d_raw);
    out.positions.reserve(nt * nr * nc);
    std::size_t row = 0;
    for (std::size_t ti = 0; ti < nt; ++ti) {
        for (std::size_t ri = 0; ri < nr; ++ri) {
            for (std::size_t ci = 0; ci < nc; ++ci, ++row) {
                std::size_t col = 0;
                for (std::size_t dt = 0; dt < spec.temporal_width; ++dt)
                    for (std::size_t dy = 0; dy < spec.spatial_size; ++dy)
                        for (std::size_t dx = 0; dx < spec.spatial_size; ++dx)
                            for (std::size_t ch = 0; ch < clip.channels; ++ch, ++col)
                                out.tokens(row, col) = static_cast<double>(
                                    clip.at(ti * spec.temporal_width + dt,
                                            ri * spec.spatial_size + dy,
                                            ci * spec.spatial_size + dx, ch));
                out.positions.push_back({ti, ri, ci});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Uniform random token masking, reproducible under a fixed seed.

inline TokenMask sample_mask(std::size_t n_tokens, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("sample_mask: ratio must lie strictly in (0, 1)");
    if (n_tokens < 2) throw ShapeError("sample_mask: need at least two tokens");
    std::size_t count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_tokens)));
    count = std::clamp<std::size_t>(count, 1, n_tokens - 1);
    std::vector<std::size_t> order(n_tokens);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    TokenMask mask;
    mask.ratio = ratio;
    mask.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(mask.masked.begin(), mask.masked.end());
    return mask;
}

// ---------------------------------------------------------------------------
// Encoder network: linear tubelet projection + fixed sinusoidal positional
// encodings, followed by a (possibly empty) stack of pre-norm transformer
// blocks. Depth 0 keeps the projection only.

struct TransformerBlockParams {
    Param norm1_gain, norm1_bias;
    Param w_q, b_q, w_k, b_k, w_v, b_v, w_out, b_out;
    Param norm2_gain, norm2_bias;
    Param mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct EncoderNet {
    std::size_t embed_dim = 32;
    std::size_t heads = 4;
    Param embed_w, embed_b;  // (d_raw x d), (1 x d)
    std::vector<TransformerBlockParams> blocks;
    Param final_norm_gain, final_norm_bias;  // applied only when depth >= 1

    void visit_params(const std::string& prefix, const ParamFn& fn) {
        fn(prefix + ".embed_w", embed_w);
        fn(prefix + ".embed_b", embed_b);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string tag = prefix + ".block" + std::to_string(i);
            TransformerBlockParams& b = blocks[i];
            fn(tag + ".norm1_gain", b.norm1_gain);
            fn(tag + ".norm1_bias", b.norm1_bias);
            fn(tag + ".w_q", b.w_q);
            fn(tag + ".b_q", b.b_q);
            fn(tag + ".w_k", b.w_k);
            fn(tag + ".b_k", b.b_k);
            fn(tag + ".w_v", b.w_v);
            fn(tag + ".b_v", b.b_v);
            fn(tag + ".w_out", b.w_out);
            fn(tag + ".b_out", b.b_out);
            fn(tag + ".norm2_gain", b.norm2_gain);
            fn(tag + ".norm2_bias", b.norm2_bias);
            fn(tag + ".mlp_w1", b.mlp_w1);
            fn(tag + ".mlp_b1", b.mlp_b1);
            fn(tag + ".mlp_w2", b.mlp_w2);
            fn(tag + ".mlp_b2", b.mlp_b2);
        }
        if (!blocks.empty()) {
            fn(prefix + ".final_norm_gain", final_norm_gain);
            fn(prefix + ".final_norm_bias", final_norm_bias);
        }
    }
};

inline EncoderNet init_encoder_net(std::size_t d_raw, std::size_t embed_dim, std::size_t depth,
                                   std::size_t heads, Rng& rng, std::size_t mlp_hidden = 0) {
    if (heads == 0 || embed_dim % heads != 0)
        throw ShapeError("encoder net: embed dim must be divisible by head count");
    if (mlp_hidden == 0) mlp_hidden = 4 * embed_dim;
    EncoderNet net;
    net.embed_dim = embed_dim;
    net.heads = heads;
    net.embed_w = Param(xavier_normal(d_raw, embed_dim, rng));
    net.embed_b = Param(1, embed_dim);
    for (std::size_t i = 0; i < depth; ++i) {
        TransformerBlockParams b;
        b.norm1_gain = Param(1, embed_dim, 1.0);
        b.norm1_bias = Param(1, embed_dim);
        b.w_q = Param(xavier_normal(embed_dim, embed_dim, rng));
        b.b_q = Param(1, embed_dim);
        b.w_k = Param(xavier_normal(embed_dim, embed_dim, rng));
        b.b_k = Param(1, embed_dim);
        b.w_v = Param(xavier_normal(embed_dim, embed_dim, rng));
        b.b_v = Param(1, embed_dim);
        b.w_out = Param(xavier_normal(embed_dim, embed_dim, rng));
        b.b_out = Param(1, embed_dim);
        b.norm2_gain = Param(1, embed_dim, 1.0);
        b.norm2_bias = Param(1, embed_dim);
        b.mlp_w1 = Param(xavier_normal(embed_dim, mlp_hidden, rng));
        b.mlp_b1 = Param(1, mlp_hidden);
        b.mlp_w2 = Param(xavier_normal(mlp_hidden, embed_dim, rng));
        b.mlp_b2 = Param(1, embed_dim);
        net.blocks.push_back(std::move(b));
    }
    net.final_norm_gain = Param(1, embed_dim, 1.0);
    net.final_norm_bias = Param(1, embed_dim);
    return net;
}

struct TransformerBlockCache {
    Matrix x_in;
    Matrix normed1;
    LayerNormCache ln1;
    AttentionCache attention;
    Matrix attended;
    Matrix x_mid;
    Matrix normed2;
    LayerNormCache ln2;
    Matrix mlp_pre;
    Matrix mlp_hidden;
};

struct EncoderNetCache {
    Matrix raw_tokens;
    std::vector<TransformerBlockCache> blocks;
    Matrix pre_final;
    LayerNormCache final_ln;
};

inline Matrix transformer_block_forward(TransformerBlockParams& b, std::size_t heads,
                                        const Matrix& x, TransformerBlockCache* cache) {
    LayerNormCache ln1;
    const Matrix normed1 = layer_norm(x, b.norm1_gain, b.norm1_bias, cache ? &ln1 : nullptr);
    const Matrix q = linear(normed1, b.w_q, b.b_q);
    const Matrix k = linear(normed1, b.w_k, b.b_k);
    const Matrix v = linear(normed1, b.w_v, b.b_v);
    AttentionCache att;
    const Matrix attended =
        multi_head_attention(q, k, v, heads, 0.0, nullptr, cache ? &att : nullptr);
    const Matrix x_mid = add(x, linear(attended, b.w_out, b.b_out));
    LayerNormCache ln2;
    const Matrix normed2 = layer_norm(x_mid, b.norm2_gain, b.norm2_bias, cache ? &ln2 : nullptr);
    const Matrix mlp_pre = linear(normed2, b.mlp_w1, b.mlp_b1);
    const Matrix hidden = gelu(mlp_pre);
    Matrix out = add(x_mid, linear(hidden, b.mlp_w2, b.mlp_b2));
    if (cache) {
        cache->x_in = x;
        cache->normed1 = normed1;
        cache->ln1 = std::move(ln1);
        cache->attention = std::move(att);
        cache->attended = attended;
        cache->x_mid = x_mid;
        cache->normed2 = normed2;
        cache->ln2 = std::move(ln2);
        cache->mlp_pre = mlp_pre;
        cache->mlp_hidden = hidden;
    }
    return out;
}

inline Matrix transformer_block_backward(TransformerBlockParams& b,
                                         const TransformerBlockCache& cache,
                                         const Matrix& d_out) {
    Matrix d_x_mid = d_out;
    const Matrix d_hidden = linear_backward(cache.mlp_hidden, b.mlp_w2, b.mlp_b2, d_out);
    const Matrix d_mlp_pre = gelu_backward(cache.mlp_pre, d_hidden);
    const Matrix d_normed2 = linear_backward(cache.normed2, b.mlp_w1, b.mlp_b1, d_mlp_pre);
    add_in_place(d_x_mid, layer_norm_backward(cache.ln2, b.norm2_gain, b.norm2_bias, d_normed2));

    const Matrix d_attended = linear_backward(cache.attended, b.w_out, b.b_out, d_x_mid);
    Matrix dq, dk, dv;
    multi_head_attention_backward(cache.attention, d_attended, dq, dk, dv);
    Matrix d_normed1 = linear_backward(cache.normed1, b.w_q, b.b_q, dq);
    add_in_place(d_normed1, linear_backward(cache.normed1, b.w_k, b.b_k, dk));
    add_in_place(d_normed1, linear_backward(cache.normed1, b.w_v, b.b_v, dv));

    Matrix dx = layer_norm_backward(cache.ln1, b.norm1_gain, b.norm1_bias, d_normed1);
    add_in_place(dx, d_x_mid);
    return dx;
}

inline Matrix encoder_net_forward(EncoderNet& net, const Matrix& raw_tokens,
                                  const Matrix& positional, EncoderNetCache* cache) {
    Matrix x = add(linear(raw_tokens, net.embed_w, net.embed_b), positional);
    if (cache) {
        cache->raw_tokens = raw_tokens;
        cache->blocks.assign(net.blocks.size(), TransformerBlockCache{});
    }
    for (std::size_t i = 0; i < net.blocks.size(); ++i)
        x = transformer_block_forward(net.blocks[i], net.heads, x, cache ? &cache->blocks[i] : nullptr);
    if (!net.blocks.empty()) {
        if (cache) cache->pre_final = x;
        LayerNormCache final_ln;
        x = layer_norm(x, net.final_norm_gain, net.final_norm_bias, cache ? &final_ln : nullptr);
        if (cache) cache->final_ln = std::move(final_ln);
    }
    return x;
}

inline void encoder_net_backward(EncoderNet& net, const EncoderNetCache& cache,
                                 const Matrix& d_out) {
    Matrix dx = d_out;
    if (!net.blocks.empty())
        dx = layer_norm_backward(cache.final_ln, net.final_norm_gain, net.final_norm_bias, dx);
    for (std::size_t i = net.blocks.size(); i-- > 0;)
        dx = transformer_block_backward(net.blocks[i], cache.blocks[i], dx);
    // embed: x0 = raw W_e + b_e + positional (positional carries no params)
    add_in_place(net.embed_w.grad, matmul_tn(cache.raw_tokens, dx));
    add_in_place(net.embed_b.grad, col_sum(dx));
}

// ---------------------------------------------------------------------------
// Predictor: per masked location, a two-layer GELU perceptron over the pooled
// student embedding concatenated with a learned mask-position embedding.

struct PredictorNet {
    Param pos_embed;                    // (n_v x d)
    Param w1, b1, w2, b2;               // (2d x hidden), (hidden x d)

    void visit_params(const std::string& prefix, const ParamFn& fn) {
        fn(prefix + ".pos_embed", pos_embed);
        fn(prefix + ".w1", w1);
        fn(prefix + ".b1", b1);
        fn(prefix + ".w2", w2);
        fn(prefix + ".b2", b2);
    }
};

inline PredictorNet init_predictor_net(std::size_t n_tokens, std::size_t embed_dim, Rng& rng,
                                       std::size_t hidden = 0) {
    if (hidden == 0) hidden = 2 * embed_dim;
    PredictorNet p;
    p.pos_embed = Param(random_normal(n_tokens, embed_dim, 0.02, rng));
    p.w1 = Param(xavier_normal(2 * embed_dim, hidden, rng));
    p.b1 = Param(1, hidden);
    p.w2 = Param(xavier_normal(hidden, embed_dim, rng));
    p.b2 = Param(1, embed_dim);
    return p;
}

// ---------------------------------------------------------------------------
// The desk-scale backbone: frozen-capable student/teacher pair plus the
// discardable predictor. `encode` always reads the teacher weights.

struct BackboneGeometry {
    std::size_t clip_frames = 8, height = 16, width = 16, channels = 3;
    TubeletSpec tubelet{2, 8, 32};
    std::size_t depth = 2;
    std::size_t heads = 4;

    std::size_t token_grid_t() const { return clip_frames / tubelet.temporal_width; }
    std::size_t token_grid_r() const { return height / tubelet.spatial_size; }
    std::size_t token_grid_c() const { return width / tubelet.spatial_size; }
    std::size_t n_tokens() const { return token_grid_t() * token_grid_r() * token_grid_c(); }
    std::size_t raw_dim() const { return raw_token_dim(tubelet, channels); }

    void validate() const {
        if (tubelet.temporal_width < 1 || tubelet.spatial_size < 1 || tubelet.embed_dim < 1)
            throw ConfigError("backbone geometry: tubelet fields must be positive");
        if (clip_frames % tubelet.temporal_width != 0)
            throw ConfigError("backbone geometry: clip frames not divisible by tubelet width");
        if (height % tubelet.spatial_size != 0 || width % tubelet.spatial_size != 0)
            throw ConfigError("backbone geometry: frame size not divisible by tubelet spatial size");
    }
};

// Fixed spatiotemporal encoding: the sum of one sinusoidal row per axis.
inline Matrix spatiotemporal_encoding(const BackboneGeometry& geo) {
    const std::size_t d = geo.tubelet.embed_dim;
    Matrix pe(geo.n_tokens(), d);
    std::size_t row = 0;
    for (std::size_t t = 0; t < geo.token_grid_t(); ++t)
        for (std::size_t r = 0; r < geo.token_grid_r(); ++r)
            for (std::size_t c = 0; c < geo.token_grid_c(); ++c, ++row) {
                Matrix enc = sinusoidal_position_row(static_cast<double>(t), d);
                add_in_place(enc, sinusoidal_position_row(static_cast<double>(r), d));
                add_in_place(enc, sinusoidal_position_row(static_cast<double>(c), d));
                pe.set_row(row, enc);
            }
    return pe;
}

struct VideoBackbone {
    BackboneGeometry geometry;
    EncoderNet student;
    EncoderNet teacher;
    PredictorNet predictor;
    Matrix positional;  // fixed, (n_v x d)

    static VideoBackbone init(const BackboneGeometry& geo, std::uint64_t seed) {
        geo.validate();
        Rng rng(seed);
        VideoBackbone model;
        model.geometry = geo;
        model.student = init_encoder_net(geo.raw_dim(), geo.tubelet.embed_dim, geo.depth,
                                         geo.heads, rng);
        model.teacher = model.student;  // teacher starts as a copy of the student
        model.predictor = init_predictor_net(geo.n_tokens(), geo.tubelet.embed_dim, rng);
        model.positional = spatiotemporal_encoding(geo);
        return model;
    }

    void check_clip(const VideoClip& clip) const {
        if (clip.frames != geometry.clip_frames || clip.height != geometry.height ||
            clip.width != geometry.width || clip.channels != geometry.channels)
            throw ShapeError("backbone: clip shape disagrees with configured geometry");
    }

    // Pure function of (clip, teacher weights); deterministic.
    Matrix encode(const VideoClip& clip) {
        check_clip(clip);
        const TokenizedVideo tokens = tokenize_video(clip, geometry.tubelet);
        return encoder_net_forward(teacher, tokens.tokens, positional, nullptr);
    }

    void visit_trainable(const ParamFn& fn) {
        student.visit_params("student", fn);
        predictor.visit_params("predictor", fn);
    }

    void visit_all(const ParamFn& fn) {
        student.visit_params("student", fn);
        teacher.visit_params("teacher", fn);
        predictor.visit_params("predictor", fn);
    }
};

// teacher <- momentum * teacher + (1 - momentum) * student, per named array.
inline void ema_update(EncoderNet& teacher, EncoderNet& student, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0))
        throw std::invalid_argument("ema_update: momentum must lie in [0, 1]");
    std::vector<std::pair<std::string, Param*>> t_params, s_params;
    teacher.visit_params("net", [&](const std::string& n, Param& p) { t_params.emplace_back(n, &p); });
    student.visit_params("net", [&](const std::string& n, Param& p) { s_params.emplace_back(n, &p); });
    if (t_params.size() != s_params.size())
        throw ShapeError("ema_update: parameter lists differ in length");
    for (std::size_t i = 0; i < t_params.size(); ++i) {
        if (t_params[i].first != s_params[i].first)
            throw ShapeError("ema_update: parameter name mismatch at " + t_params[i].first);
        Matrix& tv = t_params[i].second->value;
        const Matrix& sv = s_params[i].second->value;
        if (!tv.same_shape(sv))
            throw ShapeError("ema_update: shape mismatch at " + t_params[i].first);
        for (std::size_t k = 0; k < tv.size(); ++k)
            tv.raw()[k] = momentum * tv.raw()[k] + (1.0 - momentum) * sv.raw()[k];
    }
}

// ---------------------------------------------------------------------------
// Masked-embedding objective: the student sees only unmasked tokens, the
// teacher sees everything, and the predictor estimates the teacher embedding
// at the masked locations. L1, averaged per clip and then over the batch.

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(rows[i], j);
    return out;
}

}  // namespace detail

inline double masked_embedding_loss(const std::vector<VideoClip>& clips,
                                    const std::vector<TokenMask>& masks, VideoBackbone& model,
                                    bool with_grad) {
    if (clips.empty()) throw std::invalid_argument("masked_embedding_loss: empty batch");
    if (clips.size() != masks.size())
        throw ShapeError("masked_embedding_loss: one mask per clip required");
    const std::size_t n_v = model.geometry.n_tokens();
    const std::size_t d = model.geometry.tubelet.embed_dim;
    const double clip_weight = 1.0 / static_cast<double>(clips.size());

    double total = 0.0;
    for (std::size_t ci = 0; ci < clips.size(); ++ci) {
        model.check_clip(clips[ci]);
        const TokenizedVideo tokens = tokenize_video(clips[ci], model.geometry.tubelet);
        const Matrix target = encoder_net_forward(model.teacher, tokens.tokens, model.positional,
                                                  nullptr);

        const std::vector<std::size_t>& masked = masks[ci].masked;
        std::vector<std::size_t> kept;
        kept.reserve(n_v - masked.size());
        {
            std::vector<bool> is_masked(n_v, false);
            for (std::size_t idx : masked) {
                if (idx >= n_v) throw ShapeError("masked_embedding_loss: mask index out of range");
                is_masked[idx] = true;
            }
            for (std::size_t i = 0; i < n_v; ++i)
                if (!is_masked[i]) kept.push_back(i);
        }
        if (kept.empty() || masked.empty())
            throw ShapeError("masked_embedding_loss: mask must leave both sides nonempty");

        const Matrix raw_kept = detail::gather_rows(tokens.tokens, kept);
        const Matrix pos_kept = detail::gather_rows(model.positional, kept);
        EncoderNetCache student_cache;
        const Matrix context = encoder_net_forward(model.student, raw_kept, pos_kept,
                                                   with_grad ? &student_cache : nullptr);

        // Mean-pool the visible context.
        Matrix pooled(1, d);
        for (std::size_t i = 0; i < context.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) pooled(0, j) += context(i, j);
        scale_in_place(pooled, 1.0 / static_cast<double>(context.rows()));

        const double elem_weight =
            clip_weight / (static_cast<double>(masked.size()) * static_cast<double>(d));
        Matrix d_pooled(1, d);
        for (std::size_t mi = 0; mi < masked.size(); ++mi) {
            const std::size_t idx = masked[mi];
            Matrix input(1, 2 * d);
            for (std::size_t j = 0; j < d; ++j) {
                input(0, j) = pooled(0, j);
                input(0, d + j) = model.predictor.pos_embed.value(idx, j);
            }
            const Matrix pre = linear(input, model.predictor.w1, model.predictor.b1);
            const Matrix hidden = gelu(pre);
            const Matrix estimate = linear(hidden, model.predictor.w2, model.predictor.b2);

            Matrix d_estimate(1, d);
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = estimate(0, j) - target(idx, j);
                total += std::abs(diff) * elem_weight;
                if (diff > 0.0)
                    d_estimate(0, j) = elem_weight;
                else if (diff < 0.0)
                    d_estimate(0, j) = -elem_weight;
            }
            if (!with_grad) continue;
            const Matrix d_hidden =
                linear_backward(hidden, model.predictor.w2, model.predictor.b2, d_estimate);
            const Matrix d_pre = gelu_backward(pre, d_hidden);
            const Matrix d_input = linear_backward(input, model.predictor.w1, model.predictor.b1, d_pre);
            for (std::size_t j = 0; j < d; ++j) {
                d_pooled(0, j) += d_input(0, j);
                model.predictor.pos_embed.grad(idx, j) += d_input(0, d + j);
            }
        }

        if (with_grad) {
            Matrix d_context(context.rows(), d);
            const double spread = 1.0 / static_cast<double>(context.rows());
            for (std::size_t i = 0; i < context.rows(); ++i)
                for (std::size_t j = 0; j < d; ++j) d_context(i, j) = d_pooled(0, j) * spread;
            encoder_net_backward(model.student, student_cache, d_context);
        }
    }
    return total;
}

// One optimizer step of the self-supervised loop: student and predictor move
// by AdamW, the teacher follows by EMA, gradients never touch the teacher.
inline double jepa_step(const std::vector<VideoClip>& batch, VideoBackbone& model,
                        double mask_ratio, double ema_momentum, AdamW& opt, double lr, double wd,
                        Rng& rng) {
    std::vector<TokenMask> masks;
    masks.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        masks.push_back(sample_mask(model.geometry.n_tokens(), mask_ratio, rng));
    zero_grads([&](const ParamFn& fn) { model.visit_trainable(fn); });
    const double loss = masked_embedding_loss(batch, masks, model, /*with_grad=*/true);
    if (!std::isfinite(loss))
        throw DivergenceError("self-supervised loss is not finite; aborting");
    opt.step(lr, wd, [&](const ParamFn& fn) { model.visit_trainable(fn); });
    ema_update(model.teacher, model.student, ema_momentum);
    return loss;
}

// ---------------------------------------------------------------------------
// Plug-in surface: anything that can map clips to state vectors may serve as
// the backbone. The registry lives with the checkpoint machinery.

class BackboneProvider {
public:
    virtual ~BackboneProvider() = default;
    virtual std::string provider_name() const = 0;
    virtual std::size_t state_tokens() const = 0;
    virtual std::size_t embed_dim() const = 0;
    virtual Matrix encode(const VideoClip& clip) const = 0;
};

class StubBackboneProvider final : public BackboneProvider {
public:
    explicit StubBackboneProvider(std::shared_ptr<VideoBackbone> model)
        : model_(std::move(model)) {}

    std::string provider_name() const override { return "stub"; }
    std::size_t state_tokens() const override { return model_->geometry.n_tokens(); }
    std::size_t embed_dim() const override { return model_->geometry.tubelet.embed_dim; }
    Matrix encode(const VideoClip& clip) const override { return model_->encode(clip); }

    VideoBackbone& model() { return *model_; }
    const VideoBackbone& model() const { return *model_; }

private:
    std::shared_ptr<VideoBackbone> model_;
};

}  // namespace fusionbench
