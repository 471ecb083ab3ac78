#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fusionbench/errors.hpp"
#include "fusionbench/matrix.hpp"
#include "fusionbench/nn.hpp"
#include "fusionbench/rng.hpp"

namespace fusionbench {

// ---------------------------------------------------------------------------
// Time-resolved data streams: S named channels sampled on one timestamp axis.

struct StreamSeries {
    std::vector<double> timestamps;
    std::vector<std::string> channel_names;
    std::vector<std::string> units;                // per channel, may be empty
    std::vector<std::vector<double>> values;       // [channel][sample]

    std::size_t channel_count() const { return values.size(); }
    std::size_t length() const { return timestamps.size(); }

    void validate() const {
        if (channel_names.size() != values.size())
            throw ConfigError("stream series: channel name count disagrees with value columns");
        for (std::size_t c = 0; c < values.size(); ++c) {
            if (values[c].size() != timestamps.size())
                throw ConfigError("stream series: channel '" + channel_names[c] +
                                  "' length disagrees with timestamps");
            for (double v : values[c])
                if (!std::isfinite(v))
                    throw ConfigError("stream series: non-finite value in channel '" +
                                      channel_names[c] + "'");
        }
        for (std::size_t i = 1; i < timestamps.size(); ++i)
            if (!(timestamps[i] > timestamps[i - 1]))
                throw ConfigError("stream series: timestamps must be strictly increasing");
    }
};

// Sinusoidal position row in the usual transformer layout: even dims sine,
// odd dims cosine, geometric frequency ladder.
inline Matrix sinusoidal_position_row(double position, std::size_t dim) {
    Matrix out(1, dim);
    for (std::size_t j = 0; j < dim; ++j) {
        const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(dim);
        const double angle = position * std::pow(10000.0, -exponent);
        out(0, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stream tokenizer: each channel is cut into sliding windows of the video
// tubelet's temporal width, projected per channel, and tagged with a learned
// channel embedding plus a sinusoidal window-position encoding.

struct StreamTokenizerSpec {
    std::size_t window = 2;   // = backbone tubelet temporal width
    std::size_t stride = 1;
    std::size_t embed_dim = 32;
};

struct StreamTokenizerCache {
    Matrix windows;                    // (n_m x window) raw values per token
    std::vector<std::size_t> channel;  // channel index per token
};

struct StreamTokenizer {
    StreamTokenizerSpec spec;
    std::vector<Param> proj_w;        // per channel: (window x d)
    std::vector<Param> proj_b;        // per channel: (1 x d)
    std::vector<Param> channel_embed; // per channel: (1 x d)

    static StreamTokenizer init(const StreamTokenizerSpec& spec, std::size_t channels,
                                Rng& rng) {
        if (spec.window < 1 || spec.stride < 1)
            throw ConfigError("stream tokenizer: window and stride must be >= 1");
        StreamTokenizer tok;
        tok.spec = spec;
        for (std::size_t c = 0; c < channels; ++c) {
            tok.proj_w.emplace_back(xavier_normal(spec.window, spec.embed_dim, rng));
            tok.proj_b.emplace_back(1, spec.embed_dim);
            tok.channel_embed.emplace_back(random_normal(1, spec.embed_dim, 0.02, rng));
        }
        return tok;
    }

    std::size_t channel_count() const { return proj_w.size(); }

    std::size_t windows_per_channel(std::size_t samples) const {
        if (samples < spec.window)
            throw ShapeError("stream tokenizer: channel shorter than window (" +
                             std::to_string(samples) + " < " + std::to_string(spec.window) + ")");
        return (samples - spec.window) / spec.stride + 1;
    }

    Matrix tokenize(const StreamSeries& streams, StreamTokenizerCache* cache = nullptr) const {
        if (streams.channel_count() != channel_count())
            throw ShapeError("stream tokenizer: channel count disagrees with parameters");
        const std::size_t d = spec.embed_dim;
        const std::size_t n_win = windows_per_channel(streams.length());
        Matrix tokens(channel_count() * n_win, d);
        Matrix windows(channel_count() * n_win, spec.window);
        std::vector<std::size_t> channel_of(channel_count() * n_win);
        std::size_t row = 0;
        for (std::size_t c = 0; c < channel_count(); ++c) {
            for (std::size_t i = 0; i < n_win; ++i, ++row) {
                const std::size_t start = i * spec.stride;
                Matrix x(1, spec.window);
                for (std::size_t k = 0; k < spec.window; ++k)
                    x(0, k) = streams.values[c][start + k];
                Matrix tok = linear(x, proj_w[c], proj_b[c]);
                add_in_place(tok, channel_embed[c].value);
                add_in_place(tok, sinusoidal_position_row(static_cast<double>(i), d));
                tokens.set_row(row, tok);
                windows.set_row(row, x);
                channel_of[row] = c;
            }
        }
        if (cache) {
            cache->windows = std::move(windows);
            cache->channel = std::move(channel_of);
        }
        return tokens;
    }

    void backward(const StreamTokenizerCache& cache, const Matrix& d_tokens) {
        for (std::size_t row = 0; row < cache.channel.size(); ++row) {
            const std::size_t c = cache.channel[row];
            for (std::size_t k = 0; k < spec.window; ++k)
                for (std::size_t j = 0; j < spec.embed_dim; ++j)
                    proj_w[c].grad(k, j) += cache.windows(row, k) * d_tokens(row, j);
            for (std::size_t j = 0; j < spec.embed_dim; ++j) {
                proj_b[c].grad(0, j) += d_tokens(row, j);
                channel_embed[c].grad(0, j) += d_tokens(row, j);
            }
        }
    }

    void visit_params(const ParamFn& fn) {
        for (std::size_t c = 0; c < proj_w.size(); ++c) {
            const std::string tag = "tokenizer.ch" + std::to_string(c);
            fn(tag + ".proj_w", proj_w[c]);
            fn(tag + ".proj_b", proj_b[c]);
            fn(tag + ".embed", channel_embed[c]);
        }
    }
};

// Stateless tokenization per the module contract; parameters drawn fresh
// from the seed. Training paths keep a StreamTokenizer instance instead.
inline Matrix tokenize_streams(const StreamSeries& streams, const StreamTokenizerSpec& spec,
                               std::uint64_t seed = 0) {
    Rng rng(seed);
    StreamTokenizer tok = StreamTokenizer::init(spec, streams.channel_count(), rng);
    return tok.tokenize(streams);
}

// ---------------------------------------------------------------------------
// Fusion layers. Queries come from the running state, keys/values from the
// layer-normed stream tokens; the attended update enters through a residual,
// then a GELU perceptron on the normed intermediate state is added on top.
// The q/k/v transforms are one shared set of arrays referenced by all layers;
// the output projection, norms, and perceptron are per layer.

struct FusionLayerParams {
    Param norm_t_gain, norm_t_bias;
    Param w_out, b_out;
    Param norm_s_gain, norm_s_bias;
    Param mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct FusionParams {
    std::size_t embed_dim = 32;
    std::size_t heads = 4;
    double dropout = 0.2;
    Param w_q, b_q, w_k, b_k, w_v, b_v;  // shared by every layer
    std::vector<FusionLayerParams> layers;

    std::size_t layer_count() const { return layers.size(); }

    void visit_params(const ParamFn& fn) {
        fn("fusion.shared.w_q", w_q);
        fn("fusion.shared.b_q", b_q);
        fn("fusion.shared.w_k", w_k);
        fn("fusion.shared.b_k", b_k);
        fn("fusion.shared.w_v", w_v);
        fn("fusion.shared.b_v", b_v);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string tag = "fusion.layer" + std::to_string(l);
            FusionLayerParams& lp = layers[l];
            fn(tag + ".norm_t_gain", lp.norm_t_gain);
            fn(tag + ".norm_t_bias", lp.norm_t_bias);
            fn(tag + ".w_out", lp.w_out);
            fn(tag + ".b_out", lp.b_out);
            fn(tag + ".norm_s_gain", lp.norm_s_gain);
            fn(tag + ".norm_s_bias", lp.norm_s_bias);
            fn(tag + ".mlp_w1", lp.mlp_w1);
            fn(tag + ".mlp_b1", lp.mlp_b1);
            fn(tag + ".mlp_w2", lp.mlp_w2);
            fn(tag + ".mlp_b2", lp.mlp_b2);
        }
    }
};

// Residual paths start as exact identities: the output projection and the
// perceptron's output layer are zeroed, everything else is seeded random.
inline FusionParams init_fusion_params(std::size_t embed_dim, std::size_t heads,
                                       std::size_t layer_count, std::uint64_t seed,
                                       double dropout = 0.2, std::size_t mlp_hidden = 0) {
    if (heads == 0 || embed_dim % heads != 0)
        throw ShapeError("fusion params: embed dim must be divisible by head count");
    if (layer_count < 1) throw ConfigError("fusion params: need at least one layer");
    if (mlp_hidden == 0) mlp_hidden = 4 * embed_dim;
    Rng rng(seed);
    FusionParams p;
    p.embed_dim = embed_dim;
    p.heads = heads;
    p.dropout = dropout;
    p.w_q = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_q = Param(1, embed_dim);
    p.w_k = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_k = Param(1, embed_dim);
    p.w_v = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_v = Param(1, embed_dim);
    for (std::size_t l = 0; l < layer_count; ++l) {
        FusionLayerParams lp;
        lp.norm_t_gain = Param(1, embed_dim, 1.0);
        lp.norm_t_bias = Param(1, embed_dim);
        lp.w_out = Param(embed_dim, embed_dim);  // zero
        lp.b_out = Param(1, embed_dim);          // zero
        lp.norm_s_gain = Param(1, embed_dim, 1.0);
        lp.norm_s_bias = Param(1, embed_dim);
        lp.mlp_w1 = Param(xavier_normal(embed_dim, mlp_hidden, rng));
        lp.mlp_b1 = Param(1, mlp_hidden);
        lp.mlp_w2 = Param(mlp_hidden, embed_dim);  // zero
        lp.mlp_b2 = Param(1, embed_dim);           // zero
        p.layers.push_back(std::move(lp));
    }
    return p;
}

struct FusionLayerCache {
    Matrix s_in;
    Matrix tokens_normed;
    LayerNormCache norm_t;
    AttentionCache attention;
    Matrix attended;        // pre output-projection
    Matrix s_tilde;
    Matrix s_tilde_normed;
    LayerNormCache norm_s;
    Matrix mlp_pre;         // pre-GELU
    Matrix mlp_hidden;      // post-GELU, post-dropout
    Matrix hidden_mask;     // empty when dropout inactive
};

// One fusion layer forward. `rng` non-null enables training mode (dropout on
// attention weights and perceptron hidden activations).
inline Matrix fusion_layer(const Matrix& tokens, const Matrix& s_prev, std::size_t layer_index,
                           FusionParams& params, Rng* rng = nullptr,
                           FusionLayerCache* cache = nullptr) {
    if (layer_index >= params.layer_count())
        throw ShapeError("fusion layer index out of range");
    const std::size_t d = params.embed_dim;
    require_shape(params.w_q.value, d, d, "fusion w_q");
    if (s_prev.cols() != d) throw ShapeError("fusion layer: state width disagrees with params");
    if (tokens.cols() != d) throw ShapeError("fusion layer: token width disagrees with params");
    FusionLayerParams& lp = params.layers[layer_index];

    LayerNormCache norm_t_cache;
    const Matrix tokens_normed =
        layer_norm(tokens, lp.norm_t_gain, lp.norm_t_bias, cache ? &norm_t_cache : nullptr);
    const Matrix q = linear(s_prev, params.w_q, params.b_q);
    const Matrix k = linear(tokens_normed, params.w_k, params.b_k);
    const Matrix v = linear(tokens_normed, params.w_v, params.b_v);

    AttentionCache att_cache;
    const Matrix attended = multi_head_attention(q, k, v, params.heads, params.dropout, rng,
                                                 cache ? &att_cache : nullptr);
    Matrix s_tilde = add(s_prev, linear(attended, lp.w_out, lp.b_out));

    LayerNormCache norm_s_cache;
    const Matrix s_tilde_normed =
        layer_norm(s_tilde, lp.norm_s_gain, lp.norm_s_bias, cache ? &norm_s_cache : nullptr);
    const Matrix mlp_pre = linear(s_tilde_normed, lp.mlp_w1, lp.mlp_b1);
    Matrix hidden = gelu(mlp_pre);
    Matrix hidden_mask;
    if (rng != nullptr && params.dropout > 0.0) {
        hidden_mask = dropout_mask(hidden.rows(), hidden.cols(), params.dropout, *rng);
        hidden = hadamard(hidden, hidden_mask);
    }
    Matrix out = add(s_tilde, linear(hidden, lp.mlp_w2, lp.mlp_b2));

    if (cache) {
        cache->s_in = s_prev;
        cache->tokens_normed = tokens_normed;
        cache->norm_t = std::move(norm_t_cache);
        cache->attention = std::move(att_cache);
        cache->attended = attended;
        cache->s_tilde = s_tilde;
        cache->s_tilde_normed = s_tilde_normed;
        cache->norm_s = std::move(norm_s_cache);
        cache->mlp_pre = mlp_pre;
        cache->mlp_hidden = hidden;
        cache->hidden_mask = std::move(hidden_mask);
    }
    return out;
}

// Backward through one fusion layer. Accumulates parameter gradients and
// returns gradients w.r.t. the incoming state and the (un-normed) tokens.
inline void fusion_layer_backward(FusionParams& params, std::size_t layer_index,
                                  const FusionLayerCache& cache, const Matrix& d_out,
                                  Matrix& d_state, Matrix& d_tokens) {
    FusionLayerParams& lp = params.layers[layer_index];

    // out = s_tilde + dropout(gelu(|s_tilde| W1 + b1)) W2 + b2
    Matrix d_hidden = linear_backward(cache.mlp_hidden, lp.mlp_w2, lp.mlp_b2, d_out);
    if (!cache.hidden_mask.empty()) d_hidden = hadamard(d_hidden, cache.hidden_mask);
    const Matrix d_mlp_pre = gelu_backward(cache.mlp_pre, d_hidden);
    const Matrix d_s_tilde_normed =
        linear_backward(cache.s_tilde_normed, lp.mlp_w1, lp.mlp_b1, d_mlp_pre);
    Matrix d_s_tilde =
        layer_norm_backward(cache.norm_s, lp.norm_s_gain, lp.norm_s_bias, d_s_tilde_normed);
    add_in_place(d_s_tilde, d_out);

    // s_tilde = s_in + attended W_out + b_out
    const Matrix d_attended = linear_backward(cache.attended, lp.w_out, lp.b_out, d_s_tilde);
    Matrix dq, dk, dv;
    multi_head_attention_backward(cache.attention, d_attended, dq, dk, dv);

    d_state = linear_backward(cache.s_in, params.w_q, params.b_q, dq);
    add_in_place(d_state, d_s_tilde);
    Matrix d_tokens_normed = linear_backward(cache.tokens_normed, params.w_k, params.b_k, dk);
    add_in_place(d_tokens_normed, linear_backward(cache.tokens_normed, params.w_v, params.b_v, dv));
    d_tokens = layer_norm_backward(cache.norm_t, lp.norm_t_gain, lp.norm_t_bias, d_tokens_normed);
}

// Runs the full layer stack; the final state of each layer is the initial
// state of the next.
inline Matrix encode_streams(const Matrix& tokens, const Matrix& s0, FusionParams& params,
                             Rng* rng = nullptr, std::vector<FusionLayerCache>* caches = nullptr) {
    Matrix s = s0;
    if (caches) caches->assign(params.layer_count(), FusionLayerCache{});
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        s = fusion_layer(tokens, s, l, params, rng, caches ? &(*caches)[l] : nullptr);
    }
    return s;
}

// Backward through the whole stack; returns d(s0) and accumulates d(tokens).
inline void encode_streams_backward(FusionParams& params,
                                    const std::vector<FusionLayerCache>& caches,
                                    const Matrix& d_final, Matrix& d_s0, Matrix& d_tokens) {
    if (caches.empty()) throw ShapeError("encode_streams_backward: no cached layers");
    Matrix d_state = d_final;
    d_tokens = Matrix(caches[0].norm_t.xhat.rows(), params.embed_dim);
    for (std::size_t l = caches.size(); l-- > 0;) {
        Matrix d_state_next, d_tokens_layer;
        fusion_layer_backward(params, l, caches[l], d_state, d_state_next, d_tokens_layer);
        d_state = std::move(d_state_next);
        add_in_place(d_tokens, d_tokens_layer);
    }
    d_s0 = std::move(d_state);
}

// Trainable stream encoder: tokenizer plus fusion stack.
struct StreamEncoder {
    StreamTokenizer tokenizer;
    FusionParams fusion;

    Matrix encode(const StreamSeries& streams, const Matrix& s0, Rng* rng = nullptr,
                  StreamTokenizerCache* tok_cache = nullptr,
                  std::vector<FusionLayerCache>* caches = nullptr,
                  Matrix* tokens_out = nullptr) {
        Matrix tokens = tokenizer.tokenize(streams, tok_cache);
        if (tokens_out) *tokens_out = tokens;
        return encode_streams(tokens, s0, fusion, rng, caches);
    }

    void visit_params(const ParamFn& fn) {
        tokenizer.visit_params(fn);
        fusion.visit_params(fn);
    }
};

}  // namespace fusionbench
