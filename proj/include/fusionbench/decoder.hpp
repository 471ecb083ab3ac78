#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "fusionbench/errors.hpp"
#include "fusionbench/matrix.hpp"
#include "fusionbench/nn.hpp"
#include "fusionbench/rng.hpp"

namespace fusionbench {

// Attentive classifier head: a single learned query cross-attends over the
// state tokens, followed by a residual GELU perceptron and a linear map to
// class logits.
struct AttentiveClassifierParams {
    std::size_t embed_dim = 32;
    std::size_t n_classes = 2;
    std::size_t heads = 4;
    Param query;
    Param w_q, b_q, w_k, b_k, w_v, b_v, w_out, b_out;
    Param norm_s_gain, norm_s_bias;   // on state tokens for k/v
    Param norm_u_gain, norm_u_bias;   // on the attended query before the MLP
    Param mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    Param w_cls, b_cls;

    void visit_params(const ParamFn& fn) {
        fn("decoder.query", query);
        fn("decoder.w_q", w_q);
        fn("decoder.b_q", b_q);
        fn("decoder.w_k", w_k);
        fn("decoder.b_k", b_k);
        fn("decoder.w_v", w_v);
        fn("decoder.b_v", b_v);
        fn("decoder.w_out", w_out);
        fn("decoder.b_out", b_out);
        fn("decoder.norm_s_gain", norm_s_gain);
        fn("decoder.norm_s_bias", norm_s_bias);
        fn("decoder.norm_u_gain", norm_u_gain);
        fn("decoder.norm_u_bias", norm_u_bias);
        fn("decoder.mlp_w1", mlp_w1);
        fn("decoder.mlp_b1", mlp_b1);
        fn("decoder.mlp_w2", mlp_w2);
        fn("decoder.mlp_b2", mlp_b2);
        fn("decoder.w_cls", w_cls);
        fn("decoder.b_cls", b_cls);
    }
};

inline AttentiveClassifierParams init_classifier(std::size_t embed_dim, std::size_t n_classes,
                                                 std::size_t heads, std::uint64_t seed,
                                                 std::size_t mlp_hidden = 0) {
    if (n_classes < 2) throw ConfigError("classifier: need at least two classes");
    if (heads == 0 || embed_dim % heads != 0)
        throw ShapeError("classifier: embed dim must be divisible by head count");
    if (mlp_hidden == 0) mlp_hidden = 4 * embed_dim;
    Rng rng(seed);
    AttentiveClassifierParams p;
    p.embed_dim = embed_dim;
    p.n_classes = n_classes;
    p.heads = heads;
    p.query = Param(random_normal(1, embed_dim, 0.02, rng));
    p.w_q = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_q = Param(1, embed_dim);
    p.w_k = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_k = Param(1, embed_dim);
    p.w_v = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_v = Param(1, embed_dim);
    p.w_out = Param(xavier_normal(embed_dim, embed_dim, rng));
    p.b_out = Param(1, embed_dim);
    p.norm_s_gain = Param(1, embed_dim, 1.0);
    p.norm_s_bias = Param(1, embed_dim);
    p.norm_u_gain = Param(1, embed_dim, 1.0);
    p.norm_u_bias = Param(1, embed_dim);
    p.mlp_w1 = Param(xavier_normal(embed_dim, mlp_hidden, rng));
    p.mlp_b1 = Param(1, mlp_hidden);
    p.mlp_w2 = Param(xavier_normal(mlp_hidden, embed_dim, rng));
    p.mlp_b2 = Param(1, embed_dim);
    p.w_cls = Param(xavier_normal(embed_dim, n_classes, rng));
    p.b_cls = Param(1, n_classes);
    return p;
}

struct ClassifierCache {
    Matrix state_normed;
    LayerNormCache norm_s;
    AttentionCache attention;
    Matrix attended;
    Matrix u;
    Matrix u_normed;
    LayerNormCache norm_u;
    Matrix mlp_pre;
    Matrix mlp_hidden;
    Matrix z;
};

// Maps an (n_s x d) state to (1 x n_classes) logits.
inline Matrix classify(const Matrix& state, AttentiveClassifierParams& params,
                       ClassifierCache* cache = nullptr) {
    if (state.cols() != params.embed_dim)
        throw ShapeError("classify: state width disagrees with decoder params");

    LayerNormCache norm_s_cache;
    const Matrix state_normed = layer_norm(state, params.norm_s_gain, params.norm_s_bias,
                                           cache ? &norm_s_cache : nullptr);
    const Matrix q = linear(params.query.value, params.w_q, params.b_q);
    const Matrix k = linear(state_normed, params.w_k, params.b_k);
    const Matrix v = linear(state_normed, params.w_v, params.b_v);
    AttentionCache att_cache;
    const Matrix attended = multi_head_attention(q, k, v, params.heads, 0.0, nullptr,
                                                 cache ? &att_cache : nullptr);
    const Matrix u = add(params.query.value, linear(attended, params.w_out, params.b_out));
    LayerNormCache norm_u_cache;
    const Matrix u_normed =
        layer_norm(u, params.norm_u_gain, params.norm_u_bias, cache ? &norm_u_cache : nullptr);
    const Matrix mlp_pre = linear(u_normed, params.mlp_w1, params.mlp_b1);
    const Matrix hidden = gelu(mlp_pre);
    const Matrix z = add(u, linear(hidden, params.mlp_w2, params.mlp_b2));
    Matrix logits = linear(z, params.w_cls, params.b_cls);

    if (cache) {
        cache->state_normed = state_normed;
        cache->norm_s = std::move(norm_s_cache);
        cache->attention = std::move(att_cache);
        cache->attended = attended;
        cache->u = u;
        cache->u_normed = u_normed;
        cache->norm_u = std::move(norm_u_cache);
        cache->mlp_pre = mlp_pre;
        cache->mlp_hidden = hidden;
        cache->z = z;
    }
    return logits;
}

// Accumulates decoder parameter gradients and returns dL/d(state); the state
// gradient is what step 3 feeds into the stream encoder.
inline Matrix classify_backward(AttentiveClassifierParams& params, const ClassifierCache& cache,
                                const Matrix& d_logits) {
    Matrix dz = linear_backward(cache.z, params.w_cls, params.b_cls, d_logits);

    Matrix du = dz;
    const Matrix d_hidden = linear_backward(cache.mlp_hidden, params.mlp_w2, params.mlp_b2, dz);
    const Matrix d_mlp_pre = gelu_backward(cache.mlp_pre, d_hidden);
    const Matrix d_u_normed = linear_backward(cache.u_normed, params.mlp_w1, params.mlp_b1, d_mlp_pre);
    add_in_place(du, layer_norm_backward(cache.norm_u, params.norm_u_gain, params.norm_u_bias,
                                         d_u_normed));

    const Matrix d_attended = linear_backward(cache.attended, params.w_out, params.b_out, du);
    Matrix dq, dk, dv;
    multi_head_attention_backward(cache.attention, d_attended, dq, dk, dv);

    Matrix d_query = du;
    add_in_place(d_query, linear_backward(params.query.value, params.w_q, params.b_q, dq));
    add_in_place(params.query.grad, d_query);

    Matrix d_state_normed = linear_backward(cache.state_normed, params.w_k, params.b_k, dk);
    add_in_place(d_state_normed,
                 linear_backward(cache.state_normed, params.w_v, params.b_v, dv));
    return layer_norm_backward(cache.norm_s, params.norm_s_gain, params.norm_s_bias,
                               d_state_normed);
}

// ---------------------------------------------------------------------------
// Cross-entropy over (1 x n_classes) logits.

inline double cross_entropy(const Matrix& logits, std::size_t label) {
    if (logits.rows() != 1) throw ShapeError("cross_entropy: logits must be a single row");
    if (label >= logits.cols())
        throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(logits.cols()) + " classes");
    double peak = logits(0, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) peak = std::max(peak, logits(0, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(0, j) - peak);
    return peak + std::log(z) - logits(0, label);
}

inline Matrix cross_entropy_backward(const Matrix& logits, std::size_t label) {
    Matrix d = softmax_rows(logits);
    d(0, label) -= 1.0;
    return d;
}

// Lowest class index wins ties, so evaluation is deterministic.
inline std::size_t argmax_class(const Matrix& logits) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits(0, j) > logits(0, best)) best = j;
    return best;
}

}  // namespace fusionbench
