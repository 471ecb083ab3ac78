#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fusionbench/hash.hpp"
#include "fusionbench/matrix.hpp"
#include "fusionbench/rng.hpp"

namespace fusionbench {

// A trainable array. Gradients accumulate into `grad` until zero_grad().
struct Param {
    Matrix value;
    Matrix grad;

    Param() = default;
    explicit Param(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
    Param(std::size_t rows, std::size_t cols, double fill = 0.0)
        : value(rows, cols, fill), grad(rows, cols) {}

    void zero_grad() { grad.fill(0.0); }
};

using ParamFn = std::function<void(const std::string&, Param&)>;

inline Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix out(rows, cols);
    for (double& v : out.raw()) v = rng.normal(0.0, stddev);
    return out;
}

inline Matrix xavier_normal(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return random_normal(fan_in, fan_out, stddev, rng);
}

// ---------------------------------------------------------------------------
// Linear: y = x W + b, with W (in x out) and b (1 x out).

inline Matrix linear(const Matrix& x, const Param& w, const Param& b) {
    return add_row_broadcast(matmul(x, w.value), b.value);
}

// Accumulates dW, db and returns dx.
inline Matrix linear_backward(const Matrix& x, Param& w, Param& b, const Matrix& dy) {
    add_in_place(w.grad, matmul_tn(x, dy));
    add_in_place(b.grad, col_sum(dy));
    return matmul_nt(dy, w.value);
}

// ---------------------------------------------------------------------------
// Layer norm over the feature dimension, learnable affine.

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Param& gain, const Param& bias,
                         LayerNormCache* cache = nullptr) {
    require_shape(gain.value, 1, x.cols(), "layer_norm gain");
    require_shape(bias.value, 1, x.cols(), "layer_norm bias");
    const std::size_t n = x.rows(), d = x.cols();
    Matrix xhat(n, d);
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < d; ++j) xhat(i, j) = (x(i, j) - mean) * inv;
    }
    Matrix out(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out(i, j) = gain.value(0, j) * xhat(i, j) + bias.value(0, j);
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    } else {
        (void)xhat;
    }
    return out;
}

inline Matrix layer_norm_backward(const LayerNormCache& cache, Param& gain, Param& bias,
                                  const Matrix& dy) {
    const Matrix& xhat = cache.xhat;
    const std::size_t n = xhat.rows(), d = xhat.cols();
    Matrix dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gain.value(0, j);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat(i, j);
        }
        const double inv = cache.inv_std[i];
        const double dd = static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gain.value(0, j);
            dx(i, j) = inv * (dxh - sum_dxhat / dd - xhat(i, j) * sum_dxhat_xhat / dd);
        }
        for (std::size_t j = 0; j < d; ++j) {
            gain.grad(0, j) += dy(i, j) * xhat(i, j);
            bias.grad(0, j) += dy(i, j);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// GELU (exact erf form).

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline Matrix gelu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.raw()) v = gelu(v);
    return out;
}

inline Matrix gelu_backward(const Matrix& pre, const Matrix& dy) {
    Matrix dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.raw()[i] *= gelu_grad(pre.raw()[i]);
    return dx;
}

// ---------------------------------------------------------------------------
// Row-wise softmax.

inline Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double peak = x(i, 0);
        for (std::size_t j = 1; j < x.cols(); ++j) peak = std::max(peak, x(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) = std::exp(x(i, j) - peak);
            z += out(i, j);
        }
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= z;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inverted dropout. The returned mask holds 0 or 1/(1-rate) so that eval and
// training activations have matching scale.

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    Matrix mask(rows, cols);
    const double keep = 1.0 - rate;
    for (double& v : mask.raw()) v = (rng.uniform() < rate) ? 0.0 : 1.0 / keep;
    return mask;
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention over already-projected q, k, v.

struct AttentionCache {
    Matrix q, k, v;
    std::size_t heads = 1;
    std::vector<Matrix> probs;      // per head, pre-dropout (nq x nk)
    std::vector<Matrix> drop_mask;  // per head; empty when dropout inactive
};

inline Matrix multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                   std::size_t heads, double dropout_rate = 0.0,
                                   Rng* rng = nullptr, AttentionCache* cache = nullptr) {
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0)
        throw ShapeError("attention: embed dim must be divisible by head count");
    if (k.cols() != d || v.cols() != d) throw ShapeError("attention: k/v width disagrees with q");
    if (k.rows() != v.rows()) throw ShapeError("attention: k/v row counts disagree");
    const std::size_t dh = d / heads;
    const std::size_t nq = q.rows(), nk = k.rows();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool dropping = dropout_rate > 0.0 && rng != nullptr;

    Matrix out(nq, d);
    std::vector<Matrix> all_probs;
    std::vector<Matrix> all_masks;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        Matrix scores(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += q(i, off + c) * k(j, off + c);
                scores(i, j) = acc * inv_scale;
            }
        }
        Matrix probs = softmax_rows(scores);
        Matrix applied = probs;
        if (dropping) {
            Matrix mask = dropout_mask(nq, nk, dropout_rate, *rng);
            applied = hadamard(probs, mask);
            all_masks.push_back(std::move(mask));
        }
        for (std::size_t i = 0; i < nq; ++i) {
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nk; ++j) acc += applied(i, j) * v(j, off + c);
                out(i, off + c) = acc;
            }
        }
        all_probs.push_back(std::move(probs));
    }
    if (cache) {
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->heads = heads;
        cache->probs = std::move(all_probs);
        cache->drop_mask = std::move(all_masks);
    }
    return out;
}

inline void multi_head_attention_backward(const AttentionCache& cache, const Matrix& d_out,
                                          Matrix& dq, Matrix& dk, Matrix& dv) {
    const std::size_t d = cache.q.cols();
    const std::size_t heads = cache.heads;
    const std::size_t dh = d / heads;
    const std::size_t nq = cache.q.rows(), nk = cache.k.rows();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool dropped = !cache.drop_mask.empty();

    dq = Matrix(nq, d);
    dk = Matrix(nk, d);
    dv = Matrix(nk, d);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        const Matrix& probs = cache.probs[h];

        // dV and d(applied probs)
        Matrix d_applied(nq, nk);
        for (std::size_t i = 0; i < nq; ++i)
            for (std::size_t j = 0; j < nk; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += d_out(i, off + c) * cache.v(j, off + c);
                d_applied(i, j) = acc;
            }
        for (std::size_t j = 0; j < nk; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < nq; ++i) {
                    const double a = dropped
                                         ? probs(i, j) * cache.drop_mask[h](i, j)
                                         : probs(i, j);
                    acc += a * d_out(i, off + c);
                }
                dv(j, off + c) = acc;
            }

        // through dropout, then softmax
        Matrix d_probs = dropped ? hadamard(d_applied, cache.drop_mask[h]) : d_applied;
        Matrix d_scores(nq, nk);
        for (std::size_t i = 0; i < nq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < nk; ++j) dot += d_probs(i, j) * probs(i, j);
            for (std::size_t j = 0; j < nk; ++j)
                d_scores(i, j) = probs(i, j) * (d_probs(i, j) - dot);
        }

        for (std::size_t i = 0; i < nq; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < nk; ++j) acc += d_scores(i, j) * cache.k(j, off + c);
                dq(i, off + c) = acc * inv_scale;
            }
        for (std::size_t j = 0; j < nk; ++j)
            for (std::size_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < nq; ++i) acc += d_scores(i, j) * cache.q(i, off + c);
                dk(j, off + c) = acc * inv_scale;
            }
    }
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
// name so optimizer state survives checkpointing.

struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> moments;

    template <typename VisitAll>
    void step(double lr, double wd, VisitAll&& visit_all) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        visit_all([&](const std::string& name, Param& p) {
            auto& [m, v] = moments[name];
            if (m.size() != p.value.size()) {
                m = Matrix(p.value.rows(), p.value.cols());
                v = Matrix(p.value.rows(), p.value.cols());
            }
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad.raw()[i];
                double& mi = m.raw()[i];
                double& vi = v.raw()[i];
                mi = beta1 * mi + (1.0 - beta1) * g;
                vi = beta2 * vi + (1.0 - beta2) * g * g;
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                double& w = p.value.raw()[i];
                w -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w);
            }
        });
    }
};

// Hashes every visited parameter value; used by the frozen/fluid/hot checks.
template <typename VisitAll>
std::uint64_t hash_params(VisitAll&& visit_all) {
    Fnv1a h;
    visit_all([&](const std::string& name, Param& p) {
        h.update(name);
        h.update(p.value);
    });
    return h.digest();
}

template <typename VisitAll>
void zero_grads(VisitAll&& visit_all) {
    visit_all([](const std::string&, Param& p) { p.zero_grad(); });
}

template <typename VisitAll>
void scale_grads(VisitAll&& visit_all, double factor) {
    visit_all([factor](const std::string&, Param& p) { scale_in_place(p.grad, factor); });
}

}  // namespace fusionbench
