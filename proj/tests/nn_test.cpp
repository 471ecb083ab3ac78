#include "fusionbench/nn.hpp"

#include <gtest/gtest.h>

#include "fusionbench/matrix.hpp"
#include "fusionbench/rng.hpp"
#include "test_util.hpp"

using namespace fusionbench;

TEST(Linear, GradientsMatchFiniteDifferences) {
    Rng rng(11);
    Matrix x = fbtest::random_matrix(3, 4, rng);
    Param w(xavier_normal(4, 5, rng));
    Param b(fbtest::random_matrix(1, 5, rng));
    const Matrix weights = fbtest::random_matrix(3, 5, rng);

    auto loss = [&]() { return fbtest::weighted_sum(linear(x, w, b), weights); };
    w.zero_grad();
    b.zero_grad();
    const Matrix dx = linear_backward(x, w, b, weights);

    auto visit = [&](const ParamFn& fn) {
        fn("w", w);
        fn("b", b);
    };
    EXPECT_LT(fbtest::check_param_gradients(visit, loss).worst, 1e-6);
    EXPECT_LT(fbtest::check_input_gradient(x, dx, loss).worst, 1e-6);
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
    Rng rng(13);
    Matrix x = fbtest::random_matrix(3, 6, rng);
    Param gain(fbtest::random_matrix(1, 6, rng, 0.5, 1.5));
    Param bias(fbtest::random_matrix(1, 6, rng, -0.2, 0.2));
    const Matrix weights = fbtest::random_matrix(3, 6, rng);

    LayerNormCache cache;
    auto loss = [&]() { return fbtest::weighted_sum(layer_norm(x, gain, bias), weights); };
    gain.zero_grad();
    bias.zero_grad();
    layer_norm(x, gain, bias, &cache);
    const Matrix dx = layer_norm_backward(cache, gain, bias, weights);

    auto visit = [&](const ParamFn& fn) {
        fn("gain", gain);
        fn("bias", bias);
    };
    EXPECT_LT(fbtest::check_param_gradients(visit, loss).worst, 1e-5);
    EXPECT_LT(fbtest::check_input_gradient(x, dx, loss).worst, 1e-5);
}

TEST(LayerNorm, NormalizesRows) {
    Rng rng(5);
    Matrix x = fbtest::random_matrix(4, 8, rng, -3.0, 3.0);
    Param gain(1, 8, 1.0);
    Param bias(1, 8, 0.0);
    const Matrix y = layer_norm(x, gain, bias);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) mean += y(i, j);
        EXPECT_NEAR(mean / 8.0, 0.0, 1e-12);
    }
}

TEST(Gelu, DerivativeMatchesFiniteDifferences) {
    for (double x : {-3.0, -1.0, -0.1, 0.0, 0.2, 1.5, 4.0}) {
        const double h = 1e-6;
        const double numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
        EXPECT_NEAR(gelu_grad(x), numeric, 1e-8);
    }
}

TEST(Softmax, RowsSumToOne) {
    Rng rng(17);
    const Matrix x = fbtest::random_matrix(5, 9, rng, -10.0, 10.0);
    const Matrix p = softmax_rows(x);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            sum += p(i, j);
            EXPECT_GE(p(i, j), 0.0);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Attention, GradientsMatchFiniteDifferences) {
    Rng rng(19);
    Matrix q = fbtest::random_matrix(3, 4, rng);
    Matrix k = fbtest::random_matrix(5, 4, rng);
    Matrix v = fbtest::random_matrix(5, 4, rng);
    const Matrix weights = fbtest::random_matrix(3, 4, rng);

    auto loss = [&]() {
        return fbtest::weighted_sum(multi_head_attention(q, k, v, 2), weights);
    };
    AttentionCache cache;
    multi_head_attention(q, k, v, 2, 0.0, nullptr, &cache);
    Matrix dq, dk, dv;
    multi_head_attention_backward(cache, weights, dq, dk, dv);

    EXPECT_LT(fbtest::check_input_gradient(q, dq, loss).worst, 1e-5);
    EXPECT_LT(fbtest::check_input_gradient(k, dk, loss).worst, 1e-5);
    EXPECT_LT(fbtest::check_input_gradient(v, dv, loss).worst, 1e-5);
}

TEST(Attention, HeadDivisibilityEnforced) {
    Matrix q(2, 6), k(3, 6), v(3, 6);
    EXPECT_THROW(multi_head_attention(q, k, v, 4), ShapeError);
}

TEST(Attention, SingleQuerySingleKeyPassesValueThrough) {
    // With one key the softmax weight is 1 regardless of scores.
    Matrix q(1, 2), k(1, 2), v(1, 2);
    q(0, 0) = 0.3;
    q(0, 1) = -2.0;
    k(0, 0) = 1.0;
    k(0, 1) = 0.5;
    v(0, 0) = 4.25;
    v(0, 1) = -1.5;
    const Matrix out = multi_head_attention(q, k, v, 1);
    EXPECT_DOUBLE_EQ(out(0, 0), 4.25);
    EXPECT_DOUBLE_EQ(out(0, 1), -1.5);
}

TEST(Dropout, MaskMatchesRateRoughly) {
    Rng rng(23);
    const Matrix mask = dropout_mask(100, 100, 0.2, rng);
    std::size_t zeros = 0;
    for (double v : mask.raw()) {
        if (v == 0.0)
            ++zeros;
        else
            EXPECT_DOUBLE_EQ(v, 1.0 / 0.8);
    }
    const double frac = static_cast<double>(zeros) / 10000.0;
    EXPECT_NEAR(frac, 0.2, 0.02);
}

TEST(AdamW, MinimizesQuadratic) {
    // One-parameter bowl: f(w) = (w - 3)^2.
    Param w(1, 1, 0.0);
    AdamW opt;
    for (int i = 0; i < 500; ++i) {
        w.zero_grad();
        w.grad(0, 0) = 2.0 * (w.value(0, 0) - 3.0);
        opt.step(0.05, 0.0, [&](const ParamFn& fn) { fn("w", w); });
    }
    EXPECT_NEAR(w.value(0, 0), 3.0, 1e-2);
}

TEST(AdamW, DecoupledDecayShrinksWeightsWithoutGradient) {
    Param w(1, 1, 1.0);
    AdamW opt;
    w.zero_grad();
    opt.step(0.1, 0.5, [&](const ParamFn& fn) { fn("w", w); });
    // grad = 0 so the only change is -lr * wd * w.
    EXPECT_DOUBLE_EQ(w.value(0, 0), 1.0 - 0.1 * 0.5);
}

TEST(ParamHash, DetectsChanges) {
    Param a(2, 2, 1.0), b(2, 2, 2.0);
    auto visit = [&](const ParamFn& fn) {
        fn("a", a);
        fn("b", b);
    };
    const auto h0 = hash_params(visit);
    EXPECT_EQ(h0, hash_params(visit));
    b.value(1, 1) += 1e-12;
    EXPECT_NE(h0, hash_params(visit));
}
