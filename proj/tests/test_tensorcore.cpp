#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "ssr/adam.hpp"
#include "ssr/errors.hpp"
#include "ssr/layers.hpp"

using namespace ssr;
using namespace ssr::tensor;
using ssr::oracle::GradCase;

namespace {

const LayerKind kAllKinds[] = {LayerKind::conv1d,       LayerKind::tconv1d, LayerKind::conv2d,
                               LayerKind::relu,         LayerKind::residual_add,
                               LayerKind::concat,       LayerKind::elementwise_product};

// Analytic-vs-central-difference over every input and parameter entry.
double gradcheck_case(const GradCase& c, std::mt19937_64& rng) {
    const Tensor out = oracle::run(c);
    const Tensor r = oracle::random_tensor(out.shape(), rng);
    std::vector<const Tensor*> in;
    for (const auto& t : c.inputs) in.push_back(&t);
    auto fwd = forward(c.layer, in, c.layer.has_params() ? &c.params : nullptr);
    auto bwd = backward(c.layer, r, fwd.cache);
    constexpr float eps = 1e-3f;
    double worst = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        auto num = oracle::numeric_grad(c, [i](GradCase& g) -> Tensor& { return g.inputs[i]; }, r, eps);
        worst = std::max(worst, oracle::max_rel_error(bwd.grad_inputs[i], num));
    }
    if (c.layer.has_params()) {
        auto nw = oracle::numeric_grad(c, [](GradCase& g) -> Tensor& { return g.params.weight; }, r, eps);
        worst = std::max(worst, oracle::max_rel_error(bwd.grad_params.weight, nw));
        if (c.layer.has_bias) {
            auto nb = oracle::numeric_grad(c, [](GradCase& g) -> Tensor& { return g.params.bias; }, r, eps);
            worst = std::max(worst, oracle::max_rel_error(bwd.grad_params.bias, nb));
        }
    }
    return worst;
}

}  // namespace

TEST(GradCheck, EveryLayerKindMatchesFiniteDifferences) {
    for (LayerKind kind : kAllKinds) {
        for (int seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(1000 + seed * 31 + static_cast<int>(kind));
            const GradCase c = oracle::random_case(kind, rng);
            const double err = gradcheck_case(c, rng);
            EXPECT_LT(err, 1e-3) << to_string(kind) << " seed " << seed;
        }
    }
}

TEST(GradCheck, ShapeRoundTripPreservesInputShape) {
    for (LayerKind kind : kAllKinds) {
        std::mt19937_64 rng(7 + static_cast<int>(kind));
        for (int rep = 0; rep < 10; ++rep) {
            const GradCase c = oracle::random_case(kind, rng);
            std::vector<const Tensor*> in;
            for (const auto& t : c.inputs) in.push_back(&t);
            auto fwd = forward(c.layer, in, c.layer.has_params() ? &c.params : nullptr);
            auto bwd = backward(c.layer, Tensor(fwd.output.shape(), 1.0f), fwd.cache);
            ASSERT_EQ(bwd.grad_inputs.size(), c.inputs.size());
            for (std::size_t i = 0; i < c.inputs.size(); ++i) {
                EXPECT_EQ(bwd.grad_inputs[i].shape(), c.inputs[i].shape()) << to_string(kind);
            }
        }
    }
}

TEST(GradCheck, ZeroGradOutGivesZeroGradients) {
    for (LayerKind kind : kAllKinds) {
        std::mt19937_64 rng(99);
        const GradCase c = oracle::random_case(kind, rng);
        std::vector<const Tensor*> in;
        for (const auto& t : c.inputs) in.push_back(&t);
        auto fwd = forward(c.layer, in, c.layer.has_params() ? &c.params : nullptr);
        auto bwd = backward(c.layer, Tensor(fwd.output.shape()), fwd.cache);
        for (const auto& g : bwd.grad_inputs) {
            for (float v : g.values()) EXPECT_EQ(v, 0.0f);
        }
        for (float v : bwd.grad_params.weight.values()) EXPECT_EQ(v, 0.0f);
        for (float v : bwd.grad_params.bias.values()) EXPECT_EQ(v, 0.0f);
    }
}

TEST(Layers, TransposedConvLengthFormula) {
    const auto l = LayerSpec::tconv1d(1, 1, 3, 2, 0);
    ParamPair p{Tensor(l.weight_shape(), 1.0f), Tensor(l.bias_shape())};
    auto r = forward(l, Tensor({1, 1, 3}, 1.0f), p);
    EXPECT_EQ(r.output.shape(), (Shape{1, 1, 7}));

    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const int L = 1 + static_cast<int>(rng() % 12), k = 1 + static_cast<int>(rng() % 5);
        const int s = 1 + static_cast<int>(rng() % 4), pad = static_cast<int>(rng() % 3);
        const int expected = s * (L - 1) + k - 2 * pad;
        const auto spec = LayerSpec::tconv1d(2, 3, k, s, pad);
        if (expected < 1) {
            EXPECT_THROW(spec.output_length(static_cast<std::size_t>(L)), DataError);
            continue;
        }
        ParamPair pp{Tensor(spec.weight_shape(), 0.5f), Tensor(spec.bias_shape())};
        auto out = forward(spec, Tensor({1, 2, static_cast<std::size_t>(L)}, 1.0f), pp);
        EXPECT_EQ(out.output.dim(2), static_cast<std::size_t>(expected));
    }
}

TEST(Layers, ReluForwardAndBackward) {
    auto r = forward(LayerSpec::relu(), Tensor({3}, {-1.0f, 0.0f, 2.0f}));
    EXPECT_EQ(r.output, Tensor({3}, {0.0f, 0.0f, 2.0f}));

    auto r2 = forward(LayerSpec::relu(), Tensor({2}, {-1.0f, 2.0f}));
    auto g = backward(LayerSpec::relu(), Tensor({2}, {1.0f, 1.0f}), r2.cache);
    EXPECT_EQ(g.grad_inputs[0], Tensor({2}, {0.0f, 1.0f}));
}

TEST(Layers, IdentityKernelConvIsIdentity) {
    const auto l = LayerSpec::conv1d(3, 3, 1, 0, 1, false);
    Tensor w(l.weight_shape());
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0f;
    std::mt19937_64 rng(5);
    const Tensor x = oracle::random_tensor({2, 3, 6}, rng);
    auto r = forward(l, x, ParamPair{w, Tensor()});
    EXPECT_EQ(r.output, x);
}

TEST(Layers, ShapeMismatchNamesTheAxis) {
    const auto l = LayerSpec::conv1d(3, 4, 3, 1);
    ParamPair p{Tensor(l.weight_shape()), Tensor(l.bias_shape())};
    try {
        forward(l, Tensor({1, 5, 8}), p);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(forward(LayerSpec::residual_add(), Tensor({1, 2, 3}), Tensor({1, 2, 4})), DataError);
    EXPECT_THROW(forward(LayerSpec::concat(), Tensor({1, 2, 3}), Tensor({2, 2, 3})), DataError);
    EXPECT_THROW(forward(LayerSpec::elementwise_product(), Tensor({1, 3, 4}), Tensor({1, 2, 4})),
                 DataError);
}

TEST(Layers, StaleOrMismatchedCacheRejected) {
    const auto l = LayerSpec::conv1d(1, 2, 3, 1);
    ParamPair p{Tensor(l.weight_shape(), 0.1f), Tensor(l.bias_shape())};
    auto r = forward(l, Tensor({1, 1, 5}, 1.0f), p);
    EXPECT_THROW(backward(l, r.output, Cache{}), DataError);
    EXPECT_THROW(backward(LayerSpec::conv1d(1, 2, 3, 0), r.output, r.cache), DataError);
    EXPECT_THROW(backward(l, Tensor({1, 2, 4}), r.cache), DataError);
    EXPECT_NO_THROW(backward(l, r.output, r.cache));
}

TEST(Layers, ForwardBackwardDeterministic) {
    std::mt19937_64 a(11), b(11);
    const GradCase ca = oracle::random_case(LayerKind::conv2d, a);
    const GradCase cb = oracle::random_case(LayerKind::conv2d, b);
    auto fa = forward(ca.layer, ca.inputs[0], ca.params);
    auto fb = forward(cb.layer, cb.inputs[0], cb.params);
    EXPECT_EQ(fa.output, fb.output);
    auto ga = backward(ca.layer, fa.output, fa.cache);
    auto gb = backward(cb.layer, fb.output, fb.cache);
    EXPECT_EQ(ga.grad_inputs[0], gb.grad_inputs[0]);
    EXPECT_EQ(ga.grad_params.weight, gb.grad_params.weight);
}

TEST(L2Loss, Cases) {
    const Tensor a({4}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto same = l2_loss(a, a);
    EXPECT_EQ(same.loss, 0.0);
    for (float g : same.grad.values()) EXPECT_EQ(g, 0.0f);

    const Tensor b({4}, {3.0f, 4.0f, 5.0f, 6.0f});
    auto r = l2_loss(b, a);
    EXPECT_DOUBLE_EQ(r.loss, 4.0);
    for (float g : r.grad.values()) EXPECT_FLOAT_EQ(g, 1.0f);
    EXPECT_EQ(l2_loss(a, b).loss, l2_loss(b, a).loss);
    EXPECT_THROW(l2_loss(a, Tensor({3})), DataError);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    std::vector<Parameter> params{{"w", Tensor({3}, {1.0f, -2.0f, 3.0f}), false}};
    const auto before = params;
    AdamState state;
    std::vector<Tensor> grads{Tensor({3})};
    ASSERT_TRUE(adam_step(params, grads, state).applied);
    EXPECT_EQ(params, before);
    EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
    std::vector<Parameter> params{{"w", Tensor({4}, {0.0f, 1.0f, -1.0f, 5.0f}), false}};
    const auto before = params;
    AdamState state;
    state.lr = 1e-3f;
    std::vector<Tensor> grads{Tensor({4}, {0.5f, -2.0f, 3.0f, -0.1f})};
    adam_step(params, grads, state);
    for (std::size_t i = 0; i < 4; ++i) {
        const float g = grads[0][i];
        const float moved = params[0].value[i] - before[0].value[i];
        // |update| = lr * |g| / (|g| + eps), up to float rounding of the parameter
        EXPECT_NEAR(moved, -1e-3f * (g > 0 ? 1.0f : -1.0f), 5e-7);
    }
}

TEST(Adam, TwoStepsFollowRecurrences) {
    std::vector<Parameter> params{{"w", Tensor({1}, {1.0f}), false}};
    AdamState state;
    std::vector<Tensor> grads{Tensor({1}, {0.5f})};
    adam_step(params, grads, state);
    adam_step(params, grads, state);
    EXPECT_EQ(state.step, 2);
    // m2 = 0.9 * 0.05 + 0.1 * 0.5; v2 = 0.999 * 0.00025 + 0.001 * 0.25
    EXPECT_NEAR(state.m[0][0], 0.095, 1e-7);
    EXPECT_NEAR(state.v[0][0], 0.00049975, 1e-8);
    // both bias-corrected steps equal lr * 1 / (1 + eps/|g|) when g is constant
    EXPECT_NEAR(params[0].value[0], 1.0 - 2e-3, 1e-6);
}

TEST(Adam, FrozenAndNonFinite) {
    std::vector<Parameter> params{{"a", Tensor({2}, 1.0f), true}, {"b", Tensor({2}, 1.0f), false}};
    AdamState state;
    std::vector<Tensor> grads{Tensor({2}, 1.0f), Tensor({2}, 1.0f)};
    adam_step(params, grads, state);
    EXPECT_EQ(params[0].value, Tensor({2}, 1.0f));
    EXPECT_NE(params[1].value, Tensor({2}, 1.0f));

    const auto snapshot = params;
    const auto state_before = state;
    grads[1][0] = std::nanf("");
    const auto outcome = adam_step(params, grads, state);
    EXPECT_FALSE(outcome.applied);
    EXPECT_FALSE(outcome.incident.empty());
    EXPECT_EQ(params, snapshot);
    EXPECT_EQ(state.step, state_before.step);
    EXPECT_EQ(state.m, state_before.m);

    std::vector<Tensor> bad{Tensor({3}), Tensor({2})};
    EXPECT_THROW(adam_step(params, bad, state), DataError);
}
