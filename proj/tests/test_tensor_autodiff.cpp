#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "advgen/gradcheck.hpp"
#include "advgen/graph.hpp"
#include "advgen/rng.hpp"
#include "advgen/tensor.hpp"

using namespace advgen;

namespace {

void expect_tensor_near(const Tensor& actual, const std::vector<double>& expected,
                        double tol = 1e-12) {
    ASSERT_EQ(actual.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR(actual[i], expected[i], tol) << "component " << i;
    }
}

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Test-local reference convolution, written independently of the library.
Tensor conv_reference(const Tensor& in, const Tensor& k, bool reflect) {
    const std::size_t h = in.shape()[0], w = in.shape()[1];
    const std::size_t kh = k.shape()[0], kw = k.shape()[1];
    const int rh = int(kh) / 2, rw = int(kw) / 2;
    Tensor out(Shape{h, w}, 0.0);
    for (int y = 0; y < int(h); ++y) {
        for (int x = 0; x < int(w); ++x) {
            double acc = 0.0;
            for (int u = 0; u < int(kh); ++u) {
                for (int v = 0; v < int(kw); ++v) {
                    int yy = y + u - rh;
                    int xx = x + v - rw;
                    if (reflect) {
                        if (yy < 0) yy = -yy;
                        if (yy >= int(h)) yy = 2 * int(h) - 2 - yy;
                        if (xx < 0) xx = -xx;
                        if (xx >= int(w)) xx = 2 * int(w) - 2 - xx;
                    } else if (yy < 0 || yy >= int(h) || xx < 0 || xx >= int(w)) {
                        continue;
                    }
                    acc += k.at(std::size_t(u), std::size_t(v)) *
                           in.at(std::size_t(yy), std::size_t(xx));
                }
            }
            out.at(std::size_t(y), std::size_t(x)) = acc;
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics and plain ops
// ---------------------------------------------------------------------------

TEST(Tensor, ShapeDataConsistency) {
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1.0}), DimensionError);
    EXPECT_THROW(Tensor(Shape{0}), DimensionError);
    Tensor t(Shape{2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
}

TEST(Tensor, ElementwiseExamples) {
    Tensor a = Tensor::from_vector({1.0, 2.0});
    Tensor b = Tensor::from_vector({3.0, 4.0});
    expect_tensor_near(add(a, b), {4.0, 6.0});
    expect_tensor_near(sub(a, a), {0.0, 0.0});
    expect_tensor_near(mul(Tensor::scalar(2.0), Tensor::from_vector({0.5, 1.0})), {1.0, 2.0});
    EXPECT_THROW(add(a, Tensor::from_vector({1.0, 2.0, 3.0})), DimensionError);
}

TEST(Tensor, SignExamples) {
    expect_tensor_near(sign(Tensor::from_vector({-0.3, 0.0, 2.0})), {-1.0, 0.0, 1.0});
    Rng rng(3);
    Tensor t = random_tensor(rng, Shape{17});
    EXPECT_EQ(sign(sign(t)), sign(t));
}

TEST(Tensor, ClipExamples) {
    expect_tensor_near(clip(Tensor::from_vector({0.12}), -0.09, 0.09), {0.09});
    expect_tensor_near(clip(Tensor::from_vector({-0.2, 0.05}), -0.09, 0.09), {-0.09, 0.05});
    Tensor t = Tensor::from_vector({-5.0, 7.0});
    EXPECT_EQ(clip(t, -1e300, 1e300), t);
    EXPECT_THROW(clip(t, 1.0, -1.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Graph ops: forward values
// ---------------------------------------------------------------------------

TEST(Graph, ElementwiseForward) {
    Graph g;
    Var a = g.leaf(Tensor::from_vector({1.0, 2.0}));
    Var b = g.constant(Tensor::from_vector({3.0, 4.0}));
    expect_tensor_near(add(a, b).value(), {4.0, 6.0});
    expect_tensor_near(sub(a, a).value(), {0.0, 0.0});
    Var s = g.constant_scalar(2.0);
    expect_tensor_near(mul(a, s).value(), {2.0, 4.0});
    expect_tensor_near(div(a, s).value(), {0.5, 1.0});
}

TEST(Graph, ConvIdentityKernel) {
    Rng rng(11);
    Tensor img = random_tensor(rng, Shape{5, 7});
    Tensor identity(Shape{3, 3}, 0.0);
    identity.at(1, 1) = 1.0;
    for (Padding pad : {Padding::kZero, Padding::kReflect}) {
        Graph g;
        Var out = conv2d(g.leaf(img), g.constant(identity), pad);
        EXPECT_EQ(out.value(), img);
    }
}

TEST(Graph, ConvMeanFilterOnConstant) {
    Tensor img(Shape{6, 6}, 0.37);
    Tensor box(Shape{3, 3}, 1.0 / 9.0);
    Graph g;
    Var out = conv2d(g.leaf(img), g.constant(box), Padding::kReflect);
    for (std::size_t i = 0; i < out.value().size(); ++i) {
        EXPECT_NEAR(out.value()[i], 0.37, 1e-15);
    }
}

TEST(Graph, ConvMatchesBruteForceOracle) {
    Rng rng(29);
    Tensor img = random_tensor(rng, Shape{5, 5});
    Tensor kernel = random_tensor(rng, Shape{3, 3});
    for (bool reflect : {false, true}) {
        Graph g;
        Var out = conv2d(g.leaf(img), g.constant(kernel),
                         reflect ? Padding::kReflect : Padding::kZero);
        Tensor expected = conv_reference(img, kernel, reflect);
        for (std::size_t i = 0; i < expected.size(); ++i) {
            EXPECT_NEAR(out.value()[i], expected[i], 1e-14);
        }
    }
}

TEST(Graph, ConvErrors) {
    Graph g;
    Var img = g.leaf(Tensor(Shape{5, 5}, 0.1));
    EXPECT_THROW(conv2d(img, g.constant(Tensor(Shape{2, 2}, 1.0)), Padding::kZero), ConfigError);
    EXPECT_THROW(conv2d(img, g.constant(Tensor(Shape{7, 7}, 1.0)), Padding::kZero),
                 DimensionError);
    Var chan = g.leaf(Tensor(Shape{2, 5, 5}, 0.1));
    EXPECT_THROW(conv2d(chan, g.constant(Tensor(Shape{3, 3, 3, 3}, 0.1)), Padding::kZero),
                 DimensionError);
}

TEST(Graph, ReduceExamples) {
    Graph g;
    EXPECT_DOUBLE_EQ(reduce_variance(g.leaf(Tensor(Shape{4}, 0.5))).value().value(), 0.0);
    EXPECT_DOUBLE_EQ(reduce_variance(g.leaf(Tensor::from_vector({0.0, 1.0}))).value().value(),
                     0.25);
    EXPECT_DOUBLE_EQ(reduce_sum_abs(g.leaf(Tensor::from_vector({-1.0, 2.0, -3.0}))).value().value(),
                     6.0);
    EXPECT_DOUBLE_EQ(reduce_mean(g.leaf(Tensor::from_vector({1.0, 3.0}))).value().value(), 2.0);
}

TEST(Graph, VectorOpExamples) {
    Graph g;
    Var e1 = g.leaf(Tensor::from_vector({1.0, 0.0}));
    Var e2 = g.constant(Tensor::from_vector({0.0, 1.0}));
    EXPECT_DOUBLE_EQ(cosine_similarity(e1, e2).value().value(), 0.0);

    Var v = g.leaf(Tensor::from_vector({1.0, 2.0}));
    Var w = g.constant(Tensor::from_vector({2.0, 4.0}));
    EXPECT_DOUBLE_EQ(cosine_similarity(v, w).value().value(), 1.0);

    Var n = g.constant(Tensor::from_vector({-1.0, 0.0}));
    EXPECT_DOUBLE_EQ(cosine_similarity(e1, n).value().value(), -1.0);

    Var zero = g.constant(Tensor::from_vector({0.0, 0.0}));
    EXPECT_THROW(cosine_similarity(e1, zero), DegenerateDirectionError);
    EXPECT_THROW(dot(e1, g.constant(Tensor::from_vector({1.0, 2.0, 3.0}))), DimensionError);
}

TEST(Graph, CosineStaysInUnitIntervalBeforeClamp) {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor a = random_tensor(rng, Shape{8}, -2.0, 2.0);
        Tensor b = random_tensor(rng, Shape{8}, -2.0, 2.0);
        if (l2_norm_value(a) < 0.1 || l2_norm_value(b) < 0.1) continue;
        // Raw two-route value, before the primitive's final clamp.
        Graph g;
        Var va = g.leaf(a);
        Var vb = g.constant(b);
        const double raw = dot(va, vb).value().value() /
                           (l2_norm(va).value().value() * l2_norm(vb).value().value());
        EXPECT_GE(raw, -1.0 - 1e-12);
        EXPECT_LE(raw, 1.0 + 1e-12);
        const double clamped = cosine_similarity(va, vb).value().value();
        EXPECT_GE(clamped, -1.0);
        EXPECT_LE(clamped, 1.0);
        EXPECT_NEAR(raw, clamped, 1e-12);
    }
}

TEST(Graph, ClipInsideGraphIsRejected) {
    Graph g;
    Var a = g.leaf(Tensor::from_vector({1.0}));
    EXPECT_THROW(clip(a, 0.0, 1.0), GraphError);
}

TEST(Graph, CrossGraphOperandsRejected) {
    Graph g1, g2;
    Var a = g1.leaf(Tensor::from_vector({1.0}));
    Var b = g2.leaf(Tensor::from_vector({2.0}));
    EXPECT_THROW(add(a, b), GraphError);
}

TEST(Graph, MultiChannelConvIsSumOfChannelConvs) {
    Rng rng(43);
    Tensor ch0 = random_tensor(rng, Shape{5, 5});
    Tensor ch1 = random_tensor(rng, Shape{5, 5});
    Tensor stacked(Shape{2, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) {
        stacked[i] = ch0[i];
        stacked[25 + i] = ch1[i];
    }
    Tensor k0 = random_tensor(rng, Shape{3, 3});
    Tensor k1 = random_tensor(rng, Shape{3, 3});
    Tensor k4(Shape{1, 2, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
        k4[i] = k0[i];
        k4[9 + i] = k1[i];
    }
    for (Padding pad : {Padding::kZero, Padding::kReflect}) {
        Graph g;
        Var multi = conv2d(g.leaf(stacked), g.constant(k4), pad);
        Var split = add(conv2d(g.leaf(ch0), g.constant(k0), pad),
                        conv2d(g.leaf(ch1), g.constant(k1), pad));
        ASSERT_EQ(multi.value().shape(), (Shape{1, 5, 5}));
        for (std::size_t i = 0; i < 25; ++i) {
            EXPECT_NEAR(multi.value()[i], split.value()[i], 1e-14);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

TEST(Grad, QuadraticExample) {
    Graph g;
    Var x = g.leaf(Tensor::scalar(3.0));
    Var y = mul(x, x);
    expect_tensor_near(g.gradient(y, x), {6.0});
}

TEST(Grad, SumAbsPositiveResidual) {
    Graph g;
    Var x = g.leaf(Tensor::from_vector({2.0, 3.0, 4.0}));
    Var y = g.constant(Tensor::from_vector({1.0, 1.0, 1.0}));
    Var loss = reduce_sum_abs(sub(x, y));
    expect_tensor_near(g.gradient(loss, x), {1.0, 1.0, 1.0});
    // sign of that gradient is all +1
    expect_tensor_near(sign(g.gradient(loss, x)), {1.0, 1.0, 1.0});
}

TEST(Grad, UnreachableAndNonScalarErrors) {
    Graph g;
    Var x = g.leaf(Tensor::from_vector({1.0, 2.0}));
    Var unrelated = g.leaf(Tensor::from_vector({1.0}));
    Var loss = reduce_mean(mul(x, x));
    EXPECT_THROW(g.gradient(loss, unrelated), GraphError);
    EXPECT_THROW(g.gradient(x, x), GraphError);

    Graph g2;
    Var other = g2.leaf(Tensor::scalar(1.0));
    EXPECT_THROW(g.gradient(loss, other), GraphError);
}

TEST(Grad, RepeatedCallsIdentical) {
    Rng rng(5);
    Graph g;
    Var x = g.leaf(random_tensor(rng, Shape{6}));
    Var loss = reduce_variance(tanh(mul(x, g.constant(random_tensor(rng, Shape{6})))));
    Tensor g1 = g.gradient(loss, x);
    Tensor g2 = g.gradient(loss, x);
    EXPECT_EQ(g1, g2);
}

TEST(Grad, RandomCompositeGraphMatchesFiniteDifference) {
    // ten-element composite graph, cross-checked in both directions
    const double err = gradcheck_case(424242);
    EXPECT_LE(err, 1e-6);
}

TEST(Grad, Linearity) {
    Rng rng(17);
    Tensor x0 = random_tensor(rng, Shape{8});
    auto grad_f = [&](double a, double b) {
        Graph g;
        Var x = g.leaf(x0);
        Var f = reduce_variance(tanh(x));
        Var h = reduce_sum_abs(mul(x, g.constant(random_tensor(rng, Shape{8}))));
        (void)h;
        Var combo = add(mul(f, g.constant_scalar(a)), mul(reduce_mean(mul(x, x)),
                                                          g.constant_scalar(b)));
        return g.gradient(combo, x);
    };
    auto grad_single = [&](bool second) {
        Graph g;
        Var x = g.leaf(x0);
        Var f = second ? reduce_mean(mul(x, x)) : reduce_variance(tanh(x));
        return g.gradient(f, x);
    };
    // Power-of-two coefficients scale exactly.
    const Tensor combined = grad_f(2.0, -0.5);
    const Tensor f1 = grad_single(false);
    const Tensor f2 = grad_single(true);
    for (std::size_t i = 0; i < combined.size(); ++i) {
        EXPECT_DOUBLE_EQ(combined[i], 2.0 * f1[i] - 0.5 * f2[i]);
    }
    // Generic coefficients within rounding.
    const Tensor generic = grad_f(1.3, 0.7);
    for (std::size_t i = 0; i < generic.size(); ++i) {
        EXPECT_NEAR(generic[i], 1.3 * f1[i] + 0.7 * f2[i], 1e-14);
    }
}

TEST(Grad, DivTanhSpatialMeanReshapeAgainstFiniteDifference) {
    Rng rng(23);
    Tensor x0 = random_tensor(rng, Shape{2, 4, 4}, 0.2, 0.9);
    Tensor denom = gradcheck_detail::random_safe_tensor(rng, Shape{2, 4, 4});
    Graph g;
    Var v = g.leaf(x0);
    Var out = l2_norm(reshape(spatial_mean(div(tanh(v), g.constant(denom))), Shape{2}));
    Tensor analytic = g.gradient(out, v);
    Tensor numeric = finite_diff_grad(
        [&](const Tensor& t) {
            Graph g2;
            Var v2 = g2.leaf(t);
            return l2_norm(reshape(spatial_mean(div(tanh(v2), g2.constant(denom))), Shape{2}))
                .value()
                .value();
        },
        x0, 1e-5);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        EXPECT_NEAR(analytic[i], numeric[i], 1e-8);
    }
}

TEST(Grad, ConvKernelGradientAgainstFiniteDifference) {
    Rng rng(31);
    Tensor img = random_tensor(rng, Shape{5, 5});
    Tensor k0 = random_tensor(rng, Shape{3, 3});
    Graph g;
    Var k = g.leaf(k0);
    Var out = reduce_variance(conv2d(g.constant(img), k, Padding::kReflect));
    Tensor analytic = g.gradient(out, k);
    Tensor numeric = finite_diff_grad(
        [&](const Tensor& t) {
            Graph g2;
            return reduce_variance(conv2d(g2.constant(img), g2.leaf(t), Padding::kReflect))
                .value()
                .value();
        },
        k0, 1e-5);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        EXPECT_NEAR(analytic[i], numeric[i], 1e-8);
    }
}

TEST(FiniteDiff, LinearFunctionalGivesAllOnes) {
    Tensor x = Tensor::from_vector({0.3, -0.2, 0.9});
    Tensor grad = finite_diff_grad(
        [](const Tensor& t) {
            double s = 0.0;
            for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
            return s;
        },
        x, 1e-5);
    expect_tensor_near(grad, {1.0, 1.0, 1.0}, 1e-9);
}

TEST(FiniteDiff, QuadraticAtThree) {
    Tensor x = Tensor::scalar(3.0);
    Tensor grad = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, x, 1e-5);
    EXPECT_NEAR(grad[0], 6.0, 1e-8);
    EXPECT_THROW(finite_diff_grad([](const Tensor& t) { return t[0]; }, x, 0.0), ConfigError);
}

TEST(Gradcheck, SuiteBelowTolerance) {
    const GradcheckReport report = run_gradcheck(30, 5000);
    EXPECT_LE(report.max_rel_error, 1e-6) << "worst seed " << report.worst_seed;
}

TEST(Graph, DeterministicReplay) {
    auto build = [](std::vector<double>& values, Tensor& grad) {
        Rng rng(99);
        Graph g;
        Var x = g.leaf(random_tensor(rng, Shape{4, 4}, 0.0, 1.0));
        Var k = g.constant(random_tensor(rng, Shape{3, 3}, -0.5, 0.5));
        Var loss = reduce_sum_abs(sub(tanh(conv2d(x, k, Padding::kReflect)),
                                      g.constant(Tensor(Shape{4, 4}, 0.25))));
        for (std::size_t i = 0; i < g.node_count(); ++i) {
            for (double v : g.value_of(i).data()) values.push_back(v);
        }
        grad = g.gradient(loss, x);
    };
    std::vector<double> v1, v2;
    Tensor g1, g2;
    build(v1, g1);
    build(v2, g2);
    EXPECT_EQ(v1, v2);
    EXPECT_EQ(g1, g2);
}
