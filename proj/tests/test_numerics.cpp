#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "calm/autodiff.hpp"
#include "calm/gradcheck.hpp"
#include "testing.hpp"

using namespace calm;
using calm::testing::random_tensor;

namespace {

Tensor eval_op(const std::function<Var(Tape&)>& build) {
    Tape tape(false);
    return build(tape).value();
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

Tensor transpose(const Tensor& a) {
    Tensor t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// Projects an op's output onto fixed random weights so every output
// coordinate reaches the gradient.
ScalarFn projected(std::function<Var(Tape&, std::span<const Var>)> op, Shape out_shape,
                   std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = random_tensor(out_shape, rng);
    return [op, w](Tape& tape, std::span<const Var> in) {
        return sum(mul(op(tape, in), tape.constant(w)));
    };
}

void expect_gradients(const char* name, const ScalarFn& f, const std::vector<Shape>& shapes,
                      int points = 100, double sd = 1.0) {
    double worst = 0.0;
    for (int t = 0; t < points; ++t) {
        Rng rng(1000 + t);
        std::vector<Tensor> inputs;
        for (const Shape& s : shapes) inputs.push_back(random_tensor(s, rng, sd));
        worst = std::max(worst, grad_check(f, inputs).max_rel_error);
    }
    EXPECT_LT(worst, 1e-6) << name;
}

}  // namespace

TEST(Tensor, ShapeMustMatchValues) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    EXPECT_EQ(Tensor({2, 3}).size(), 6u);
    EXPECT_EQ(shape_str({2, 3}), "[2x3]");
}

TEST(Matmul, IdentityAndZero) {
    const Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
    EXPECT_EQ(eval_op([&](Tape& t) { return matmul(t.constant(id), t.constant(m)); }), m);
    const Tensor z = eval_op([&](Tape& t) {
        return matmul(t.constant(Tensor::matrix(1, 2, {1, 2})), t.constant(Tensor::matrix(2, 1, {0, 0})));
    });
    EXPECT_EQ(z, Tensor::matrix(1, 1, {0}));
}

TEST(Matmul, MatchesTripleLoop) {
    Rng rng(7);
    for (auto [m, k, n] : {std::tuple{3, 4, 2}, std::tuple{17, 13, 11}, std::tuple{1, 64, 36}}) {
        const Tensor a = random_tensor({std::size_t(m), std::size_t(k)}, rng);
        const Tensor b = random_tensor({std::size_t(k), std::size_t(n)}, rng);
        const Tensor oracle = naive_matmul(a, b);
        const Tensor c = eval_op([&](Tape& t) { return matmul(t.constant(a), t.constant(b)); });
        EXPECT_LT(calm::testing::max_abs_diff(c, oracle), 1e-12);
        const Tensor bt = transpose(b);
        const Tensor c2 = eval_op([&](Tape& t) { return matmul_nt(t.constant(a), t.constant(bt)); });
        EXPECT_LT(calm::testing::max_abs_diff(c2, oracle), 1e-12);
        // gemm_tn reads its left operand stored transposed, [k x m].
        const Tensor at = transpose(a);
        Tensor c4({std::size_t(m), std::size_t(n)});
        kernels::gemm_tn(at.data(), b.data(), c4.data(), std::size_t(m), std::size_t(k),
                         std::size_t(n), false);
        EXPECT_LT(calm::testing::max_abs_diff(c4, oracle), 1e-12);
    }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tape t(false);
    try {
        matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3})));
        FAIL();
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[2x3]", msg.find("[2x3]") + 1), std::string::npos);
    }
}

TEST(Softmax, SymmetryAndStability) {
    const Tensor u = eval_op([](Tape& t) { return softmax_lastdim(t.constant(Tensor::vector({0, 0, 0}))); });
    for (double v : u.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    const Tensor s = eval_op([](Tape& t) { return softmax_lastdim(t.constant(Tensor::vector({1000, 0}))); });
    EXPECT_NEAR(s[0], 1.0, 1e-12);
    EXPECT_NEAR(s[1], 0.0, 1e-12);
    EXPECT_TRUE(s.all_finite());
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor({4, 9}, rng, 5.0);
        const Tensor y = eval_op([&](Tape& t) { return softmax_lastdim(t.constant(x)); });
        for (std::size_t r = 0; r < x.rows(); ++r) {
            long double z = 0;
            for (std::size_t c = 0; c < x.cols(); ++c) z += std::exp(static_cast<long double>(x.at(r, c)));
            for (std::size_t c = 0; c < x.cols(); ++c)
                EXPECT_NEAR(y.at(r, c), static_cast<double>(std::exp(static_cast<long double>(x.at(r, c))) / z), 1e-12);
        }
    }
}

TEST(Softmax, RowsSumToOneOverWideRange) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x({3, 12});
        for (double& v : x.values()) v = rng.uniform() * 2000.0 - 1000.0;
        const Tensor y = eval_op([&](Tape& t) { return softmax_lastdim(t.constant(x)); });
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 12; ++c) s += y.at(r, c);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, CausalZeroesFuture) {
    Rng rng(5);
    const Tensor x = random_tensor({5, 5}, rng);
    const Tensor y = eval_op([&](Tape& t) { return causal_softmax(t.constant(x)); });
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            if (j > i) {
                EXPECT_EQ(y.at(i, j), 0.0);
            }
            s += y.at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(LayerNorm, ConstantRowAndZeroGain) {
    const Tensor x = Tensor::matrix(1, 4, {3, 3, 3, 3});
    const Tensor y = eval_op([&](Tape& t) {
        return layer_norm(t.constant(x), t.constant(Tensor::vector({1, 1, 1, 1})),
                          t.constant(Tensor::vector({0, 0, 0, 0})));
    });
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
    Rng rng(1);
    const Tensor r = random_tensor({3, 4}, rng);
    const Tensor b = Tensor::vector({0.5, -1, 2, 0.25});
    const Tensor z = eval_op([&](Tape& t) {
        return layer_norm(t.constant(r), t.constant(Tensor({4}, 0.0)), t.constant(b));
    });
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(z.at(i, j), b[j]);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor({3, 16}, rng, 3.0);
        const Tensor g = random_tensor({16}, rng);
        const Tensor b = random_tensor({16}, rng);
        const Tensor y = eval_op([&](Tape& t) {
            return layer_norm(t.constant(x), t.constant(g), t.constant(b));
        });
        for (std::size_t r = 0; r < 3; ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < 16; ++c) mean += x.at(r, c);
            mean /= 16.0;
            double var = 0.0;
            for (std::size_t c = 0; c < 16; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
            var /= 16.0;
            for (std::size_t c = 0; c < 16; ++c)
                EXPECT_NEAR(y.at(r, c), g[c] * (x.at(r, c) - mean) / std::sqrt(var + 1e-5) + b[c], 1e-12);
        }
    }
}

TEST(CrossEntropy, UniformLogits) {
    const std::vector<int> targets{0, 3, 1};
    const Tensor l = eval_op([&](Tape& t) { return cross_entropy_logits(t.constant(Tensor({3, 4})), targets); });
    EXPECT_NEAR(l[0], std::log(4.0), 1e-15);
}

TEST(CrossEntropy, OneHotLimitIsMonotone) {
    const std::vector<int> target{2};
    double prev = 1e300;
    for (double mag : {1.0, 10.0, 100.0}) {
        Tensor x({1, 4});
        x[2] = mag;
        const double loss = eval_op([&](Tape& t) { return cross_entropy_logits(t.constant(x), target); })[0];
        EXPECT_LT(loss, prev);
        prev = loss;
    }
    EXPECT_LT(prev, 1e-40);
}

TEST(CrossEntropy, MatchesLogSumExpOracle) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = random_tensor({6, 7}, rng, 4.0);
        std::vector<int> targets;
        for (int i = 0; i < 6; ++i) targets.push_back(static_cast<int>(rng.uniform_int(0, 6)));
        const double loss = eval_op([&](Tape& t) { return cross_entropy_logits(t.constant(x), targets); })[0];
        long double total = 0;
        for (std::size_t r = 0; r < 6; ++r) {
            long double m = x.at(r, 0);
            for (std::size_t c = 1; c < 7; ++c) m = std::max<long double>(m, x.at(r, c));
            long double z = 0;
            for (std::size_t c = 0; c < 7; ++c) z += std::exp(x.at(r, c) - m);
            total += m + std::log(z) - x.at(r, static_cast<std::size_t>(targets[r]));
        }
        EXPECT_NEAR(loss, static_cast<double>(total / 6), 1e-10);
    }
}

TEST(CrossEntropy, TargetOutOfRange) {
    Tape t(false);
    const std::vector<int> bad{4};
    EXPECT_THROW(cross_entropy_logits(t.constant(Tensor({1, 4})), bad), IndexError);
    const std::vector<int> negative{-1};
    EXPECT_THROW(cross_entropy_logits(t.constant(Tensor({1, 4})), negative), IndexError);
}

TEST(GradCheck, SumOfSquares) {
    const ScalarFn f = [](Tape&, std::span<const Var> in) { return sum(mul(in[0], in[0])); };
    const std::vector<Tensor> x{Tensor::vector({1, 2})};
    const auto g = gradients(f, x);
    EXPECT_NEAR(g[0][0], 2.0, 1e-15);
    EXPECT_NEAR(g[0][1], 4.0, 1e-15);
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-9);
}

TEST(GradCheck, ConstantFunctionHasZeroGradient) {
    const ScalarFn f = [](Tape& t, std::span<const Var>) { return t.constant(Tensor({1}, 3.0)); };
    const auto g = gradients(f, {Tensor::vector({1, 2, 3})});
    for (double v : g[0].values()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, EveryPrimitive) {
    expect_gradients("matmul", projected([](Tape&, auto in) { return matmul(in[0], in[1]); }, {3, 2}, 1),
                     {{3, 4}, {4, 2}});
    expect_gradients("matmul_nt", projected([](Tape&, auto in) { return matmul_nt(in[0], in[1]); }, {3, 5}, 2),
                     {{3, 4}, {5, 4}});
    expect_gradients("linear", projected([](Tape&, auto in) { return linear(in[0], in[1], in[2]); }, {3, 5}, 3),
                     {{3, 4}, {5, 4}, {5}});
    expect_gradients("add", projected([](Tape&, auto in) { return add(in[0], in[1]); }, {2, 3}, 4),
                     {{2, 3}, {2, 3}});
    expect_gradients("add_row", projected([](Tape&, auto in) { return add_row(in[0], in[1]); }, {3, 4}, 5),
                     {{3, 4}, {4}});
    expect_gradients("mul", projected([](Tape&, auto in) { return mul(in[0], in[1]); }, {2, 3}, 6),
                     {{2, 3}, {2, 3}});
    expect_gradients("scale", projected([](Tape&, auto in) { return scale(in[0], -1.7); }, {2, 3}, 7),
                     {{2, 3}});
    expect_gradients("sum", [](Tape&, auto in) { return scale(sum(in[0]), 0.5); }, {{3, 3}});
    expect_gradients("gelu", projected([](Tape&, auto in) { return gelu(in[0]); }, {3, 4}, 8),
                     {{3, 4}}, 100, 2.0);
    expect_gradients("softmax", projected([](Tape&, auto in) { return softmax_lastdim(in[0]); }, {3, 5}, 9),
                     {{3, 5}});
    expect_gradients("causal_softmax",
                     projected([](Tape&, auto in) { return causal_softmax(in[0]); }, {4, 4}, 10),
                     {{4, 4}});
    expect_gradients("layer_norm",
                     projected([](Tape&, auto in) { return layer_norm(in[0], in[1], in[2]); }, {3, 6}, 11),
                     {{3, 6}, {6}, {6}});
    expect_gradients("slice_cols",
                     projected([](Tape&, auto in) { return slice_cols(in[0], 1, 4); }, {3, 3}, 12),
                     {{3, 6}});
    expect_gradients("concat_cols", projected([](Tape&, auto in) {
                         const std::vector<Var> parts{in[0], in[1]};
                         return concat_cols(parts);
                     }, {3, 5}, 13),
                     {{3, 2}, {3, 3}});
    const std::vector<int> ids{2, 0, 2, 3};
    expect_gradients("embedding",
                     projected([ids](Tape&, auto in) { return embedding(in[0], ids); }, {4, 3}, 14),
                     {{5, 3}});
    const std::vector<int> targets{1, 0, 4};
    expect_gradients("cross_entropy",
                     [targets](Tape&, auto in) { return cross_entropy_logits(in[0], targets); },
                     {{3, 5}});
}

TEST(Tape, BackwardRunsEachNodeOnceNewestFirst) {
    Tape tape;
    std::vector<std::size_t> visited;
    Var x = tape.variable(Tensor({1}, 2.0));
    Var prev = x;
    for (int i = 0; i < 4; ++i) {
        const Var parent = prev;
        prev = tape.push(Tensor({1}, 1.0), {parent}, [&visited, parent](Tape& t, std::size_t self) {
            visited.push_back(self);
            t.grad(parent.id())[0] += t.grad(self)[0];
        });
    }
    tape.backward(prev);
    ASSERT_EQ(visited.size(), 4u);
    for (std::size_t i = 1; i < visited.size(); ++i) EXPECT_GT(visited[i - 1], visited[i]);
    EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Ops, Deterministic) {
    Rng rng(12);
    const Tensor a = random_tensor({7, 9}, rng), b = random_tensor({9, 5}, rng);
    auto run = [&] {
        return gradients([](Tape&, std::span<const Var> in) { return sum(gelu(matmul(in[0], in[1]))); },
                         {a, b});
    };
    EXPECT_EQ(run(), run());
}
