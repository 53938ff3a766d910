#include "seqnet/errors.hpp"
#include "seqnet/ops.hpp"
#include "seqnet/tensor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace seqnet;
using seqnet::testing::random_tensor;

TEST(Tensor, ShapeAndStorageAgree) {
    Tensor t = Tensor::zeros({2, 3, 4});
    EXPECT_EQ(t.numel(), 24u);
    EXPECT_EQ(t.data().size(), 24u);
    EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
}

TEST(Tensor, AddElementwise) {
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = Tensor::from({2}, {3, 4});
    Tensor c = ops::add(a, b);
    EXPECT_EQ(c.data()[0], 4.0);
    EXPECT_EQ(c.data()[1], 6.0);

    std::mt19937_64 rng(1);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor y = ops::add(x, zeros_like(x));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Tensor, ShapeErrorNamesOpAndShapes) {
    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::zeros({3});
    try {
        ops::add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[2]"), std::string::npos);
        EXPECT_NE(msg.find("[3]"), std::string::npos);
    }
}

TEST(Tensor, SliceAlongLength) {
    Tensor x = Tensor::from({1, 1, 4}, {10, 20, 30, 40});
    Tensor s = ops::slice_length(x, 1, 3);
    ASSERT_EQ(s.shape(), (Shape{1, 1, 2}));
    EXPECT_EQ(s.data()[0], 20.0);
    EXPECT_EQ(s.data()[1], 30.0);
    EXPECT_THROW(ops::slice_length(x, 3, 5), ShapeError);
}

TEST(Tensor, ConcatThenSliceRecoversParts) {
    std::mt19937_64 rng(2);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 3, 5}, rng);
    Tensor c = ops::concat_length({a, b});
    ASSERT_EQ(c.shape(), (Shape{2, 3, 9}));
    Tensor back = ops::slice_length(c, 4, 9);
    for (std::size_t i = 0; i < b.numel(); ++i) EXPECT_EQ(back.data()[i], b.data()[i]);
}

TEST(Autodiff, LinearSum) {
    Tensor x = Tensor::from({2}, {1, 1}, true);
    Tensor loss = ops::sum(ops::scale(x, 2.0));
    loss.backward();
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(Autodiff, Square) {
    Tensor x = Tensor::from({1}, {3}, true);
    ops::sum(ops::mul(x, x)).backward();
    EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, NonScalarLossRejected) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(ops::scale(x, 2.0).backward(), GraphError);
}

TEST(Autodiff, SecondBackwardRejected) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor loss = ops::sum(ops::mul(x, x));
    loss.backward();
    EXPECT_THROW(loss.backward(), GraphError);
}

TEST(Autodiff, AccumulationIsAdditive) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({7}, rng, true);
        Tensor w1 = random_tensor({7}, rng);
        Tensor w2 = random_tensor({7}, rng);

        ops::sum(ops::mul(ops::mul(x, x), w1)).backward();
        ops::sum(ops::mul(x, w2)).backward();
        std::vector<double> separate(x.grad().begin(), x.grad().end());

        x.zero_grad();
        ops::add(ops::sum(ops::mul(ops::mul(x, x), w1)), ops::sum(ops::mul(x, w2))).backward();
        for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(separate[i], x.grad()[i], 1e-12);
    }
}

TEST(Autodiff, ZeroUpstreamGivesZeroGradients) {
    std::mt19937_64 rng(4);
    Tensor x = random_tensor({2, 3, 6}, rng, true);
    Tensor y = ops::mul(x, x);
    y = ops::concat_length({y, ops::slice_length(x, 1, 4)});
    std::vector<double> zeros(y.numel(), 0.0);
    ops::weighted_sum(y, zeros).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, DiamondGraphVisitsEachNodeOnce) {
    Tensor x = Tensor::from({1}, {2.0}, true);
    Tensor h = ops::scale(x, 3.0);
    Tensor loss = ops::sum(ops::add(h, ops::mul(h, h)));
    loss.backward();
    // d/dx (3x + 9x^2) = 3 + 18x
    EXPECT_DOUBLE_EQ(x.grad()[0], 39.0);
}

TEST(Autodiff, IntermediateGradientsReleasedUnlessRetained) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor h = ops::mul(x, x);
    Tensor k = ops::scale(x, 2.0);
    k.retain_grad();
    ops::sum(ops::add(h, k)).backward();
    EXPECT_FALSE(h.has_grad());
    ASSERT_TRUE(k.has_grad());
    EXPECT_EQ(k.grad()[0], 1.0);
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y;
    {
        NoGradGuard guard;
        y = ops::mul(x, x);
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(grad_enabled());
}

TEST(Autodiff, RecordedTensorsAreReadOnly) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = ops::scale(x, 2.0);
    EXPECT_THROW(y.mutable_data(), GraphError);
    EXPECT_EQ(grad_rule(y), "scale");
}

TEST(FiniteDifference, SumIsExact) {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({10}, rng, true);
    const double err = finite_difference_check([](const Tensor& t) { return ops::sum(t); }, x);
    EXPECT_LE(err, 1e-10);
}

TEST(FiniteDifference, SquareSum) {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    const double err =
        finite_difference_check([](const Tensor& t) { return ops::sum(ops::mul(t, t)); }, x, {1e-5, {}});
    EXPECT_LE(err, 1e-7);
    // x is restored and its gradient cleared.
    EXPECT_EQ(x.data()[2], 3.0);
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(FiniteDifference, NonFiniteRejected) {
    Tensor x = Tensor::from({1}, {1.0}, true);
    auto f = [](const Tensor& t) { return ops::scale(ops::sum(t), std::numeric_limits<double>::infinity()); };
    EXPECT_THROW(finite_difference_check(f, x), Error);
}

TEST(FiniteDifference, ElementwiseOps) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({2, 2, 5}, rng, true);
        Tensor w = random_tensor({2, 2, 8}, rng);
        auto f = [&](const Tensor& t) {
            Tensor y = ops::concat_length({ops::mul(t, t), ops::slice_length(ops::scale(t, -0.7), 1, 4)});
            return ops::weighted_sum(y, w.data());
        };
        EXPECT_LE(finite_difference_check(f, x), 1e-4);
    }
}
