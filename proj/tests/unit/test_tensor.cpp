// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "spade/grad_check.hpp"
#include "spade/ops.hpp"

using namespace spade;

TEST(Tensor, ShapeAndDataLength) {
  Tensor<double> t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_EQ(t.shape().sample(), 60u);
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>(3)), DimensionError);
  EXPECT_THROW(Tensor<double>(Shape{-1, 1, 1, 1}), DimensionError);
}

TEST(Tensor, UndefinedAccessIsUsageError) {
  Tensor<double> t;
  EXPECT_FALSE(t.defined());
  EXPECT_THROW((void)t.shape(), UsageError);
}

TEST(Autograd, SumOfProductGivesOtherFactor) {
  Rng rng(3);
  auto w = oracle::random_tensor(Shape{1, 4, 2, 2}, rng, true);
  auto x = oracle::random_tensor(Shape{1, 4, 2, 2}, rng, false);
  sum(mul(w, x)).backward();
  ASSERT_TRUE(w.has_grad());
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], x.values()[i]);
  EXPECT_FALSE(x.has_grad());
}

TEST(Autograd, BackwardRequiresScalar) {
  Tensor<double> w(Shape{1, 1, 2, 2}, true);
  EXPECT_THROW(scale(w, 2.0).backward(), UsageError);
}

TEST(Autograd, LeafGradientsAccumulateUntilZeroed) {
  auto w = Tensor<double>::full(Shape{1, 1, 1, 3}, 1.0, true);
  sum(w).backward();
  sum(w).backward();
  for (const double g : w.grad()) EXPECT_EQ(g, 2.0);
  w.zero_grad();
  for (const double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autograd, DisconnectedComponentUntouched) {
  auto a = Tensor<double>::full(Shape{1, 1, 1, 2}, 1.0, true);
  auto b = Tensor<double>::full(Shape{1, 1, 1, 2}, 1.0, true);
  const auto la = sum(square(a));
  const auto lb = sum(square(b));
  la.backward();
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
  (void)lb;
}

TEST(Autograd, SharedSubexpressionSumsBothPaths) {
  auto x = Tensor<double>::full(Shape{1, 1, 1, 1}, 3.0, true);
  const auto y = square(x);       // 9
  sum(add(y, scale(y, 2.0))).backward();  // 3 x^2 -> 6x = 18
  EXPECT_DOUBLE_EQ(x.grad()[0], 18.0);
}

TEST(Autograd, GraphOrderIsConstructionOrder) {
  Rng rng(5);
  auto x = oracle::random_tensor(Shape{1, 2, 3, 3}, rng, true);
  auto w = oracle::random_tensor(Shape{2, 2, 3, 3}, rng, true);
  const auto loss = mean(square(relu(conv2d(x, w, Tensor<double>(), 1, 1))));
  const auto nodes = loss.graph();
  ASSERT_GE(nodes.size(), 5u);
  for (std::size_t i = 1; i < nodes.size(); ++i) EXPECT_LT(nodes[i - 1]->id, nodes[i]->id);
  // every parent precedes its child
  for (const auto* n : nodes)
    for (const auto& p : n->parents)
      if (p->requires_grad) {
        EXPECT_LT(p->id, n->id);
      }
}

TEST(Autograd, BackwardIsBitDeterministic) {
  auto run = [] {
    Rng rng(11);
    auto x = oracle::random_tensor(Shape{2, 3, 6, 6}, rng, false);
    auto w = oracle::random_tensor(Shape{4, 3, 3, 3}, rng, true);
    mean(square(conv2d(x, w, Tensor<double>(), 1, 1))).backward();
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Autograd, NoGradGuardBuildsNoGraph) {
  auto w = Tensor<double>::full(Shape{1, 1, 1, 2}, 1.0, true);
  Tensor<double> y;
  {
    NoGradGuard ng;
    y = square(w);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Autograd, DetachCutsTheGraph) {
  auto w = Tensor<double>::full(Shape{1, 1, 1, 2}, 2.0, true);
  const auto d = square(w).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_TRUE(d.is_leaf());
}

TEST(CheckedMode, NonFiniteNamesTheOp) {
  Tensor<double> x(Shape{1, 1, 1, 1}, std::vector<double>{1000.0});
  EXPECT_NO_THROW(exp(x));
  CheckedModeGuard g;
  try {
    (void)exp(x);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
  }
}

TEST(GradCheck, SumHasUnitGradient) {
  Rng rng(1);
  auto p = oracle::random_tensor(Shape{1, 2, 3, 4}, rng, true);
  const auto r = grad_check([](const Tensor<double>& x) { return sum(x); }, p);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_abs_err, 1e-10);
  for (const double g : p.grad()) EXPECT_EQ(g, 1.0);
}

TEST(GradCheck, WrongBackwardRuleIsCaught) {
  // square whose backward claims d/dx x^2 = x (should be 2x)
  auto bad_square = [](const Tensor<double>& x) {
    std::vector<double> v(x.values());
    for (auto& e : v) e *= e;
    return Tensor<double>::from_op("bad_square", x.shape(), std::move(v), {x}, [x](detail::Node<double>& self) {
      double* gx = grad_ptr(x);
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * x.values()[i];
    });
  };
  Rng rng(2);
  auto p = oracle::random_tensor(Shape{1, 1, 2, 3}, rng, true);
  const auto r = grad_check([&](const Tensor<double>& x) { return sum(bad_square(x)); }, p);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_rel_err, 0.1);
}

TEST(GradCheck, NondeterministicFunctionRejected) {
  Rng rng(3);
  auto p = oracle::random_tensor(Shape{1, 1, 1, 2}, rng, true);
  int calls = 0;
  EXPECT_THROW(grad_check([&](const Tensor<double>& x) { return scale(sum(x), double(++calls)); }, p), UsageError);
}

TEST(GradCheck, AgreesWithIndependentFiniteDifferences) {
  Rng rng(4);
  auto x = oracle::random_tensor(Shape{1, 2, 5, 5}, rng);
  auto w = oracle::random_tensor(Shape{3, 2, 3, 3}, rng, true);
  const Tensor<double> nobias;
  auto f = [&] { return mean(square(conv2d(x, w, nobias, 2, 1))); };
  f().backward();
  const std::vector<double> analytic(w.grad().begin(), w.grad().end());
  const auto numeric = oracle::finite_diff(
      [&](const std::vector<double>& wv) {
        int oh, ow;
        const auto y = oracle::naive_conv(x.values(), 1, 2, 5, 5, wv, 3, 3, {}, 2, 1, oh, ow);
        double acc = 0.0;
        for (const double v : y) acc += v * v;
        return acc / static_cast<double>(y.size());
      },
      w.values());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    EXPECT_NEAR(analytic[i], numeric[i], 1e-4 * std::max(1.0, std::abs(numeric[i])));
  }
}
