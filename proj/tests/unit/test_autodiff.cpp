#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "paid/autodiff.hpp"
#include "paid/error.hpp"

using namespace paid;

namespace {

using Builder = std::function<Var(Tape&, Var)>;

// Weighted sum so that every output element carries a distinct upstream gradient.
Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, tape.constant(test::uniform_tensor(y.shape(), rng, -1, 1))));
}

double max_rel_error(const Builder& build, const Tensor& x) {
  Tape tape;
  const Var xv = tape.variable(x);
  tape.backward(weighted_sum(tape, build(tape, xv), 7));
  const Tensor analytic = tape.grad(xv);
  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& probe) {
        Tape t;
        return weighted_sum(t, build(t, t.constant(probe)), 7).value().item();
      },
      x, Real(1e-4));
  double worst = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, test::rel_error(analytic[i], numeric[i]));
  return worst;
}

// Values bounded away from zero so ReLU/clamp kinks are out of the probe's reach.
Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto t = test::uniform_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.values()) v = flip(rng) ? -v : v;
  return t;
}

}  // namespace

TEST(Forward, MatmulIdentityLeavesOperandUnchanged) {
  Tape tape;
  const Var id = tape.constant(Tensor({3, 3}, std::vector<Real>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Tensor b({3, 4}, std::vector<Real>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  EXPECT_EQ(matmul(id, tape.constant(b)).value(), b);
}

TEST(Forward, Relu) {
  Tape tape;
  const auto y = relu(tape.constant(Tensor::from({-1, 0, 2})));
  EXPECT_EQ(y.value(), Tensor::from({0, 0, 2}));
}

TEST(Forward, LogSoftmaxOfUniformLogits) {
  Tape tape;
  const auto y = log_softmax(tape.constant(Tensor({1, 4}, Real(1))));
  for (Real v : y.value().values()) EXPECT_NEAR(v, std::log(0.25), 1e-12);
}

TEST(Forward, LogSoftmaxIsFiniteForExtremeLogits) {
  Tape tape;
  const auto y = log_softmax(tape.constant(Tensor({1, 3}, std::vector<Real>{1e300, -1e300, 0})));
  EXPECT_TRUE(all_finite(y.value()));
}

TEST(Forward, LogSoftmaxRejectsNonPositiveTemperature) {
  Tape tape;
  const auto x = tape.constant(Tensor({1, 2}));
  EXPECT_THROW((void)log_softmax(x, 0), ParameterError);
  EXPECT_THROW((void)log_softmax(x, -1), ParameterError);
}

TEST(Forward, ConvWithCentreKernelIsScaling) {
  Tape tape;
  Tensor k({1, 1, 3, 3});
  k[4] = 2;
  const Tensor x({1, 1, 2, 2}, std::vector<Real>{1, 2, 3, 4});
  const auto y = conv2d(tape.constant(x), tape.constant(k));
  EXPECT_EQ(y.value(), Tensor({1, 1, 2, 2}, std::vector<Real>{2, 4, 6, 8}));
}

TEST(Forward, ConvZeroPadsBorders) {
  Tape tape;
  const Tensor k({1, 1, 3, 3}, Real(1));
  const Tensor x({1, 1, 2, 2}, std::vector<Real>{1, 2, 3, 4});
  // Every output sees the whole 2x2 input through the padded 3x3 window.
  const auto y = conv2d(tape.constant(x), tape.constant(k));
  EXPECT_EQ(y.value(), Tensor({1, 1, 2, 2}, Real(10)));
}

TEST(Forward, MaxPoolDropsOddTail) {
  Tape tape;
  const Tensor x({1, 1, 3, 3}, std::vector<Real>{1, 5, 9, 2, 3, 9, 9, 9, 9});
  const auto y = max_pool2(tape.constant(x));
  EXPECT_EQ(y.value(), Tensor({1, 1, 1, 1}, Real(5)));
}

TEST(Forward, ShapeMismatchThrows) {
  Tape tape;
  const auto a = tape.constant(Tensor({2, 3}));
  EXPECT_THROW((void)add(a, tape.constant(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW((void)matmul(a, tape.constant(Tensor({2, 3}))), ShapeError);
  EXPECT_THROW((void)add_bias(a, tape.constant(Tensor({2}))), ShapeError);
}

TEST(Forward, MixingTapesThrows) {
  Tape t1;
  Tape t2;
  EXPECT_THROW((void)add(t1.constant(Tensor({1})), t2.constant(Tensor({1}))), ContractError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  const auto x = tape.variable(Tensor({2, 3}, Real(0.3)));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(x), Tensor({2, 3}, Real(1)));
}

TEST(Backward, MeanOfRelu) {
  Tape tape;
  const auto x = tape.variable(Tensor::from({-1, 2}));
  tape.backward(mean(relu(x)));
  EXPECT_EQ(tape.grad(x), Tensor::from({0, 0.5}));
}

TEST(Backward, NonScalarOutputThrows) {
  Tape tape;
  const auto x = tape.variable(Tensor({2}));
  EXPECT_THROW(tape.backward(relu(x)), ContractError);
}

TEST(Backward, ConstantsHaveNoGradient) {
  Tape tape;
  const auto c = tape.constant(Tensor({2}, Real(1)));
  const auto x = tape.variable(Tensor({2}, Real(2)));
  tape.backward(sum(mul(c, x)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_THROW((void)tape.grad(c), ContractError);
  EXPECT_EQ(tape.grad(x), Tensor({2}, Real(1)));
}

TEST(Backward, DetachStopsGradient) {
  Tape tape;
  const auto x = tape.variable(Tensor({1}, Real(3)));
  tape.backward(sum(mul(x, tape.detach(x))));
  EXPECT_EQ(tape.grad(x), Tensor({1}, Real(3)));
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  const auto x = tape.variable(Tensor({1}, Real(3)));
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(tape.grad(x), Tensor({1}, Real(6)));
}

TEST(Backward, RepeatedSweepDoesNotAccumulate) {
  Tape tape;
  const auto x = tape.variable(Tensor({1}, Real(3)));
  const auto y = sum(scale(x, 2));
  tape.backward(y);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x), Tensor({1}, Real(2)));
}

TEST(Backward, InputsPrecedeNodesAndEachNodeVisitedOnce) {
  Tape tape;
  const auto x = tape.variable(Tensor({2, 2}, Real(0.5)));
  auto y = x;
  for (int i = 0; i < 5; ++i) y = add(relu(y), scale(y, 0.5));
  tape.backward(sum(y));
  std::size_t differentiable = 0;
  for (NodeId id = 0; id < tape.size(); ++id) {
    const Var v{&tape, id};
    for (auto in : tape.inputs(v)) EXPECT_LT(in, id);
    if (tape.requires_grad(v) && tape.kind(v) != OpKind::leaf) ++differentiable;
  }
  EXPECT_EQ(tape.last_backward_visits(), differentiable);
}

TEST(FiniteDiff, SquareAtThree) {
  const auto g = finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, Tensor::from({3}), Real(1e-3));
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantHasZeroGradient) {
  const auto g = finite_diff_grad([](const Tensor&) { return Real(4); }, Tensor({5}, Real(1)), Real(1e-3));
  EXPECT_EQ(g, Tensor({5}));
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW((void)finite_diff_grad([](const Tensor&) { return Real(0); }, Tensor({1}), 0), ParameterError);
}

struct OpCase {
  const char* name;
  Shape shape;
  Builder build;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  EXPECT_LT(max_rel_error(c.build, away_from_zero(c.shape, 11)), 1e-6) << c.name;
}

namespace {

Var other(Tape& t, const Shape& s, std::uint64_t seed) { return t.constant(away_from_zero(s, seed)); }

}  // namespace

INSTANTIATE_TEST_SUITE_P(
    EveryOp, OpGradient,
    ::testing::Values(
        OpCase{"add", {2, 3}, [](Tape& t, Var x) { return add(x, other(t, {2, 3}, 1)); }},
        OpCase{"sub", {2, 3}, [](Tape& t, Var x) { return sub(other(t, {2, 3}, 1), x); }},
        OpCase{"mul", {2, 3}, [](Tape& t, Var x) { return mul(x, mul(x, other(t, {2, 3}, 2))); }},
        OpCase{"matmul_left", {2, 3}, [](Tape& t, Var x) { return matmul(x, other(t, {3, 4}, 3)); }},
        OpCase{"matmul_right", {3, 4}, [](Tape& t, Var x) { return matmul(other(t, {2, 3}, 3), x); }},
        OpCase{"conv_input", {2, 2, 4, 5}, [](Tape& t, Var x) { return conv2d(x, other(t, {3, 2, 3, 3}, 4)); }},
        OpCase{"conv_weight", {3, 2, 3, 3}, [](Tape& t, Var w) { return conv2d(other(t, {2, 2, 4, 5}, 4), w); }},
        OpCase{"relu", {3, 4}, [](Tape&, Var x) { return relu(x); }},
        OpCase{"max_pool2", {2, 2, 4, 5}, [](Tape&, Var x) { return max_pool2(x); }},
        OpCase{"flatten", {2, 2, 2, 2}, [](Tape&, Var x) { return flatten(mul(x, x)); }},
        OpCase{"add_bias_matrix", {3}, [](Tape& t, Var b) { return add_bias(other(t, {4, 3}, 5), b); }},
        OpCase{"add_bias_image", {3}, [](Tape& t, Var b) { return add_bias(other(t, {2, 3, 2, 2}, 5), b); }},
        OpCase{"scale", {2, 3}, [](Tape&, Var x) { return scale(x, Real(-1.7)); }},
        OpCase{"log_softmax", {3, 4}, [](Tape&, Var x) { return log_softmax(x); }},
        OpCase{"log_softmax_tau", {3, 4}, [](Tape&, Var x) { return log_softmax(x, Real(0.7)); }},
        OpCase{"mean", {2, 3}, [](Tape&, Var x) { return mean(mul(x, x)); }},
        OpCase{"sum", {2, 3}, [](Tape&, Var x) { return sum(mul(x, x)); }},
        OpCase{"exp", {2, 3}, [](Tape&, Var x) { return exp(x); }},
        OpCase{"clamp_min", {2, 3}, [](Tape&, Var x) { return clamp_min(x, Real(0.05)); }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });
