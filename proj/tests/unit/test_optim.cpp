#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "paid/error.hpp"
#include "paid/optim.hpp"

using namespace paid;

namespace {

Params one_tensor(std::vector<Real> v) {
  Params p;
  const auto n = v.size();
  p.tensors.push_back({"w", Tensor({n}, std::move(v))});
  return p;
}

}  // namespace

TEST(Sgd, PlainGradientDescent) {
  auto p = one_tensor({1, 2});
  auto state = OptimState::zeros_like(p);
  const Tensor g[] = {Tensor::from({0.5, -1})};
  sgd_step(p, g, state, Real(0.1), 0, 0);
  EXPECT_NEAR(p.tensors[0].value[0], 0.95, 1e-15);
  EXPECT_NEAR(p.tensors[0].value[1], 2.1, 1e-15);
}

TEST(Sgd, WeightDecayShrinksByFactor) {
  auto p = one_tensor({3, -4});
  auto state = OptimState::zeros_like(p);
  const Tensor g[] = {Tensor({2})};
  const Real lr = 0.1, wd = 2e-4;
  sgd_step(p, g, state, lr, Real(0.9), wd);
  EXPECT_NEAR(p.tensors[0].value[0], 3 * (1 - lr * wd), 1e-15);
  EXPECT_NEAR(p.tensors[0].value[1], -4 * (1 - lr * wd), 1e-15);
}

TEST(Sgd, TwoMomentumStepsOnConstantGradient) {
  auto p = one_tensor({0});
  auto state = OptimState::zeros_like(p);
  const Tensor g[] = {Tensor::from({2})};
  const Real lr = 0.1;
  sgd_step(p, g, state, lr, Real(0.9), 0);
  sgd_step(p, g, state, lr, Real(0.9), 0);
  EXPECT_NEAR(p.tensors[0].value[0], -lr * 2 * (1 + 1.9), 1e-15);
  EXPECT_EQ(state.step, 2u);
}

TEST(Sgd, MismatchedShapesThrow) {
  auto p = one_tensor({0, 0});
  auto state = OptimState::zeros_like(p);
  const Tensor g[] = {Tensor({3})};
  EXPECT_THROW(sgd_step(p, g, state, 1, 0, 0), ShapeError);
}

TEST(Schedule, StepDecay) {
  const int decays[] = {215, 260, 285};
  EXPECT_NEAR(lr_at_epoch(Real(0.1), decays, Real(0.1), 0), 0.1, 1e-15);
  EXPECT_NEAR(lr_at_epoch(Real(0.1), decays, Real(0.1), 214), 0.1, 1e-15);
  EXPECT_NEAR(lr_at_epoch(Real(0.1), decays, Real(0.1), 215), 0.01, 1e-15);
  EXPECT_NEAR(lr_at_epoch(Real(0.1), decays, Real(0.1), 290), 1e-4, 1e-15);
  const int desk[] = {50, 80};
  EXPECT_NEAR(lr_at_epoch(Real(0.1), desk, Real(0.1), 99), 1e-3, 1e-15);
}

TEST(Swa, IdenticalCheckpointsAverageToThemselves) {
  std::mt19937_64 rng(1);
  Params p;
  p.tensors.push_back({"w", test::uniform_tensor({3, 4}, rng, -1, 1)});
  SwaState swa;
  for (int i = 0; i < 7; ++i) swa.update(p);
  EXPECT_EQ(swa.finalize(), p);
  EXPECT_EQ(swa.count(), 7u);
}

TEST(Swa, OppositeCheckpointsAverageToZero) {
  std::mt19937_64 rng(2);
  Params p;
  p.tensors.push_back({"w", test::uniform_tensor({5}, rng, -1, 1)});
  auto neg = p;
  for (auto& v : neg.tensors[0].value.values()) v = -v;
  SwaState swa;
  swa.update(p);
  swa.update(neg);
  const auto avg = swa.finalize();
  for (Real v : avg.tensors[0].value.values()) EXPECT_EQ(v, 0);
}

TEST(Swa, StreamingEqualsBatchMean) {
  std::mt19937_64 rng(3);
  std::vector<Params> seq;
  SwaState swa;
  for (int i = 0; i < 20; ++i) {
    Params p;
    p.tensors.push_back({"w", test::uniform_tensor({6}, rng, -3, 3)});
    swa.update(p);
    seq.push_back(p);
  }
  const auto avg = swa.finalize();
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0;
    for (const auto& p : seq) s += p.tensors[0].value[j];
    EXPECT_NEAR(avg.tensors[0].value[j], s / 20, 1e-12);
  }
}

TEST(Swa, EmptyFinalizeThrows) {
  SwaState swa;
  EXPECT_THROW((void)swa.finalize(), ContractError);
}
