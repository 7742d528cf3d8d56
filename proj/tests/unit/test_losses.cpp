#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "paid/error.hpp"
#include "paid/losses.hpp"

using namespace paid;

namespace {

struct Pair {
  Model peer;
  Model student;
  Tensor x_nat;
  Tensor x_adv;
  std::vector<int> y;
};

Pair make_pair(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Pair p{make_model(mlp_p(2, 3), seed), make_model(mlp_s(2, 3), seed + 1), test::uniform_tensor({6, 2}, rng), {}, {}};
  p.x_adv = p.x_nat;
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  for (auto& v : p.x_adv.values()) v += d(rng);
  p.y = {0, 1, 2, 2, 1, 0};
  return p;
}

Tensor random_probs(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += t[r * cols + c] = e(rng);
    for (std::size_t c = 0; c < cols; ++c) t[r * cols + c] /= s;
  }
  return t;
}

std::vector<Tensor> grads_of(const Model& m, const std::function<Var(Tape&, const BoundModel&, const BoundModel&)>& f,
                             const Model& other, bool m_is_peer) {
  Tape tape;
  const auto bm = bind(tape, m, true);
  const auto bo = bind(tape, other, true);
  tape.backward(m_is_peer ? f(tape, bm, bo) : f(tape, bo, bm));
  return param_grads(tape, bm);
}

}  // namespace

TEST(CrossEntropy, ConfidentCorrectIsZero) {
  Tape tape;
  const int y[] = {1};
  const auto ce = cross_entropy(tape.constant(Tensor({1, 3}, std::vector<Real>{-1000, 1000, -1000})), y);
  EXPECT_EQ(ce.value().item(), 0);
}

TEST(CrossEntropy, UniformLogitsFourClasses) {
  Tape tape;
  const int y[] = {2};
  const auto ce = cross_entropy(tape.constant(Tensor({1, 4}, Real(0.3))), y);
  EXPECT_NEAR(ce.value().item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, BatchMeanOfPerSampleLosses) {
  std::mt19937_64 rng(5);
  const auto z = test::uniform_tensor({5, 3}, rng, -2, 2);
  const std::vector<int> y{0, 2, 1, 1, 0};
  Tape tape;
  const double batch = cross_entropy(tape.constant(z), y).value().item();
  double manual = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto p = test::softmax_row({z[i * 3], z[i * 3 + 1], z[i * 3 + 2]});
    manual -= std::log(p[static_cast<std::size_t>(y[i])]) / 5;
  }
  EXPECT_NEAR(batch, manual, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
  Tape tape;
  const int y[] = {3};
  EXPECT_THROW((void)cross_entropy(tape.constant(Tensor({1, 3})), y), ContractError);
}

TEST(KlDiv, HandComputedValue) {
  const auto kl = kl_div(Tensor({1, 2}, std::vector<Real>{0.5, 0.5}), Tensor({1, 2}, std::vector<Real>{0.25, 0.75}));
  EXPECT_NEAR(kl, 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(kl, 0.143841, 1e-6);
}

TEST(KlDiv, SelfDivergenceIsZero) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_probs(3, 5, rng);
    EXPECT_NEAR(kl_div(p, p), 0, 1e-9);
  }
}

TEST(KlDiv, GibbsInequality) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_probs(1, 4, rng);
    const auto q = random_probs(1, 4, rng);
    EXPECT_GE(kl_div(p, q), 0);
  }
}

TEST(KlDiv, RejectsUnnormalisedRows) {
  EXPECT_THROW((void)kl_div(Tensor({1, 2}, std::vector<Real>{0.5, 0.6}), Tensor({1, 2}, Real(0.5))), ContractError);
  EXPECT_THROW((void)kl_div(Tensor({1, 2}, std::vector<Real>{1.5, -0.5}), Tensor({1, 2}, Real(0.5))), ContractError);
}

TEST(KlFromLogProbs, FiniteForZeroProbabilityTargets) {
  Tape tape;
  const auto t = log_softmax(tape.constant(Tensor({1, 2}, std::vector<Real>{0, -1e6})));
  const auto q = log_softmax(tape.constant(Tensor({1, 2}, std::vector<Real>{-1e6, 0})));
  EXPECT_TRUE(std::isfinite(kl_from_log_probs(t, q).value().item()));
}

TEST(InnerMax, ZeroForIdenticalModelsAndInputs) {
  const auto m = make_model(mlp_s(2, 3), 3);
  std::mt19937_64 rng(1);
  const auto x = test::uniform_tensor({4, 2}, rng);
  Tape tape;
  const auto a = bind(tape, m, false);
  const auto b = bind(tape, m, false);
  EXPECT_NEAR(inner_max_loss(a, b, tape.constant(x), tape.constant(x)).value().item(), 0, 1e-15);
}

TEST(InnerMax, EqualsExternalKl) {
  const auto p = make_pair(4);
  Tape tape;
  const auto bp = bind(tape, p.peer, false);
  const auto bs = bind(tape, p.student, false);
  const double v = inner_max_loss(bp, bs, tape.constant(p.x_nat), tape.constant(p.x_adv)).value().item();
  EXPECT_NEAR(v, kl_div(predict_prob(p.peer, p.x_nat), predict_prob(p.student, p.x_adv)), 1e-12);
}

TEST(InnerMax, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 5;; ++seed) {
    ASSERT_LT(seed, 100u) << "no instance clear of ReLU kinks";
    const auto p = make_pair(seed);
    Tape tape;
    const auto x = tape.variable(p.x_adv);
    tape.backward(inner_max_loss(bind(tape, p.peer, false), bind(tape, p.student, false), tape.constant(p.x_nat), x));
    if (test::kink_margin(tape) < 1e-3) continue;
    const auto value_at = [&](const Tensor& x_pert) {
      Tape t;
      return inner_max_loss(bind(t, p.peer, false), bind(t, p.student, false), t.constant(p.x_nat),
                            t.constant(x_pert))
          .value()
          .item();
    };
    const auto analytic = tape.grad(x);
    const auto numeric = finite_diff_grad(value_at, p.x_adv, Real(1e-5));
    for (std::size_t i = 0; i < analytic.numel(); ++i) EXPECT_LT(test::rel_error(analytic[i], numeric[i]), 1e-4);
    return;
  }
}

TEST(PeerLoss, GammaTwoZeroIsScaledCrossEntropy) {
  const auto p = make_pair(6);
  LossSpec spec;
  spec.gamma1 = 1.7;
  spec.gamma2 = 0;
  Tape tape;
  const auto bp = bind(tape, p.peer, false);
  const auto x = tape.constant(p.x_adv);
  const auto terms = peer_loss(spec, p.y, bp, bind(tape, p.student, false), x);
  EXPECT_EQ(terms.total.value().item(), Real(1.7) * cross_entropy(bp.logits(x), p.y).value().item());
}

TEST(PeerLoss, IdenticalModelsHaveZeroKl) {
  const auto p = make_pair(7);
  Tape tape;
  const auto b = bind(tape, p.peer, false);
  const auto terms = peer_loss(LossSpec::cifar10(), p.y, b, b, tape.constant(p.x_adv));
  EXPECT_NEAR(terms.kl, 0, 1e-15);
  EXPECT_NEAR(terms.total.value().item(), terms.ce, 1e-15);
}

TEST(PeerLoss, LoggedDecompositionMatchesTotal) {
  const auto p = make_pair(8);
  const auto spec = LossSpec::cifar10();
  Tape tape;
  const auto terms = peer_loss(spec, p.y, bind(tape, p.peer, false), bind(tape, p.student, false),
                               tape.constant(p.x_adv));
  EXPECT_NEAR(terms.total.value().item(), spec.gamma1 * terms.ce + spec.gamma2 * terms.kl, 1e-12);
  // tau^2 * KL(S || P) with tau_peer = 1.
  const double kl = kl_div(predict_prob(p.student, p.x_adv), predict_prob(p.peer, p.x_adv));
  EXPECT_NEAR(terms.kl, kl, 1e-12);
}

TEST(StudentLoss, CrossEntropyOnlyForm) {
  const auto p = make_pair(9);
  LossSpec spec;
  spec.lambda1 = 2;
  spec.lambda2 = 0;
  spec.lambda3 = 0;
  Tape tape;
  const auto bs = bind(tape, p.student, false);
  const auto xa = tape.constant(p.x_adv);
  const auto terms = student_loss(spec, p.y, bind(tape, p.peer, false), bs, tape.constant(p.x_nat), xa);
  EXPECT_EQ(terms.total.value().item(), 2 * cross_entropy(bs.logits(xa), p.y).value().item());
}

TEST(StudentLoss, CleanInputsZeroTheThirdTerm) {
  const auto p = make_pair(10);
  Tape tape;
  const auto x = tape.constant(p.x_nat);
  const auto terms =
      student_loss(LossSpec::cifar10(), p.y, bind(tape, p.peer, false), bind(tape, p.student, false), x, x);
  EXPECT_NEAR(terms.reg, 0, 1e-15);
}

TEST(StudentLoss, TemperedTermsMatchExternalKl) {
  const auto p = make_pair(11);
  LossSpec spec;
  spec.lambda2 = 0.5;
  Tape tape;
  const auto terms = student_loss(spec, p.y, bind(tape, p.peer, false), bind(tape, p.student, false),
                                  tape.constant(p.x_nat), tape.constant(p.x_adv));
  const Real tau = 5;
  const double kl = kl_div(predict_prob(p.peer, p.x_adv, tau), predict_prob(p.student, p.x_adv, tau));
  const double reg = kl_div(predict_prob(p.student, p.x_nat, tau), predict_prob(p.student, p.x_adv, tau));
  EXPECT_NEAR(terms.kl, 25 * kl, 1e-11);
  EXPECT_NEAR(terms.reg, 25 * reg, 1e-11);
  EXPECT_NEAR(terms.total.value().item(), terms.ce + 0.5 * terms.kl + terms.reg, 1e-12);
}

TEST(StudentLoss, DetachedCleanBranchChangesGradientOnly) {
  const auto p = make_pair(12);
  auto live = LossSpec::cifar10();
  auto detached = live;
  detached.detach_clean_branch = true;
  const auto run = [&](const LossSpec& spec) {
    Tape tape;
    const auto bs = bind(tape, p.student, true);
    const auto terms = student_loss(spec, p.y, bind(tape, p.peer, false), bs, tape.constant(p.x_nat),
                                    tape.constant(p.x_adv));
    tape.backward(terms.total);
    return std::make_pair(terms.total.value().item(), param_grads(tape, bs));
  };
  const auto [v1, g1] = run(live);
  const auto [v2, g2] = run(detached);
  EXPECT_EQ(v1, v2);
  EXPECT_NE(g1, g2);
}

TEST(LossSpec, PresetsValidate) {
  EXPECT_NO_THROW(LossSpec::cifar10().validate());
  EXPECT_NO_THROW(LossSpec::cifar100().validate());
  EXPECT_NO_THROW(LossSpec::tiny_imagenet().validate());
  const auto c10 = LossSpec::cifar10();
  EXPECT_EQ(c10.gamma1, 1);
  EXPECT_EQ(c10.gamma2, 0.1);
  EXPECT_EQ(c10.lambda1, 1);
  EXPECT_EQ(c10.lambda2, 0);
  EXPECT_EQ(c10.lambda3, 1);
  EXPECT_EQ(c10.tau_peer, 1);
  EXPECT_EQ(c10.tau_student, 5);
  EXPECT_EQ(LossSpec::cifar100().gamma2, 1);
  const auto tin = LossSpec::tiny_imagenet();
  EXPECT_EQ(tin.gamma2, 100);
  EXPECT_EQ(tin.lambda1, 35);
  EXPECT_EQ(tin.lambda2, 0.035);
  EXPECT_EQ(tin.lambda3, 20);
  EXPECT_EQ(tin.tau_student, 1);
}

TEST(LossSpec, InvalidSettingsRejected) {
  auto s = LossSpec::cifar10();
  s.tau_peer = 0;
  EXPECT_THROW(s.validate(), ParameterError);
  s = LossSpec::cifar10();
  s.gamma2 = -1;
  EXPECT_THROW(s.validate(), ParameterError);
  s = LossSpec::cifar10();
  s.lambda1 = 0;
  s.lambda2 = 0;
  EXPECT_THROW(s.validate(), ParameterError);
}

TEST(Combined, EqualsSumOfComponents) {
  const auto p = make_pair(13);
  Tape tape;
  const auto c = combined_loss(LossSpec::cifar10(), p.y, bind(tape, p.peer, false), bind(tape, p.student, false),
                               tape.constant(p.x_nat), tape.constant(p.x_adv));
  EXPECT_NEAR(c.total.value().item(), c.peer.total.value().item() + c.student.total.value().item(), 1e-12);
}

TEST(Combined, GradientsPartitionBitExactly) {
  const auto p = make_pair(14);
  const auto spec = LossSpec::cifar10();
  const auto combined = [&](Tape& t, const BoundModel& peer, const BoundModel& student) {
    return combined_loss(spec, p.y, peer, student, t.constant(p.x_nat), t.constant(p.x_adv)).total;
  };
  const auto peer_only = [&](Tape& t, const BoundModel& peer, const BoundModel& student) {
    return peer_loss(spec, p.y, peer, student, t.constant(p.x_adv)).total;
  };
  const auto student_only = [&](Tape& t, const BoundModel& peer, const BoundModel& student) {
    return student_loss(spec, p.y, peer, student, t.constant(p.x_nat), t.constant(p.x_adv)).total;
  };
  EXPECT_EQ(grads_of(p.peer, combined, p.student, true), grads_of(p.peer, peer_only, p.student, true));
  EXPECT_EQ(grads_of(p.student, combined, p.peer, false), grads_of(p.student, student_only, p.peer, false));
}

TEST(Combined, ZeroStudentCoefficientsGiveZeroStudentGradient) {
  const auto p = make_pair(15);
  LossSpec spec;
  spec.lambda1 = 0;
  spec.lambda2 = 0;
  spec.lambda3 = 0;
  Tape tape;
  const auto bp = bind(tape, p.peer, true);
  const auto bs = bind(tape, p.student, true);
  tape.backward(combined_loss(spec, p.y, bp, bs, tape.constant(p.x_nat), tape.constant(p.x_adv)).total);
  for (const auto& g : param_grads(tape, bs)) EXPECT_EQ(g, Tensor(g.shape()));
}

TEST(Trades, BetaZeroOrCleanInputsIsCrossEntropy) {
  const auto p = make_pair(16);
  Tape tape;
  const auto b = bind(tape, p.student, false);
  const auto xn = tape.constant(p.x_nat);
  const auto ce = cross_entropy(b.logits(xn), p.y).value().item();
  EXPECT_EQ(trades_objective(b, p.y, xn, tape.constant(p.x_adv), 0).value().item(), ce);
  EXPECT_NEAR(trades_objective(b, p.y, xn, xn, 6).value().item(), ce, 1e-15);
  EXPECT_THROW((void)trades_objective(b, p.y, xn, xn, -1), ParameterError);
}

TEST(Trades, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 17;; ++seed) {
    ASSERT_LT(seed, 120u) << "no instance clear of ReLU kinks";
    const auto p = make_pair(seed);
    Tape tape;
    const auto x = tape.variable(p.x_adv);
    tape.backward(trades_objective(bind(tape, p.student, false), p.y, tape.constant(p.x_nat), x));
    if (test::kink_margin(tape) < 1e-3) continue;
    const auto value_at = [&](const Tensor& x_adv) {
      Tape t;
      return trades_objective(bind(t, p.student, false), p.y, t.constant(p.x_nat), t.constant(x_adv)).value().item();
    };
    const auto analytic = tape.grad(x);
    const auto numeric = finite_diff_grad(value_at, p.x_adv, Real(1e-5));
    for (std::size_t i = 0; i < analytic.numel(); ++i) EXPECT_LT(test::rel_error(analytic[i], numeric[i]), 1e-4);
    return;
  }
}
