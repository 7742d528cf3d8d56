#include <benchmark/benchmark.h>

#include <random>

#include "paid/attacks.hpp"
#include "paid/autodiff.hpp"
#include "paid/dataset.hpp"
#include "paid/losses.hpp"
#include "paid/model.hpp"
#include "paid/optim.hpp"

using namespace paid;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : t.values()) v = static_cast<Real>(u(rng));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({32, 8, side, side}, 3), w = random_tensor({16, 8, 3, 3}, 4);
  for (auto _ : state) {
    Tape tape;
    const Var wv = tape.variable(w);
    tape.backward(sum(conv2d(tape.constant(x), wv)));
    benchmark::DoNotOptimize(tape.grad(wv));
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16);

void BM_PgdStep(benchmark::State& state) {
  const auto model = make_model(mlp_s(2, 3), 5);
  const auto x = random_tensor({128, 2}, 6);
  const std::vector<int> labels(128, 1);
  const auto cfg = AttackConfig::pgd(1, Real(0.05), Real(0.0125));
  for (auto _ : state) benchmark::DoNotOptimize(pgd(model, x, labels, cfg).x_adv);
}
BENCHMARK(BM_PgdStep);

void BM_PeerAiDTrainingStep(benchmark::State& state) {
  const auto data = gen_synthetic(SyntheticKind::gauss_blobs, 3, 128, 0.08, 7).data;
  auto student = make_model(mlp_s(2, 3), 8);
  auto peer = make_model(mlp_p(2, 3), 9);
  auto s_state = OptimState::zeros_like(student.params);
  auto p_state = OptimState::zeros_like(peer.params);
  const LossSpec spec;
  for (auto _ : state) {
    auto cfg = AttackConfig::pgd(10, Real(0.05), Real(0.0125));
    cfg.objective = AttackObjective::kl_to_reference;
    cfg.reference = &peer;
    const auto x_adv = pgd(student, data.inputs, data.labels, cfg).x_adv;
    Tape tape;
    const auto pb = bind(tape, peer, true), sb = bind(tape, student, true);
    const auto loss =
        combined_loss(spec, data.labels, pb, sb, tape.constant(data.inputs), tape.constant(x_adv));
    tape.backward(loss.total);
    const auto pg = param_grads(tape, pb), sg = param_grads(tape, sb);
    sgd_step(peer.params, pg, p_state, Real(0.1), Real(0.9), Real(2e-4));
    sgd_step(student.params, sg, s_state, Real(0.1), Real(0.9), Real(2e-4));
  }
}
BENCHMARK(BM_PeerAiDTrainingStep);

}  // namespace

BENCHMARK_MAIN();
