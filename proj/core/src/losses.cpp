#include "paid/losses.hpp"

#include <cmath>

#include "paid/error.hpp"

namespace paid {

namespace {

const Real kLogFloor = std::log(kProbFloor);

void require_non_negative(double v, const char* name) {
  if (!(v >= 0) || !std::isfinite(v)) throw ParameterError(std::string("loss spec: ") + name + " must be >= 0");
}

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw ContractError("loss: unbound variable");
  return *v.tape;
}

}  // namespace

void LossSpec::validate() const {
  require_non_negative(gamma1, "gamma1");
  require_non_negative(gamma2, "gamma2");
  require_non_negative(lambda1, "lambda1");
  require_non_negative(lambda2, "lambda2");
  require_non_negative(lambda3, "lambda3");
  if (!(tau_peer > 0) || !(tau_student > 0)) throw ParameterError("loss spec: temperatures must be > 0");
  if (!(lambda1 > 0) && !(lambda2 > 0)) {
    throw ParameterError("loss spec: lambda1 or lambda2 must be positive so the student sees a label signal");
  }
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  auto& tape = tape_of(logits);
  const auto& shape = logits.shape();
  if (shape.size() != 2 || shape[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(shape) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const auto n = shape[0], k = shape[1];
  Tensor pick({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) + ")");
    }
    pick[i * k + static_cast<std::size_t>(labels[i])] = Real{-1} / static_cast<Real>(n);
  }
  auto logp = clamp_min(log_softmax(logits, 1), kLogFloor);
  return sum(mul(logp, tape.constant(std::move(pick))));
}

Var kl_from_log_probs(Var target_log_probs, Var pred_log_probs) {
  const Shape shape = target_log_probs.shape();
  if (shape.size() != 2 || shape != pred_log_probs.shape()) {
    throw ShapeError("kl: " + to_string(shape) + " vs " + to_string(pred_log_probs.shape()));
  }
  auto logp = clamp_min(target_log_probs, kLogFloor);
  auto logq = clamp_min(pred_log_probs, kLogFloor);
  auto p = exp(target_log_probs);
  return scale(sum(mul(p, sub(logp, logq))), Real{1} / static_cast<Real>(shape[0]));
}

Var tempered_kl(Var target_logits, Var pred_logits, Real temperature) {
  auto kl = kl_from_log_probs(log_softmax(target_logits, temperature), log_softmax(pred_logits, temperature));
  return scale(kl, temperature * temperature);
}

Real kl_div(const Tensor& target_prob, const Tensor& pred_prob) {
  if (target_prob.rank() != 2 || target_prob.shape() != pred_prob.shape() || target_prob.extent(0) == 0) {
    throw ShapeError("kl_div: " + to_string(target_prob.shape()) + " vs " + to_string(pred_prob.shape()));
  }
  const auto rows = target_prob.extent(0), cols = target_prob.extent(1);
  for (const Tensor* t : {&target_prob, &pred_prob}) {
    for (std::size_t r = 0; r < rows; ++r) {
      Real total = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        const Real v = (*t)[r * cols + c];
        if (!(v >= 0)) throw ContractError("kl_div: negative or NaN probability in row " + std::to_string(r));
        total += v;
      }
      if (std::abs(total - 1) > 1e-6) {
        throw ContractError("kl_div: row " + std::to_string(r) + " sums to " + std::to_string(total));
      }
    }
  }
  Real acc = 0;
  for (std::size_t i = 0; i < target_prob.numel(); ++i) {
    const Real p = target_prob[i];
    if (p == 0) continue;
    acc += p * (std::log(std::max(p, kProbFloor)) - std::log(std::max(pred_prob[i], kProbFloor)));
  }
  return acc / static_cast<Real>(rows);
}

Var inner_max_loss(const BoundModel& peer, const BoundModel& student, Var x_nat, Var x_pert) {
  auto& tape = tape_of(x_pert);
  auto target = tape.detach(log_softmax(peer.logits(x_nat), 1));
  return kl_from_log_probs(target, log_softmax(student.logits(x_pert), 1));
}

LossTerms peer_loss_from_logits(const LossSpec& spec, std::span<const int> labels, Var peer_adv_logits,
                                Var student_adv_logits) {
  auto& tape = tape_of(peer_adv_logits);
  auto ce = cross_entropy(peer_adv_logits, labels);
  auto kl = tempered_kl(tape.detach(student_adv_logits), peer_adv_logits, static_cast<Real>(spec.tau_peer));
  LossTerms out;
  out.ce = ce.value().item();
  out.kl = kl.value().item();
  out.total = add(scale(ce, static_cast<Real>(spec.gamma1)), scale(kl, static_cast<Real>(spec.gamma2)));
  return out;
}

LossTerms student_loss_from_logits(const LossSpec& spec, std::span<const int> labels, Var peer_adv_logits,
                                   Var student_adv_logits, Var student_nat_logits) {
  auto& tape = tape_of(student_adv_logits);
  const auto tau = static_cast<Real>(spec.tau_student);
  auto ce = cross_entropy(student_adv_logits, labels);
  auto kl = tempered_kl(tape.detach(peer_adv_logits), student_adv_logits, tau);
  auto clean = spec.detach_clean_branch ? tape.detach(student_nat_logits) : student_nat_logits;
  auto reg = tempered_kl(clean, student_adv_logits, tau);
  LossTerms out;
  out.ce = ce.value().item();
  out.kl = kl.value().item();
  out.reg = reg.value().item();
  out.total = add(add(scale(ce, static_cast<Real>(spec.lambda1)), scale(kl, static_cast<Real>(spec.lambda2))),
                  scale(reg, static_cast<Real>(spec.lambda3)));
  return out;
}

LossTerms peer_loss(const LossSpec& spec, std::span<const int> labels, const BoundModel& peer,
                    const BoundModel& student, Var x_adv) {
  // Record in the same order as combined_loss so gradients accumulate alike.
  auto peer_adv = peer.logits(x_adv);
  auto student_adv = student.logits(x_adv);
  return peer_loss_from_logits(spec, labels, peer_adv, student_adv);
}

LossTerms student_loss(const LossSpec& spec, std::span<const int> labels, const BoundModel& peer,
                       const BoundModel& student, Var x_nat, Var x_adv) {
  auto peer_adv = peer.logits(x_adv);
  auto student_adv = student.logits(x_adv);
  auto student_nat = student.logits(x_nat);
  return student_loss_from_logits(spec, labels, peer_adv, student_adv, student_nat);
}

CombinedLoss combined_loss(const LossSpec& spec, std::span<const int> labels, const BoundModel& peer,
                           const BoundModel& student, Var x_nat, Var x_adv) {
  auto peer_adv = peer.logits(x_adv);
  auto student_adv = student.logits(x_adv);
  auto student_nat = student.logits(x_nat);
  CombinedLoss out;
  out.peer = peer_loss_from_logits(spec, labels, peer_adv, student_adv);
  out.student = student_loss_from_logits(spec, labels, peer_adv, student_adv, student_nat);
  out.total = add(out.peer.total, out.student.total);
  return out;
}

Var trades_objective(const BoundModel& model, std::span<const int> labels, Var x_nat, Var x_adv, Real beta) {
  if (!(beta >= 0)) throw ParameterError("trades: beta must be >= 0");
  auto nat = model.logits(x_nat);
  auto adv = model.logits(x_adv);
  auto kl = kl_from_log_probs(log_softmax(nat, 1), log_softmax(adv, 1));
  return add(cross_entropy(nat, labels), scale(kl, beta));
}

}  // namespace paid
