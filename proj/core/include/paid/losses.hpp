#pragma once

#include <span>

#include "paid/autodiff.hpp"
#include "paid/model.hpp"

namespace paid {

/// Probabilities are floored here before any logarithm.
inline constexpr Real kProbFloor = Real(1e-12);

/// Coefficients of the peer and student objectives.
///
/// Peer:    gamma1 * CE(y, P(x*)) + gamma2 * tau_peer^2 * KL(S^t(x*) || P^t(x*))
/// Student: lambda1 * CE(y, S(x*)) + lambda2 * tau_student^2 * KL(P^t(x*) || S^t(x*))
///          + lambda3 * tau_student^2 * KL(S^t(x) || S^t(x*))
struct LossSpec {
  double gamma1 = 1.0;
  double gamma2 = 0.1;
  double lambda1 = 1.0;
  double lambda2 = 0.0;
  double lambda3 = 1.0;
  double tau_peer = 1.0;
  double tau_student = 5.0;
  /// Stop gradients through S(x) in the student's third term.
  bool detach_clean_branch = false;

  /// Throws ParameterError on negative coefficients, non-positive
  /// temperatures, or lambda1 == lambda2 == 0.
  void validate() const;

  /// CIFAR-10 setting: 1, 0.1 / 1, 0, 1 / tau 1 and 5.
  static LossSpec cifar10() { return {}; }
  /// CIFAR-100 differs only in gamma2 = 1.
  static LossSpec cifar100() {
    LossSpec s;
    s.gamma2 = 1.0;
    return s;
  }
  /// TinyImageNet: 1, 100 / 35, 0.035, 20 / tau 1 and 1.
  static LossSpec tiny_imagenet() { return {1.0, 100.0, 35.0, 0.035, 20.0, 1.0, 1.0, false}; }
};

/// Batch mean of -log p_label under a tau = 1 softmax (log-probabilities
/// floored at log 1e-12). Throws ContractError for labels out of range.
[[nodiscard]] Var cross_entropy(Var logits, std::span<const int> labels);

/// Batch mean of sum_k p_k (log p_k - log q_k) from row log-probabilities.
/// Gradients flow into whichever argument requires them.
[[nodiscard]] Var kl_from_log_probs(Var target_log_probs, Var pred_log_probs);

/// tau^2 * KL(softmax(target/tau) || softmax(pred/tau)) from logits.
[[nodiscard]] Var tempered_kl(Var target_logits, Var pred_logits, Real temperature);

/// KL(p || q) for probability rows, batch mean. Throws ContractError when a row
/// does not sum to 1 within 1e-6 or holds negative entries.
[[nodiscard]] Real kl_div(const Tensor& target_prob, const Tensor& pred_prob);

/// KL(P(x_nat) || S(x_pert)), temperature 1. The peer term is a constant.
[[nodiscard]] Var inner_max_loss(const BoundModel& peer, const BoundModel& student, Var x_nat, Var x_pert);

/// A loss value with its weighted components, for logging.
struct LossTerms {
  Var total;
  Real ce = 0;   ///< unweighted cross-entropy
  Real kl = 0;   ///< unweighted, tau^2-scaled distillation KL
  Real reg = 0;  ///< unweighted, tau^2-scaled clean/adversarial KL (student only)
};

/// Peer objective from precomputed logits on x*; student logits are detached.
[[nodiscard]] LossTerms peer_loss_from_logits(const LossSpec& spec, std::span<const int> labels, Var peer_adv_logits,
                                              Var student_adv_logits);

/// Student objective from precomputed logits; peer logits are detached. The
/// third term back-propagates into both arguments unless
/// spec.detach_clean_branch is set.
[[nodiscard]] LossTerms student_loss_from_logits(const LossSpec& spec, std::span<const int> labels,
                                                 Var peer_adv_logits, Var student_adv_logits,
                                                 Var student_nat_logits);

[[nodiscard]] LossTerms peer_loss(const LossSpec& spec, std::span<const int> labels, const BoundModel& peer,
                                  const BoundModel& student, Var x_adv);
[[nodiscard]] LossTerms student_loss(const LossSpec& spec, std::span<const int> labels, const BoundModel& peer,
                                     const BoundModel& student, Var x_nat, Var x_adv);

struct CombinedLoss {
  Var total;
  LossTerms peer;
  LossTerms student;
};

/// peer_loss + student_loss sharing one forward pass per network and input.
[[nodiscard]] CombinedLoss combined_loss(const LossSpec& spec, std::span<const int> labels, const BoundModel& peer,
                                         const BoundModel& student, Var x_nat, Var x_adv);

/// CE(y, S(x)) + beta * KL(S(x) || S(x*)), both branches differentiable.
/// Throws ParameterError when beta < 0.
[[nodiscard]] Var trades_objective(const BoundModel& model, std::span<const int> labels, Var x_nat, Var x_adv,
                                   Real beta = Real{6});

}  // namespace paid
