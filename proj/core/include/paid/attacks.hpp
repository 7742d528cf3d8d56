#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "paid/model.hpp"

namespace paid {

enum class AttackObjective : std::uint8_t {
  /// Cross-entropy against the true label.
  ce_to_label,
  /// KL(reference(x_nat) || model(x_adv)), the reference prediction held fixed.
  kl_to_reference,
  /// Carlini-Wagner margin max_{j != y} z_j - z_y.
  margin_cw,
};

[[nodiscard]] std::string_view to_string(AttackObjective objective) noexcept;
[[nodiscard]] AttackObjective parse_objective(std::string_view text);

/// Parameters shared by the gradient attacks. Pixel units: the data domain is
/// [0, 1] unless clamp_domain is false.
struct AttackConfig {
  Real epsilon = Real(8.0 / 255.0);
  Real step_size = Real(2.0 / 255.0);
  int steps = 10;
  AttackObjective objective = AttackObjective::ce_to_label;
  /// Model whose natural-input prediction is the KL target; required for
  /// kl_to_reference and never modified.
  const Model* reference = nullptr;
  bool random_start = false;
  std::uint64_t seed = 0;
  /// Return the iterate with the highest objective instead of the last one.
  bool best_of_trace = false;
  /// MI-FGSM decay.
  Real momentum_decay = Real{1};
  /// CW-l2 balance constant.
  Real c_balance = Real(0.1);
  /// CW margin floor kappa.
  Real cw_kappa = Real{0};
  bool clamp_domain = true;

  /// Unbounded l-infinity budget (ball constraint disabled).
  [[nodiscard]] bool unbounded() const noexcept { return epsilon == std::numeric_limits<Real>::infinity(); }

  /// Throws ParameterError for epsilon < 0, steps < 1, step_size <= 0, a
  /// missing reference model, negative decay or non-positive c.
  void validate() const;

  static AttackConfig fgsm(Real epsilon = Real(8.0 / 255.0));
  static AttackConfig pgd(int steps = 20, Real epsilon = Real(8.0 / 255.0), Real step_size = Real(2.0 / 255.0));
  static AttackConfig mi_fgsm(int steps = 10, Real epsilon = Real(8.0 / 255.0), Real decay = Real{1});
  /// 100 descent steps, learning rate 0.01, c = 0.1.
  static AttackConfig cw_l2(Real c = Real(0.1));
};

struct AttackResult {
  Tensor x_adv;
  /// Batch-mean objective at each gradient evaluation.
  std::vector<Real> loss_trace;
  /// 1 where the model misclassifies x_adv.
  std::vector<std::uint8_t> success_mask;

  [[nodiscard]] double success_rate() const;
};

/// Called with (iteration, iterate) after every projection; iteration 0 is
/// the starting point.
using IterateObserver = std::function<void(int, const Tensor&)>;

/// Batch-mean attack objective of `model` at `x` and its gradient w.r.t. x.
struct ObjectiveEval {
  Real value = 0;
  Tensor grad;
};
[[nodiscard]] ObjectiveEval attack_objective(const Model& model, const Tensor& x_nat, const Tensor& x,
                                             std::span<const int> labels, const AttackConfig& cfg);

/// x + epsilon * sign(grad CE), clamped to the domain. steps is ignored.
[[nodiscard]] AttackResult fgsm(const Model& model, const Tensor& x, std::span<const int> labels,
                                const AttackConfig& cfg, const IterateObserver& observer = {});

/// Projected signed-gradient ascent: x <- clip_domain(clip_ball(x + a sign(g))).
[[nodiscard]] AttackResult pgd(const Model& model, const Tensor& x, std::span<const int> labels,
                               const AttackConfig& cfg, const IterateObserver& observer = {});

/// Momentum iterative FGSM: g <- mu g + grad / ||grad||_1 per sample, then a
/// signed step with the same projection as pgd.
[[nodiscard]] AttackResult mi_fgsm(const Model& model, const Tensor& x, std::span<const int> labels,
                                   const AttackConfig& cfg, const IterateObserver& observer = {});

/// Penalty-form CW-l2: minimize ||d||^2 + c * max(z_y - max_{j!=y} z_j, -kappa)
/// per sample by gradient descent (cfg.steps, cfg.step_size as learning rate),
/// keeping x + d in the domain.
[[nodiscard]] AttackResult cw_l2(const Model& model, const Tensor& x, std::span<const int> labels,
                                 const AttackConfig& cfg, const IterateObserver& observer = {});

/// PGD with an infinite budget; only the domain clamp remains.
[[nodiscard]] AttackResult unbounded_pgd(const Model& model, const Tensor& x, std::span<const int> labels, int steps,
                                         Real step_size = Real(2.0 / 255.0));

enum class AttackKind : std::uint8_t { fgsm, pgd, mi_fgsm, cw_l2, unbounded };

[[nodiscard]] std::string_view to_string(AttackKind kind) noexcept;
[[nodiscard]] AttackKind parse_attack_kind(std::string_view text);

/// Dispatches to the attack named by `kind`.
[[nodiscard]] AttackResult run_attack(AttackKind kind, const Model& model, const Tensor& x,
                                      std::span<const int> labels, const AttackConfig& cfg,
                                      const IterateObserver& observer = {});

}  // namespace paid
