#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paid/attacks.hpp"
#include "paid/dataset.hpp"
#include "paid/model.hpp"
#include "paid/trainer.hpp"

namespace paid {

inline constexpr std::size_t kEvalBatch = 256;

/// Fraction of samples classified correctly.
[[nodiscard]] double accuracy(const Model& model, const Dataset& data, std::size_t batch = kEvalBatch);
/// Accuracy on labels for precomputed inputs (same row order as `labels`).
[[nodiscard]] double accuracy_on(const Model& model, const Tensor& inputs, std::span<const int> labels,
                                 std::size_t batch = kEvalBatch);

/// Adversarial inputs for the whole dataset, built batch by batch. The attack
/// seed is offset by the batch index so random starts differ across batches.
[[nodiscard]] Tensor attack_dataset(AttackKind kind, const Model& model, const Dataset& data,
                                    const AttackConfig& cfg, std::size_t batch = kEvalBatch);
/// Accuracy of `model` on its own adversarial examples.
[[nodiscard]] double robust_accuracy(const Model& model, const Dataset& data, AttackKind kind,
                                     const AttackConfig& cfg, std::size_t batch = kEvalBatch);

struct NamedAttack {
  std::string name;
  AttackKind kind = AttackKind::pgd;
  AttackConfig cfg;
};

/// FGSM, PGD-20 and MI-FGSM at epsilon 8/255, CW-l2 with c = 0.1.
[[nodiscard]] std::vector<NamedAttack> standard_attacks();

struct RobustnessReport {
  std::size_t samples = 0;
  double clean = 0;
  /// Accuracy per attack name, in the order the attacks were given.
  std::vector<std::pair<std::string, double>> attacks;

  [[nodiscard]] std::optional<double> at(std::string_view attack) const;
};

[[nodiscard]] RobustnessReport robustness_report(const Model& model, const Dataset& data,
                                                 std::span<const NamedAttack> attacks);

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

/// matrix[d][s]: accuracy of defender d on adversarial examples crafted
/// against source s. Each source's examples are generated once and reused for
/// every defender.
struct CrossRobustness {
  std::vector<std::string> names;
  std::vector<std::vector<double>> matrix;
  /// Fingerprint of each source's adversarial batch.
  std::vector<std::uint64_t> source_fingerprints;

  [[nodiscard]] double at(std::string_view defender, std::string_view source) const;
};

[[nodiscard]] CrossRobustness cross_robustness(std::span<const NamedModel> models, const Dataset& data,
                                               AttackKind kind, const AttackConfig& cfg);

struct CosineStat {
  double mean = 0;
  std::size_t used = 0;
  /// Pairs skipped because a feature vector had zero norm.
  std::size_t skipped = 0;
};

/// Mean cosine similarity between penultimate features of `a` and `b`, row by
/// row, over all samples.
[[nodiscard]] CosineStat penultimate_cosine(const Model& model, const Tensor& a, const Tensor& b);

struct BatteryConfig {
  /// Iteration check: |acc(pgd_base) - acc(pgd_long)|.
  AttackConfig pgd_base = AttackConfig::pgd(10);
  AttackConfig pgd_long = AttackConfig::pgd(200);
  /// White-box reference for the FGSM and transfer checks.
  AttackConfig pgd20 = AttackConfig::pgd(20);
  AttackConfig fgsm = AttackConfig::fgsm();
  int unbounded_steps = 200;
  Real unbounded_step_size = Real(2.0 / 255.0);
  /// Maximum |acc(pgd_base) - acc(pgd_long)|, in accuracy fraction.
  double max_iteration_gap = 0.03;
  /// Maximum accuracy under the unbounded attack.
  double max_unbounded_accuracy = 0.01;
};

struct BatteryCheck {
  std::string name;
  /// Empty when the check could not run (no surrogate for the transfer check).
  std::optional<bool> passed;
  std::map<std::string, double> values;
  std::string detail;
};

struct BatteryReport {
  std::vector<BatteryCheck> checks;

  /// True when every check that ran passed.
  [[nodiscard]] bool passed() const;
  [[nodiscard]] const BatteryCheck& at(std::string_view name) const;
};

/// Gradient-masking checks: long-PGD gap, unbounded attack, FGSM vs PGD-20,
/// and transfer vs white-box robustness (needs at least one surrogate).
[[nodiscard]] BatteryReport obfuscation_battery(const Model& model, const Dataset& data, const BatteryConfig& cfg,
                                                std::span<const NamedModel> surrogates = {});

struct TransferResult {
  std::string surrogate;
  double accuracy = 0;
};

/// Accuracy of `target` on adversarial examples crafted against each surrogate.
[[nodiscard]] std::vector<TransferResult> transfer_attack_eval(const Model& target,
                                                               std::span<const NamedModel> surrogates,
                                                               const Dataset& data, AttackKind kind,
                                                               const AttackConfig& cfg);

struct OverfitGap {
  int best_epoch = -1;
  double best = 0;
  double final = 0;
  /// best - final.
  double diff = 0;
};

/// Per-metric value at the best-checkpoint epoch (highest pgd10_acc, latest
/// on ties) against the last epoch. Throws ContractError when `logs` is empty
/// or a metric is missing.
[[nodiscard]] std::map<std::string, OverfitGap> robust_overfit_gap(std::span<const EpochLog> logs,
                                                                   std::span<const std::string> metrics);

struct SaliencyMaps {
  /// [n, h, w] in [0, 1].
  Tensor maps;
  /// 1 where the clipped gradient had zero variance; that map is all zeros.
  std::vector<std::uint8_t> degenerate;
};

/// |grad_x CE| per image: clip to +-3 standard deviations of the map,
/// channel-sum of magnitudes, min-max normalise. Inputs must be [n, c, h, w].
[[nodiscard]] SaliencyMaps saliency_map(const Model& model, const Tensor& x, std::span<const int> labels);

/// Cross-entropy on a (2*radius_steps+1)^2 grid of weight perturbations
/// theta + a*d1 + b*d2 with a, b in [-radius, radius]. Directions are random
/// per seed and scaled per tensor to the norm of the matching parameter.
[[nodiscard]] Tensor loss_grid(const Model& model, const Dataset& data, Real radius, int radius_steps,
                               std::uint64_t seed);

}  // namespace paid
