#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "paid/attacks.hpp"
#include "paid/dataset.hpp"
#include "paid/eval.hpp"
#include "paid/losses.hpp"
#include "paid/trainer.hpp"

namespace paid {

/// Flat run configuration read from `key = value` lines.
///
/// Relative paths are resolved against the directory of the config file.
/// Every key has a default, so an empty file is a valid config.
struct RunConfig {
  std::string run_id = "run";
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  Method method = Method::peeraid;

  std::string student_model = "mlp-s";
  std::string peer_model = "mlp-p";
  std::filesystem::path teacher_checkpoint;

  /// "synthetic" or "file".
  std::string data_source = "synthetic";
  SyntheticKind data_kind = SyntheticKind::gauss_blobs;
  std::size_t data_classes = 3;
  std::size_t data_n = 3000;
  std::size_t data_test_n = 1000;
  double data_noise = 0.08;
  std::uint64_t data_seed = 0;
  std::filesystem::path data_train;
  std::filesystem::path data_test;

  TrainConfig train;
  /// When > 0, every attack budget becomes this fraction of the synthetic
  /// class gap, with step size budget / 4.
  double epsilon_gap_fraction = 0;
  AttackConfig eval_attack = AttackConfig::pgd(20);
  int eval_mi_steps = 10;
  Real eval_mi_decay = Real{1};
  Real eval_cw_c = Real(0.1);
  int eval_cw_steps = 100;
  Real eval_cw_lr = Real(0.01);
  BatteryConfig battery;
  bool metrics_wall_clock = false;
};

/// Throws ConfigError on syntax errors, unknown or duplicate keys, bad values
/// and referenced files that do not exist. `base_dir` resolves relative paths.
[[nodiscard]] RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);
/// Every key, one per line, in a stable order.
[[nodiscard]] std::string serialize_run_config(const RunConfig& cfg);
/// All recognised keys.
[[nodiscard]] std::vector<std::string> run_config_keys();

struct RunData {
  Dataset train;
  Dataset test;
  /// Smallest distance between class centres (synthetic blobs only).
  std::optional<Real> class_gap;
};

/// Generates or loads the configured train/test splits.
[[nodiscard]] RunData prepare_data(const RunConfig& cfg);

/// Copy of `cfg` with every attack budget derived from the class gap when
/// epsilon_gap_fraction is set. Throws ConfigError when the gap is unknown.
[[nodiscard]] RunConfig resolve_budgets(const RunConfig& cfg, const RunData& data);

/// FGSM, PGD-k, MI-FGSM and CW-l2 built from the eval.* keys.
[[nodiscard]] std::vector<NamedAttack> eval_attacks(const RunConfig& cfg);

}  // namespace paid
