#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "paid/attacks.hpp"
#include "paid/dataset.hpp"
#include "paid/losses.hpp"
#include "paid/model.hpp"
#include "paid/optim.hpp"

namespace paid {

enum class Method : std::uint8_t { natural, pgd_at, trades, fixed_teacher_ad, peeraid };

[[nodiscard]] std::string_view to_string(Method method) noexcept;
[[nodiscard]] Method parse_method(std::string_view text);

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 128;
  Real lr_initial = Real(0.1);
  std::vector<int> lr_decay_epochs{50, 80};
  Real lr_decay_factor = Real(0.1);
  Real momentum = Real(0.9);
  Real weight_decay = Real(2e-4);
  /// Training-time inner maximisation. The objective and reference model are
  /// chosen by the method; epsilon, step size, steps and random start are
  /// taken from here.
  AttackConfig attack = [] {
    auto a = AttackConfig::pgd(10);
    a.random_start = true;
    return a;
  }();
  /// Checkpoint-selection attack (PGD-10 on the validation split).
  AttackConfig val_attack = AttackConfig::pgd(10);
  LossSpec loss;
  Real trades_beta = Real{6};
  bool swa_enabled = false;
  /// First epoch absorbed into the SWA average; negative means the first
  /// learning-rate decay epoch.
  int swa_start_epoch = -1;
  std::uint64_t seed = 0;
  Method method = Method::peeraid;
  /// Fraction of the training data held out for checkpoint selection.
  double val_fraction = 0.1;
  /// Select checkpoints on the test split instead of a held-out split.
  bool validate_on_test = false;
  /// Log peer/student cross robustness on the validation split every epoch
  /// (PeerAiD only).
  bool log_cross_robustness = false;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  [[nodiscard]] int effective_swa_start() const;
};

struct EpochLog {
  int epoch = 0;
  Real lr = 0;
  /// Epoch-mean training losses, e.g. "loss", "peer_ce", "student_reg".
  std::map<std::string, double> train;
  /// Validation accuracy of the deployed student (the SWA average once active).
  double clean_acc = 0;
  double pgd10_acc = 0;
  bool swa_active = false;
  /// Peer metrics and cross robustness ("rob_peer_on_student", ...).
  std::map<std::string, double> extra;

  /// Named metric lookup: "clean_acc", "pgd10_acc" or an `extra` key.
  [[nodiscard]] std::optional<double> metric(std::string_view name) const;
};

struct Checkpoint {
  int epoch = -1;
  Model student;
  std::optional<Model> peer;
  double pgd10_acc = 0;
};

struct TrainResult {
  /// Final deployed student (SWA average when enabled).
  Model student;
  std::optional<Model> peer;
  std::vector<EpochLog> logs;
  /// Epoch with the highest validation PGD-10 accuracy (latest on ties).
  Checkpoint best;
};

/// Per-batch trace of what each network was trained on.
struct BatchTrace {
  int epoch = 0;
  std::size_t batch = 0;
  std::uint64_t student_input = 0;
  std::uint64_t peer_input = 0;
  double loss = 0;
};

struct TrainHooks {
  /// May add entries to `log.extra` (e.g. test metrics) before it is stored.
  std::function<void(EpochLog& log, const Model& student, const Model* peer)> on_epoch;
  std::function<void(const BatchTrace&)> on_batch;
};

struct TrainInputs {
  const Dataset* train = nullptr;
  /// Required when cfg.validate_on_test is set.
  const Dataset* test = nullptr;
};

[[nodiscard]] TrainResult train_natural(const ModelSpec& spec, TrainInputs data, const TrainConfig& cfg,
                                        const TrainHooks& hooks = {});
[[nodiscard]] TrainResult train_pgd_at(const ModelSpec& spec, TrainInputs data, const TrainConfig& cfg,
                                       const TrainHooks& hooks = {});
[[nodiscard]] TrainResult train_trades(const ModelSpec& spec, TrainInputs data, const TrainConfig& cfg,
                                       const TrainHooks& hooks = {});
/// Student objective with the frozen teacher in place of the peer; the inner
/// maximisation uses KL to the teacher's natural prediction.
[[nodiscard]] TrainResult train_fixed_teacher_ad(const ModelSpec& spec, const Model& teacher, TrainInputs data,
                                                 const TrainConfig& cfg, const TrainHooks& hooks = {});
/// Joint peer/student training on the student's adversarial examples.
[[nodiscard]] TrainResult train_peeraid(const ModelSpec& student_spec, const ModelSpec& peer_spec, TrainInputs data,
                                        const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace paid
