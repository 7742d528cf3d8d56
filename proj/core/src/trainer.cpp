#include "paid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "paid/autodiff.hpp"
#include "paid/error.hpp"
#include "paid/eval.hpp"

namespace paid {

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::natural: return "natural";
    case Method::pgd_at: return "pgd-at";
    case Method::trades: return "trades";
    case Method::fixed_teacher_ad: return "fixed-teacher-ad";
    case Method::peeraid: return "peeraid";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (auto m : {Method::natural, Method::pgd_at, Method::trades, Method::fixed_teacher_ad, Method::peeraid}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_initial > 0)) throw ConfigError("lr must be > 0");
  if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) throw ConfigError("lr_decay_factor must be in (0, 1]");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (lr_decay_epochs[i] < 1 || lr_decay_epochs[i] >= epochs) {
      throw ConfigError("lr_decay_epochs entries must lie in [1, epochs)");
    }
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) {
      throw ConfigError("lr_decay_epochs must be strictly increasing");
    }
  }
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(trades_beta >= 0)) throw ConfigError("trades_beta must be >= 0");
  if (!(val_fraction > 0 && val_fraction < 1) && !validate_on_test) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  if (swa_enabled && effective_swa_start() >= epochs) {
    throw ConfigError("swa start epoch " + std::to_string(effective_swa_start()) + " is past the last epoch");
  }
  try {
    auto a = attack;
    a.objective = AttackObjective::ce_to_label;
    a.validate();
    val_attack.validate();
    loss.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

int TrainConfig::effective_swa_start() const {
  if (swa_start_epoch >= 0) return swa_start_epoch;
  return lr_decay_epochs.empty() ? 0 : lr_decay_epochs.front();
}

std::optional<double> EpochLog::metric(std::string_view name) const {
  if (name == "clean_acc") return clean_acc;
  if (name == "pgd10_acc") return pgd10_acc;
  if (auto it = extra.find(std::string(name)); it != extra.end()) return it->second;
  return std::nullopt;
}

namespace {

constexpr double kDivergenceLimit = 1e6;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kStudentInit, kPeerInit, kSplit, kShuffle, kAttack };

struct Batch {
  Tensor x;
  std::vector<int> y;
};

struct StepOut {
  double loss = 0;
  std::map<std::string, double> terms;
  std::uint64_t student_input = 0;
  std::uint64_t peer_input = 0;
};

class Loop {
 public:
  Loop(const TrainConfig& cfg, Model student, std::optional<Model> peer, const Model* teacher)
      : cfg_(cfg), student_(std::move(student)), peer_(std::move(peer)), teacher_(teacher) {}

  TrainResult run(TrainInputs data, const TrainHooks& hooks) {
    cfg_.validate();
    if (data.train == nullptr) throw ContractError("train: no training data");
    data.train->validate();
    check_compatible(student_.spec, *data.train);
    if (peer_) check_compatible(peer_->spec, *data.train);
    if (teacher_) check_compatible(teacher_->spec, *data.train);

    Dataset train_set;
    Dataset val_set;
    if (cfg_.validate_on_test) {
      if (data.test == nullptr) throw ConfigError("validate_on_test requires a test split");
      train_set = *data.train;
      val_set = *data.test;
    } else {
      std::tie(train_set, val_set) = split_dataset(*data.train, cfg_.val_fraction, derive_seed(cfg_.seed, kSplit));
      if (val_set.size() == 0 || train_set.size() == 0) {
        throw ConfigError("validation split leaves an empty part; adjust val_fraction");
      }
      val_set.split = Split::val;
    }

    TrainResult result;
    std::mt19937_64 shuffle_rng(derive_seed(cfg_.seed, kShuffle));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const Real lr = lr_at_epoch(cfg_.lr_initial, cfg_.lr_decay_epochs, cfg_.lr_decay_factor, epoch);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
      }

      EpochLog log;
      log.epoch = epoch;
      log.lr = lr;
      double seen = 0;
      std::size_t batch_index = 0;
      for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size, ++batch_index) {
        const auto end = std::min(order.size(), begin + cfg_.batch_size);
        std::span<const std::size_t> rows(order.data() + begin, end - begin);
        Batch batch{train_set.inputs.gather_rows(rows), {}};
        batch.y.reserve(rows.size());
        for (auto r : rows) batch.y.push_back(train_set.labels[r]);

        const auto attack_seed = derive_seed(cfg_.seed, kAttack + (static_cast<std::uint64_t>(epoch) << 32) +
                                                            batch_index);
        StepOut out = step(batch, lr, attack_seed);
        if (!std::isfinite(out.loss) || out.loss > kDivergenceLimit) {
          std::ostringstream msg;
          msg << to_string(cfg_.method) << " diverged at epoch " << epoch << " batch " << batch_index
              << ": loss " << out.loss;
          throw DivergenceError(msg.str());
        }
        const auto weight = static_cast<double>(rows.size());
        seen += weight;
        log.train["loss"] += out.loss * weight;
        for (const auto& [k, v] : out.terms) log.train[k] += v * weight;
        if (hooks.on_batch) {
          hooks.on_batch(BatchTrace{epoch, batch_index, out.student_input, out.peer_input, out.loss});
        }
      }
      for (auto& [k, v] : log.train) v /= seen;

      if (cfg_.swa_enabled && epoch >= cfg_.effective_swa_start()) swa_.update(student_.params);
      log.swa_active = swa_.count() > 0;
      const Model deployed = deployed_student();

      log.clean_acc = accuracy(deployed, val_set);
      log.pgd10_acc = robust_accuracy(deployed, val_set, AttackKind::pgd, cfg_.val_attack);
      if (peer_) {
        log.extra["peer_clean_acc"] = accuracy(*peer_, val_set);
        if (cfg_.log_cross_robustness) {
          auto ce = cfg_.val_attack;
          ce.objective = AttackObjective::ce_to_label;
          const NamedModel models[] = {{"student", &deployed}, {"peer", &*peer_}};
          const auto cross = cross_robustness(models, val_set, AttackKind::pgd, ce);
          log.extra["rob_peer_on_student"] = cross.at("peer", "student");
          log.extra["rob_peer_on_peer"] = cross.at("peer", "peer");
          log.extra["rob_student_on_peer"] = cross.at("student", "peer");
        }
      }
      if (hooks.on_epoch) hooks.on_epoch(log, deployed, peer_ ? &*peer_ : nullptr);

      if (result.best.epoch < 0 || log.pgd10_acc >= result.best.pgd10_acc) {
        result.best = Checkpoint{epoch, deployed, peer_, log.pgd10_acc};
      }
      result.logs.push_back(std::move(log));
    }

    result.student = deployed_student();
    result.peer = peer_;
    return result;
  }

 private:
  static void check_compatible(const ModelSpec& spec, const Dataset& data) {
    if (spec.input_shape != data.sample_shape()) {
      throw ShapeError("model input " + to_string(spec.input_shape) + " does not match data samples " +
                       to_string(data.sample_shape()));
    }
    if (spec.class_count != data.classes) {
      throw ShapeError("model has " + std::to_string(spec.class_count) + " classes, data has " +
                       std::to_string(data.classes));
    }
  }

  [[nodiscard]] Model deployed_student() const {
    if (swa_.count() == 0) return student_;
    return Model{student_.spec, swa_.finalize()};
  }

  [[nodiscard]] AttackConfig inner_attack(AttackObjective objective, const Model* reference,
                                          std::uint64_t seed) const {
    auto a = cfg_.attack;
    a.objective = objective;
    a.reference = reference;
    a.seed = seed;
    return a;
  }

  static void apply(Tape& tape, const BoundModel& bound, Model& model, OptimState& state, Real lr,
                    const TrainConfig& cfg) {
    const auto grads = param_grads(tape, bound);
    sgd_step(model.params, grads, state, lr, cfg.momentum, cfg.weight_decay);
  }

  StepOut step(const Batch& b, Real lr, std::uint64_t attack_seed) {
    StepOut out;
    Tape tape;
    const Var x = tape.constant(b.x);
    switch (cfg_.method) {
      case Method::natural: {
        const auto s = bind(tape, student_, true);
        const Var loss = cross_entropy(s.logits(x), b.y);
        tape.backward(loss);
        out.loss = loss.value().item();
        out.student_input = fingerprint(b.x);
        apply(tape, s, student_, student_opt_, lr, cfg_);
        break;
      }
      case Method::pgd_at: {
        const auto x_adv =
            pgd(student_, b.x, b.y, inner_attack(AttackObjective::ce_to_label, nullptr, attack_seed)).x_adv;
        const auto s = bind(tape, student_, true);
        const Var loss = cross_entropy(s.logits(tape.constant(x_adv)), b.y);
        tape.backward(loss);
        out.loss = loss.value().item();
        out.student_input = fingerprint(x_adv);
        apply(tape, s, student_, student_opt_, lr, cfg_);
        break;
      }
      case Method::trades: {
        const auto x_adv =
            pgd(student_, b.x, b.y, inner_attack(AttackObjective::kl_to_reference, &student_, attack_seed)).x_adv;
        const auto s = bind(tape, student_, true);
        const Var loss = trades_objective(s, b.y, x, tape.constant(x_adv), cfg_.trades_beta);
        tape.backward(loss);
        out.loss = loss.value().item();
        out.student_input = fingerprint(x_adv);
        apply(tape, s, student_, student_opt_, lr, cfg_);
        break;
      }
      case Method::fixed_teacher_ad: {
        const auto x_adv =
            pgd(student_, b.x, b.y, inner_attack(AttackObjective::kl_to_reference, teacher_, attack_seed)).x_adv;
        const auto t = bind(tape, *teacher_, false);
        const auto s = bind(tape, student_, true);
        const Var xa = tape.constant(x_adv);
        const Var teacher_adv = t.logits(xa);
        const Var student_adv = s.logits(xa);
        const auto terms = student_loss_from_logits(cfg_.loss, b.y, teacher_adv, student_adv, s.logits(x));
        tape.backward(terms.total);
        out.loss = terms.total.value().item();
        out.terms = {{"student_ce", terms.ce}, {"student_kl", terms.kl}, {"student_reg", terms.reg}};
        out.student_input = fingerprint(xa.value());
        apply(tape, s, student_, student_opt_, lr, cfg_);
        break;
      }
      case Method::peeraid: {
        const auto x_adv =
            pgd(student_, b.x, b.y, inner_attack(AttackObjective::kl_to_reference, &*peer_, attack_seed)).x_adv;
        const auto p = bind(tape, *peer_, true);
        const auto s = bind(tape, student_, true);
        const Var xa = tape.constant(x_adv);
        const auto loss = combined_loss(cfg_.loss, b.y, p, s, x, xa);
        tape.backward(loss.total);
        out.loss = loss.total.value().item();
        out.terms = {{"peer_loss", loss.peer.total.value().item()},
                     {"peer_ce", loss.peer.ce},
                     {"peer_kl", loss.peer.kl},
                     {"student_loss", loss.student.total.value().item()},
                     {"student_ce", loss.student.ce},
                     {"student_kl", loss.student.kl},
                     {"student_reg", loss.student.reg}};
        out.student_input = fingerprint(xa.value());
        out.peer_input = fingerprint(xa.value());
        apply(tape, p, *peer_, peer_opt_, lr, cfg_);
        apply(tape, s, student_, student_opt_, lr, cfg_);
        break;
      }
    }
    return out;
  }

  const TrainConfig& cfg_;
  Model student_;
  std::optional<Model> peer_;
  const Model* teacher_;
  OptimState student_opt_;
  OptimState peer_opt_;
  SwaState swa_;
};

TrainConfig with_method(const TrainConfig& cfg, Method method) {
  auto c = cfg;
  c.method = method;
  return c;
}

}  // namespace

TrainResult train_natural(const ModelSpec& spec, TrainInputs data, const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto c = with_method(cfg, Method::natural);
  return Loop(c, make_model(spec, derive_seed(cfg.seed, kStudentInit)), std::nullopt, nullptr).run(data, hooks);
}

TrainResult train_pgd_at(const ModelSpec& spec, TrainInputs data, const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto c = with_method(cfg, Method::pgd_at);
  return Loop(c, make_model(spec, derive_seed(cfg.seed, kStudentInit)), std::nullopt, nullptr).run(data, hooks);
}

TrainResult train_trades(const ModelSpec& spec, TrainInputs data, const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto c = with_method(cfg, Method::trades);
  return Loop(c, make_model(spec, derive_seed(cfg.seed, kStudentInit)), std::nullopt, nullptr).run(data, hooks);
}

TrainResult train_fixed_teacher_ad(const ModelSpec& spec, const Model& teacher, TrainInputs data,
                                   const TrainConfig& cfg, const TrainHooks& hooks) {
  check_params(teacher.spec, teacher.params);
  const auto c = with_method(cfg, Method::fixed_teacher_ad);
  return Loop(c, make_model(spec, derive_seed(cfg.seed, kStudentInit)), std::nullopt, &teacher).run(data, hooks);
}

TrainResult train_peeraid(const ModelSpec& student_spec, const ModelSpec& peer_spec, TrainInputs data,
                          const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto c = with_method(cfg, Method::peeraid);
  return Loop(c, make_model(student_spec, derive_seed(cfg.seed, kStudentInit)),
              make_model(peer_spec, derive_seed(cfg.seed, kPeerInit)), nullptr)
      .run(data, hooks);
}

}  // namespace paid
