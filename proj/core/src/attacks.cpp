#include "paid/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "paid/error.hpp"
#include "paid/losses.hpp"

namespace paid {

std::string_view to_string(AttackObjective objective) noexcept {
  switch (objective) {
    case AttackObjective::ce_to_label: return "ce-to-label";
    case AttackObjective::kl_to_reference: return "kl-to-reference";
    case AttackObjective::margin_cw: return "margin-cw";
  }
  return "ce-to-label";
}

AttackObjective parse_objective(std::string_view text) {
  if (text == "ce-to-label" || text == "ce") return AttackObjective::ce_to_label;
  if (text == "kl-to-reference" || text == "kl") return AttackObjective::kl_to_reference;
  if (text == "margin-cw" || text == "cw") return AttackObjective::margin_cw;
  throw ParameterError("unknown attack objective '" + std::string(text) + "'");
}

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::mi_fgsm: return "mi-fgsm";
    case AttackKind::cw_l2: return "cw-l2";
    case AttackKind::unbounded: return "unbounded";
  }
  return "pgd";
}

AttackKind parse_attack_kind(std::string_view text) {
  if (text == "fgsm") return AttackKind::fgsm;
  if (text == "pgd") return AttackKind::pgd;
  if (text == "mi-fgsm" || text == "mifgsm") return AttackKind::mi_fgsm;
  if (text == "cw-l2" || text == "cw") return AttackKind::cw_l2;
  if (text == "unbounded") return AttackKind::unbounded;
  throw ParameterError("unknown attack '" + std::string(text) + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0)) throw ParameterError("attack: epsilon must be >= 0");
  if (steps < 1) throw ParameterError("attack: steps must be >= 1");
  if (!(step_size > 0)) throw ParameterError("attack: step_size must be > 0");
  if (objective == AttackObjective::kl_to_reference && reference == nullptr) {
    throw ParameterError("attack: kl-to-reference needs a reference model");
  }
  if (!(momentum_decay >= 0)) throw ParameterError("attack: momentum_decay must be >= 0");
  if (!(c_balance > 0)) throw ParameterError("attack: c_balance must be > 0");
}

AttackConfig AttackConfig::fgsm(Real epsilon) {
  AttackConfig c;
  c.epsilon = epsilon;
  c.step_size = epsilon > 0 ? epsilon : Real{1};
  c.steps = 1;
  return c;
}

AttackConfig AttackConfig::pgd(int steps, Real epsilon, Real step_size) {
  AttackConfig c;
  c.steps = steps;
  c.epsilon = epsilon;
  c.step_size = step_size;
  return c;
}

AttackConfig AttackConfig::mi_fgsm(int steps, Real epsilon, Real decay) {
  AttackConfig c;
  c.steps = steps;
  c.epsilon = epsilon;
  c.step_size = epsilon > 0 ? epsilon / static_cast<Real>(steps) : Real(1.0 / 255.0);
  c.momentum_decay = decay;
  return c;
}

AttackConfig AttackConfig::cw_l2(Real c) {
  AttackConfig cfg;
  cfg.epsilon = std::numeric_limits<Real>::infinity();
  cfg.steps = 100;
  cfg.step_size = Real(0.01);
  cfg.objective = AttackObjective::margin_cw;
  cfg.c_balance = c;
  return cfg;
}

double AttackResult::success_rate() const {
  if (success_mask.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto s : success_mask) hits += s;
  return static_cast<double>(hits) / static_cast<double>(success_mask.size());
}

namespace {

void check_batch(const Model& model, const Tensor& x, std::span<const int> labels) {
  if (x.rank() < 2 || x.extent(0) != labels.size()) {
    throw ShapeError("attack: batch " + to_string(x.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  }
  if (x.row_size() != element_count(model.spec.input_shape)) {
    throw ShapeError("attack: sample shape of " + to_string(x.shape()) + " does not match model input " +
                     to_string(model.spec.input_shape));
  }
}

// Coefficients c with sum(c * logits) = sum_i (max_{j != y_i} z_ij - z_iy) over
// rows where `active` holds.
Tensor margin_coefficients(const Tensor& logits, std::span<const int> labels, Real kappa, bool clamp_at_kappa,
                           Real sign, std::vector<Real>* margins) {
  const auto n = logits.extent(0), k = logits.extent(1);
  Tensor coef({n, k});
  if (margins) margins->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    std::size_t other = y == 0 ? 1 : 0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != y && logits[i * k + j] > logits[i * k + other]) other = j;
    const Real m = logits[i * k + y] - logits[i * k + other];
    if (margins) (*margins)[i] = clamp_at_kappa ? std::max(m, -kappa) : m;
    if (clamp_at_kappa && !(m > -kappa)) continue;
    coef[i * k + other] = -sign;
    coef[i * k + y] = sign;
  }
  return coef;
}

Real sign_of(Real v) { return v > 0 ? Real{1} : (v < 0 ? Real{-1} : Real{0}); }

void project(Tensor& cur, const Tensor& origin, const AttackConfig& cfg) {
  const bool ball = !cfg.unbounded();
  for (std::size_t i = 0; i < cur.numel(); ++i) {
    Real v = cur[i];
    if (ball) v = std::clamp(v, origin[i] - cfg.epsilon, origin[i] + cfg.epsilon);
    if (cfg.clamp_domain) v = std::clamp(v, Real{0}, Real{1});
    cur[i] = v;
  }
}

std::vector<std::uint8_t> misclassified(const Model& model, const Tensor& x, std::span<const int> labels) {
  const auto pred = predict(model, x);
  std::vector<std::uint8_t> mask(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = pred[i] != labels[i] ? 1 : 0;
  return mask;
}

enum class Direction { sign, momentum };

AttackResult iterate_signed(const Model& model, const Tensor& x, std::span<const int> labels,
                            const AttackConfig& cfg, Direction direction, const IterateObserver& observer) {
  check_batch(model, x, labels);
  cfg.validate();
  AttackResult result;
  Tensor cur = x;
  if (cfg.random_start && !cfg.unbounded() && cfg.epsilon > 0) {
    std::mt19937_64 rng(cfg.seed);
    for (auto& v : cur.values()) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v += static_cast<Real>((2.0 * u - 1.0) * static_cast<double>(cfg.epsilon));
    }
    project(cur, x, cfg);
  }
  if (observer) observer(0, cur);

  const auto rows = x.extent(0);
  const auto row = x.row_size();
  Tensor velocity(x.shape());
  Tensor best = cur;
  Real best_value = -std::numeric_limits<Real>::infinity();

  for (int t = 1; t <= cfg.steps; ++t) {
    auto eval = attack_objective(model, x, cur, labels, cfg);
    result.loss_trace.push_back(eval.value);
    if (cfg.best_of_trace && eval.value > best_value) {
      best_value = eval.value;
      best = cur;
    }
    if (direction == Direction::momentum) {
      for (std::size_t r = 0; r < rows; ++r) {
        Real l1 = 0;
        for (std::size_t j = 0; j < row; ++j) l1 += std::abs(eval.grad[r * row + j]);
        for (std::size_t j = 0; j < row; ++j) {
          auto& v = velocity[r * row + j];
          v = cfg.momentum_decay * v + (l1 > 0 ? eval.grad[r * row + j] / l1 : Real{0});
        }
      }
      for (std::size_t i = 0; i < cur.numel(); ++i) cur[i] += cfg.step_size * sign_of(velocity[i]);
    } else {
      for (std::size_t i = 0; i < cur.numel(); ++i) cur[i] += cfg.step_size * sign_of(eval.grad[i]);
    }
    project(cur, x, cfg);
    if (observer) observer(t, cur);
  }

  if (cfg.best_of_trace) {
    const auto last = attack_objective(model, x, cur, labels, cfg).value;
    if (last < best_value) cur = best;
  }
  result.success_mask = misclassified(model, cur, labels);
  result.x_adv = std::move(cur);
  return result;
}

}  // namespace

ObjectiveEval attack_objective(const Model& model, const Tensor& x_nat, const Tensor& x, std::span<const int> labels,
                               const AttackConfig& cfg) {
  Tape tape;
  auto bound = bind(tape, model, false);
  auto xv = tape.variable(x);
  auto logits = bound.logits(xv);
  Var loss;
  switch (cfg.objective) {
    case AttackObjective::ce_to_label:
      loss = cross_entropy(logits, labels);
      break;
    case AttackObjective::kl_to_reference: {
      if (cfg.reference == nullptr) throw ParameterError("attack: kl-to-reference needs a reference model");
      auto ref = bind(tape, *cfg.reference, false);
      auto target = tape.detach(log_softmax(ref.logits(tape.constant(x_nat)), 1));
      loss = kl_from_log_probs(target, log_softmax(logits, 1));
      break;
    }
    case AttackObjective::margin_cw: {
      const auto n = static_cast<Real>(labels.size());
      auto coef = margin_coefficients(logits.value(), labels, 0, false, Real{-1} / n, nullptr);
      loss = sum(mul(logits, tape.constant(std::move(coef))));
      break;
    }
  }
  tape.backward(loss);
  return {loss.value().item(), tape.grad(xv)};
}

AttackResult fgsm(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                  const IterateObserver& observer) {
  check_batch(model, x, labels);
  if (!(cfg.epsilon >= 0)) throw ParameterError("fgsm: epsilon must be >= 0");
  AttackConfig one = cfg;
  one.steps = 1;
  one.random_start = false;
  one.best_of_trace = false;
  one.step_size = cfg.epsilon;
  if (cfg.epsilon == 0) {
    AttackResult r;
    r.x_adv = x;
    r.loss_trace.push_back(attack_objective(model, x, x, labels, one).value);
    r.success_mask = misclassified(model, x, labels);
    if (observer) {
      observer(0, x);
      observer(1, x);
    }
    return r;
  }
  return iterate_signed(model, x, labels, one, Direction::sign, observer);
}

AttackResult pgd(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                 const IterateObserver& observer) {
  return iterate_signed(model, x, labels, cfg, Direction::sign, observer);
}

AttackResult mi_fgsm(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                     const IterateObserver& observer) {
  return iterate_signed(model, x, labels, cfg, Direction::momentum, observer);
}

AttackResult cw_l2(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                   const IterateObserver& observer) {
  check_batch(model, x, labels);
  cfg.validate();
  AttackResult result;
  Tensor delta(x.shape());
  Tensor cur = x;
  if (observer) observer(0, cur);
  const auto rows = static_cast<Real>(x.extent(0));
  for (int t = 1; t <= cfg.steps; ++t) {
    Tape tape;
    auto bound = bind(tape, model, false);
    auto xv = tape.variable(cur);
    auto logits = bound.logits(xv);
    std::vector<Real> margins;
    auto coef = margin_coefficients(logits.value(), labels, cfg.cw_kappa, true, Real{1}, &margins);
    auto penalty = sum(mul(logits, tape.constant(std::move(coef))));
    tape.backward(penalty);
    const auto margin_grad = tape.grad(xv);

    Real objective = 0;
    for (auto v : delta.values()) objective += v * v;
    for (auto m : margins) objective += cfg.c_balance * m;
    result.loss_trace.push_back(objective / rows);

    for (std::size_t i = 0; i < delta.numel(); ++i) {
      delta[i] -= cfg.step_size * (2 * delta[i] + cfg.c_balance * margin_grad[i]);
      Real v = x[i] + delta[i];
      if (cfg.clamp_domain) v = std::clamp(v, Real{0}, Real{1});
      delta[i] = v - x[i];
      cur[i] = v;
    }
    if (observer) observer(t, cur);
  }
  result.success_mask = misclassified(model, cur, labels);
  result.x_adv = std::move(cur);
  return result;
}

AttackResult unbounded_pgd(const Model& model, const Tensor& x, std::span<const int> labels, int steps,
                           Real step_size) {
  auto cfg = AttackConfig::pgd(steps, std::numeric_limits<Real>::infinity(), step_size);
  return pgd(model, x, labels, cfg);
}

AttackResult run_attack(AttackKind kind, const Model& model, const Tensor& x, std::span<const int> labels,
                        const AttackConfig& cfg, const IterateObserver& observer) {
  switch (kind) {
    case AttackKind::fgsm: return fgsm(model, x, labels, cfg, observer);
    case AttackKind::pgd: return pgd(model, x, labels, cfg, observer);
    case AttackKind::mi_fgsm: return mi_fgsm(model, x, labels, cfg, observer);
    case AttackKind::cw_l2: return cw_l2(model, x, labels, cfg, observer);
    case AttackKind::unbounded: {
      AttackConfig c = cfg;
      c.epsilon = std::numeric_limits<Real>::infinity();
      c.random_start = false;
      return pgd(model, x, labels, c, observer);
    }
  }
  throw ParameterError("unknown attack kind");
}

}  // namespace paid
