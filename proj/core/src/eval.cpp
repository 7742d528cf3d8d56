#include "paid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "paid/autodiff.hpp"
#include "paid/error.hpp"
#include "paid/losses.hpp"

namespace paid {

namespace {

template <typename Fn>
void for_each_batch(std::size_t n, std::size_t batch, Fn&& fn) {
  if (batch == 0) throw ParameterError("batch size must be >= 1");
  for (std::size_t begin = 0, index = 0; begin < n; begin += batch, ++index) fn(begin, std::min(n, begin + batch), index);
}

Tensor concat_rows(const std::vector<Tensor>& parts, const Shape& full_shape) {
  std::vector<Real> values;
  values.reserve(element_count(full_shape));
  for (const auto& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
  return Tensor(full_shape, std::move(values));
}

std::span<const int> label_range(const std::vector<int>& labels, std::size_t begin, std::size_t end) {
  return std::span<const int>(labels).subspan(begin, end - begin);
}

}  // namespace

double accuracy_on(const Model& model, const Tensor& inputs, std::span<const int> labels, std::size_t batch) {
  if (inputs.rank() == 0 || inputs.extent(0) != labels.size()) {
    throw ShapeError("accuracy: " + std::to_string(labels.size()) + " labels for inputs " + to_string(inputs.shape()));
  }
  if (labels.empty()) throw ContractError("accuracy: empty dataset");
  std::size_t correct = 0;
  for_each_batch(labels.size(), batch, [&](std::size_t begin, std::size_t end, std::size_t) {
    const auto pred = predict(model, inputs.slice_rows(begin, end));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[begin + i] ? 1 : 0;
  });
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const Model& model, const Dataset& data, std::size_t batch) {
  return accuracy_on(model, data.inputs, data.labels, batch);
}

Tensor attack_dataset(AttackKind kind, const Model& model, const Dataset& data, const AttackConfig& cfg,
                      std::size_t batch) {
  std::vector<Tensor> parts;
  for_each_batch(data.size(), batch, [&](std::size_t begin, std::size_t end, std::size_t index) {
    auto c = cfg;
    c.seed = cfg.seed + index;
    parts.push_back(run_attack(kind, model, data.inputs.slice_rows(begin, end), label_range(data.labels, begin, end), c)
                        .x_adv);
  });
  return concat_rows(parts, data.inputs.shape());
}

double robust_accuracy(const Model& model, const Dataset& data, AttackKind kind, const AttackConfig& cfg,
                       std::size_t batch) {
  return accuracy_on(model, attack_dataset(kind, model, data, cfg, batch), data.labels, batch);
}

std::vector<NamedAttack> standard_attacks() {
  return {{"fgsm", AttackKind::fgsm, AttackConfig::fgsm()},
          {"pgd20", AttackKind::pgd, AttackConfig::pgd(20)},
          {"mi-fgsm", AttackKind::mi_fgsm, AttackConfig::mi_fgsm()},
          {"cw", AttackKind::cw_l2, AttackConfig::cw_l2()}};
}

std::optional<double> RobustnessReport::at(std::string_view attack) const {
  for (const auto& [name, acc] : attacks) {
    if (name == attack) return acc;
  }
  return std::nullopt;
}

RobustnessReport robustness_report(const Model& model, const Dataset& data, std::span<const NamedAttack> attacks) {
  RobustnessReport report;
  report.samples = data.size();
  report.clean = accuracy(model, data);
  for (const auto& a : attacks) report.attacks.emplace_back(a.name, robust_accuracy(model, data, a.kind, a.cfg));
  return report;
}

double CrossRobustness::at(std::string_view defender, std::string_view source) const {
  auto index = [this](std::string_view name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ContractError("cross robustness: no model named '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names.begin());
  };
  return matrix[index(defender)][index(source)];
}

CrossRobustness cross_robustness(std::span<const NamedModel> models, const Dataset& data, AttackKind kind,
                                 const AttackConfig& cfg) {
  if (models.empty()) throw ContractError("cross robustness: no models given");
  CrossRobustness out;
  const auto k = models.size();
  out.matrix.assign(k, std::vector<double>(k, 0.0));
  for (const auto& m : models) out.names.push_back(m.name);
  for (std::size_t s = 0; s < k; ++s) {
    const auto x_adv = attack_dataset(kind, *models[s].model, data, cfg);
    out.source_fingerprints.push_back(fingerprint(x_adv));
    for (std::size_t d = 0; d < k; ++d) out.matrix[d][s] = accuracy_on(*models[d].model, x_adv, data.labels);
  }
  return out;
}

CosineStat penultimate_cosine(const Model& model, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("penultimate_cosine: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto fa = penultimate(model, a);
  const auto fb = penultimate(model, b);
  const auto rows = fa.extent(0);
  const auto dim = fa.row_size();
  CosineStat stat;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double u = fa[r * dim + j];
      const double v = fb[r * dim + j];
      dot += u * v;
      na += u * u;
      nb += v * v;
    }
    if (na == 0 || nb == 0) {
      ++stat.skipped;
      continue;
    }
    total += dot / (std::sqrt(na) * std::sqrt(nb));
    ++stat.used;
  }
  stat.mean = stat.used ? total / static_cast<double>(stat.used) : 0.0;
  return stat;
}

bool BatteryReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed.value_or(true); });
}

const BatteryCheck& BatteryReport::at(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw ContractError("battery: no check named '" + std::string(name) + "'");
}

BatteryReport obfuscation_battery(const Model& model, const Dataset& data, const BatteryConfig& cfg,
                                  std::span<const NamedModel> surrogates) {
  BatteryReport report;
  const double base_acc = robust_accuracy(model, data, AttackKind::pgd, cfg.pgd_base);
  const double long_acc = robust_accuracy(model, data, AttackKind::pgd, cfg.pgd_long);
  const double gap = std::abs(base_acc - long_acc);
  report.checks.push_back({"iteration_gap",
                           gap <= cfg.max_iteration_gap,
                           {{"pgd_base_acc", base_acc}, {"pgd_long_acc", long_acc}, {"gap", gap}},
                           "PGD-" + std::to_string(cfg.pgd_base.steps) + " vs PGD-" +
                               std::to_string(cfg.pgd_long.steps)});

  auto unbounded = AttackConfig::pgd(cfg.unbounded_steps, std::numeric_limits<Real>::infinity(),
                                     cfg.unbounded_step_size);
  const double unbounded_acc = robust_accuracy(model, data, AttackKind::unbounded, unbounded);
  report.checks.push_back({"unbounded_attack",
                           unbounded_acc <= cfg.max_unbounded_accuracy,
                           {{"accuracy", unbounded_acc}},
                           "unbounded PGD-" + std::to_string(cfg.unbounded_steps)});

  const double pgd20_acc = robust_accuracy(model, data, AttackKind::pgd, cfg.pgd20);
  const double fgsm_acc = robust_accuracy(model, data, AttackKind::fgsm, cfg.fgsm);
  report.checks.push_back({"fgsm_vs_pgd",
                           fgsm_acc >= pgd20_acc,
                           {{"fgsm_acc", fgsm_acc}, {"pgd20_acc", pgd20_acc}},
                           "single-step accuracy must not fall below iterative"});

  BatteryCheck transfer{"transfer_vs_whitebox", std::nullopt, {{"whitebox_acc", pgd20_acc}}, "no surrogate given"};
  if (!surrogates.empty()) {
    const auto results = transfer_attack_eval(model, surrogates, data, AttackKind::pgd, cfg.pgd20);
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& r : results) {
      transfer.values["transfer_acc:" + r.surrogate] = r.accuracy;
      worst = std::min(worst, r.accuracy);
    }
    transfer.values["min_transfer_acc"] = worst;
    transfer.passed = worst >= pgd20_acc;
    transfer.detail = std::to_string(results.size()) + " surrogate(s)";
  }
  report.checks.push_back(std::move(transfer));
  return report;
}

std::vector<TransferResult> transfer_attack_eval(const Model& target, std::span<const NamedModel> surrogates,
                                                 const Dataset& data, AttackKind kind, const AttackConfig& cfg) {
  std::vector<TransferResult> out;
  for (const auto& s : surrogates) {
    if (s.model->spec.input_shape != target.spec.input_shape || s.model->spec.class_count != target.spec.class_count) {
      throw ShapeError("transfer: surrogate '" + s.name + "' does not match the target's input or classes");
    }
    out.push_back({s.name, accuracy_on(target, attack_dataset(kind, *s.model, data, cfg), data.labels)});
  }
  return out;
}

std::map<std::string, OverfitGap> robust_overfit_gap(std::span<const EpochLog> logs,
                                                     std::span<const std::string> metrics) {
  if (logs.empty()) throw ContractError("robust_overfit_gap: no epochs logged");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logs.size(); ++i) {
    if (logs[i].pgd10_acc >= logs[best].pgd10_acc) best = i;
  }
  std::map<std::string, OverfitGap> out;
  for (const auto& name : metrics) {
    const auto b = logs[best].metric(name);
    const auto f = logs.back().metric(name);
    if (!b || !f) throw ContractError("robust_overfit_gap: metric '" + name + "' was not logged");
    out[name] = OverfitGap{logs[best].epoch, *b, *f, *b - *f};
  }
  return out;
}

SaliencyMaps saliency_map(const Model& model, const Tensor& x, std::span<const int> labels) {
  if (x.rank() != 4) throw ShapeError("saliency_map: expected [n, c, h, w], got " + to_string(x.shape()));
  const auto n = x.extent(0);
  const auto c = x.extent(1);
  const auto hw = x.extent(2) * x.extent(3);

  Tape tape;
  const Var xv = tape.variable(x);
  const auto bound = bind(tape, model, false);
  tape.backward(cross_entropy(bound.logits(xv), labels));
  const Tensor g = tape.grad(xv);

  SaliencyMaps out{Tensor({n, x.extent(2), x.extent(3)}), std::vector<std::uint8_t>(n, 0)};
  const auto per = c * hw;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* gi = g.values().data() + i * per;
    double mean = 0;
    for (std::size_t j = 0; j < per; ++j) mean += gi[j];
    mean /= static_cast<double>(per);
    double var = 0;
    for (std::size_t j = 0; j < per; ++j) var += (gi[j] - mean) * (gi[j] - mean);
    const double sigma = std::sqrt(var / static_cast<double>(per));
    if (sigma == 0) {
      out.degenerate[i] = 1;
      continue;
    }
    std::vector<double> summed(hw, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < hw; ++p) summed[p] += std::abs(std::clamp<double>(gi[ch * hw + p], -3 * sigma, 3 * sigma));
    }
    const auto [lo, hi] = std::minmax_element(summed.begin(), summed.end());
    if (*hi == *lo) {
      out.degenerate[i] = 1;
      continue;
    }
    for (std::size_t p = 0; p < hw; ++p) out.maps[i * hw + p] = static_cast<Real>((summed[p] - *lo) / (*hi - *lo));
  }
  return out;
}

Tensor loss_grid(const Model& model, const Dataset& data, Real radius, int radius_steps, std::uint64_t seed) {
  if (radius_steps < 1 || !(radius > 0)) throw ParameterError("loss_grid: radius and steps must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto direction = [&] {
    Params d = model.params;
    for (auto& [name, t] : d.tensors) {
      double dn = 0, pn = 0;
      const auto& p = model.params.at(name);
      for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<Real>(normal(rng));
        dn += double(t[i]) * t[i];
        pn += double(p[i]) * p[i];
      }
      const double s = dn > 0 ? std::sqrt(pn / dn) : 0.0;
      for (auto& v : t.values()) v = static_cast<Real>(v * s);
    }
    return d;
  };
  const Params d1 = direction();
  const Params d2 = direction();

  const auto side = static_cast<std::size_t>(2 * radius_steps + 1);
  Tensor grid({side, side});
  Model probe = model;
  for (std::size_t a = 0; a < side; ++a) {
    for (std::size_t b = 0; b < side; ++b) {
      const Real sa = radius * (static_cast<Real>(a) - radius_steps) / radius_steps;
      const Real sb = radius * (static_cast<Real>(b) - radius_steps) / radius_steps;
      for (std::size_t k = 0; k < probe.params.size(); ++k) {
        auto& t = probe.params.tensors[k].value;
        const auto& base = model.params.tensors[k].value;
        for (std::size_t i = 0; i < t.numel(); ++i) {
          t[i] = base[i] + sa * d1.tensors[k].value[i] + sb * d2.tensors[k].value[i];
        }
      }
      const auto prob = predict_prob(probe, data.inputs);
      const auto classes = prob.extent(1);
      double loss = 0;
      for (std::size_t r = 0; r < data.size(); ++r) {
        loss -= std::log(std::max<double>(prob[r * classes + static_cast<std::size_t>(data.labels[r])], kProbFloor));
      }
      grid[a * side + b] = static_cast<Real>(loss / static_cast<double>(data.size()));
    }
  }
  return grid;
}

}  // namespace paid
