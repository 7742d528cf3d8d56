#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "paid/config.hpp"
#include "paid/error.hpp"
#include "paid/eval.hpp"
#include "paid/metrics.hpp"
#include "paid/trainer.hpp"

namespace paid::cli {

namespace fs = std::filesystem;

namespace {

/// Exclusive ownership of an output directory for the lifetime of a command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".paid.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error("output directory '" + dir.string() + "' is locked by another run (remove " + path_.string() +
                  " if stale)");
    }
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Options {
  // gen-data
  std::string kind = "gauss-blobs";
  std::size_t classes = 3;
  std::size_t n = 3000;
  double noise = 0.08;
  // shared
  std::uint64_t seed = 0;
  bool seed_set = false;
  fs::path config;
  fs::path out;
  fs::path data;
  std::vector<fs::path> models;
  std::vector<fs::path> surrogates;
  fs::path runs;
  bool validate_on_test = false;
  // attack
  std::string attack = "pgd";
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 20;
};

void print_report(std::ostream& out, const RobustnessReport& r) {
  out << std::fixed << std::setprecision(4);
  out << "samples " << r.samples << "\nclean   " << r.clean << '\n';
  for (const auto& [name, acc] : r.attacks) out << std::left << std::setw(8) << name << acc << '\n';
}

int gen_data(const Options& o, std::ostream& out) {
  const auto synth = gen_synthetic(parse_synthetic_kind(o.kind), o.classes, o.n, o.noise, o.seed);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  save_dataset(o.out, synth.data);
  out << "wrote " << synth.data.size() << " samples to " << o.out.string();
  if (synth.class_gap > 0) out << " (class gap " << synth.class_gap << ")";
  out << '\n';
  return kExitOk;
}

/// Config plus data with the budgets resolved; `--data` replaces the test split.
struct Setup {
  RunConfig cfg;
  RunData data;
};

Setup setup(const Options& o, bool need_train) {
  Setup s;
  if (!o.config.empty()) s.cfg = load_run_config(o.config);
  if (o.seed_set) s.cfg.seed = o.seed;
  if (!o.out.empty()) s.cfg.out = o.out;
  if (o.validate_on_test) s.cfg.train.validate_on_test = true;
  s.cfg.train.seed = s.cfg.seed;
  // Gap-relative budgets need the configured synthetic data even when the
  // evaluation set comes from --data.
  if (need_train || o.data.empty() || s.cfg.epsilon_gap_fraction > 0) {
    s.data = prepare_data(s.cfg);
  }
  if (!o.data.empty()) {
    s.data.test = load_dataset(o.data);
    s.data.test.split = Split::test;
  }
  s.cfg = resolve_budgets(s.cfg, s.data);
  return s;
}

int train(const Options& o, std::ostream& out) {
  auto [cfg, data] = setup(o, true);
  DirLock lock(cfg.out);
  const auto metrics_path = cfg.out / "metrics.jsonl";
  if (fs::exists(metrics_path)) {
    throw Error("'" + cfg.out.string() + "' already holds a metrics stream; use a fresh output directory");
  }
  {
    std::ofstream cfg_out(cfg.out / "config.cfg");
    cfg_out << serialize_run_config(cfg);
  }
  save_dataset(cfg.out / "test.paid", data.test);

  const auto sample = data.train.sample_shape();
  const auto classes = data.train.classes;
  const auto student_spec = make_model_spec(cfg.student_model, sample, classes, Role::student);
  MetricsWriter metrics(metrics_path, cfg.run_id, cfg.metrics_wall_clock);
  const std::map<std::string, std::string> tags{{"method", std::string(to_string(cfg.method))}};

  TrainHooks hooks;
  hooks.on_epoch = [&](EpochLog& log, const Model&, const Model*) {
    metrics.write(RecordKind::epoch, epoch_payload(log), tags);
    out << "epoch " << log.epoch << " loss " << log.train["loss"] << " val clean " << log.clean_acc << " val pgd "
        << log.pgd10_acc << '\n';
  };
  const TrainInputs inputs{&data.train, &data.test};

  TrainResult result;
  switch (cfg.method) {
    case Method::natural: result = train_natural(student_spec, inputs, cfg.train, hooks); break;
    case Method::pgd_at: result = train_pgd_at(student_spec, inputs, cfg.train, hooks); break;
    case Method::trades: result = train_trades(student_spec, inputs, cfg.train, hooks); break;
    case Method::fixed_teacher_ad: {
      const auto teacher = load_checkpoint(cfg.teacher_checkpoint);
      result = train_fixed_teacher_ad(student_spec, teacher, inputs, cfg.train, hooks);
      break;
    }
    case Method::peeraid: {
      const auto peer_spec = make_model_spec(cfg.peer_model, sample, classes, Role::peer);
      result = train_peeraid(student_spec, peer_spec, inputs, cfg.train, hooks);
      break;
    }
  }

  save_checkpoint(cfg.out / "student.ckpt", result.student);
  save_checkpoint(cfg.out / "best_student.ckpt", result.best.student);
  if (result.peer) save_checkpoint(cfg.out / "peer.ckpt", *result.peer);
  if (result.best.peer) save_checkpoint(cfg.out / "best_peer.ckpt", *result.best.peer);

  const auto attacks = eval_attacks(cfg);
  const auto report = robustness_report(result.best.student, data.test, attacks);
  auto payload = report_payload(report);
  payload["best_epoch"] = result.best.epoch;
  auto report_tags = tags;
  report_tags["model"] = "best_student";
  metrics.write(RecordKind::report, payload, report_tags);
  out << "best epoch " << result.best.epoch << " (test split)\n";
  print_report(out, report);
  return kExitOk;
}

int attack(const Options& o, std::ostream& out) {
  const auto model = load_checkpoint(o.models.front());
  const auto data = load_dataset(o.data);
  const auto kind = parse_attack_kind(o.attack);
  AttackConfig cfg;
  switch (kind) {
    case AttackKind::fgsm: cfg = AttackConfig::fgsm(static_cast<Real>(o.epsilon)); break;
    case AttackKind::mi_fgsm: cfg = AttackConfig::mi_fgsm(o.steps, static_cast<Real>(o.epsilon)); break;
    case AttackKind::cw_l2: cfg = AttackConfig::cw_l2(); break;
    default:
      cfg = AttackConfig::pgd(o.steps, static_cast<Real>(o.epsilon), static_cast<Real>(o.step_size));
      break;
  }
  cfg.seed = o.seed;
  const auto x_adv = attack_dataset(kind, model, data, cfg);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  save_raw_tensor(o.out, x_adv);
  out << std::fixed << std::setprecision(4) << o.attack << " accuracy " << accuracy_on(model, x_adv, data.labels)
      << " (clean " << accuracy(model, data) << ")\nwrote " << o.out.string() << '\n';
  return kExitOk;
}

int eval(const Options& o, std::ostream& out) {
  auto [cfg, data] = setup(o, false);
  const auto model = load_checkpoint(o.models.front());
  const auto report = robustness_report(model, data.test, eval_attacks(cfg));
  print_report(out, report);
  if (!o.out.empty()) {
    DirLock lock(o.out);
    MetricsWriter metrics(o.out / "metrics.jsonl", cfg.run_id, cfg.metrics_wall_clock);
    metrics.write(RecordKind::report, report_payload(report),
                  {{"method", std::string(to_string(cfg.method))}, {"model", o.models.front().string()}});
  }
  return kExitOk;
}

int cross_rob(const Options& o, std::ostream& out) {
  if (o.models.size() < 2) throw ConfigError("cross-rob needs at least two --model checkpoints");
  auto [cfg, data] = setup(o, false);
  std::vector<Model> models;
  std::vector<NamedModel> named;
  for (const auto& p : o.models) models.push_back(load_checkpoint(p));
  for (std::size_t i = 0; i < models.size(); ++i) named.push_back({o.models[i].stem().string(), &models[i]});
  const auto cr = cross_robustness(named, data.test, AttackKind::pgd, cfg.eval_attack);
  out << std::fixed << std::setprecision(4) << "defender\\source";
  for (const auto& n : cr.names) out << ',' << n;
  out << '\n';
  for (std::size_t d = 0; d < cr.names.size(); ++d) {
    out << cr.names[d];
    for (std::size_t s = 0; s < cr.names.size(); ++s) out << ',' << cr.matrix[d][s];
    out << '\n';
  }
  return kExitOk;
}

int battery(const Options& o, std::ostream& out) {
  auto [cfg, data] = setup(o, false);
  const auto model = load_checkpoint(o.models.front());
  std::vector<Model> surrogates;
  std::vector<NamedModel> named;
  for (const auto& p : o.surrogates) surrogates.push_back(load_checkpoint(p));
  for (std::size_t i = 0; i < surrogates.size(); ++i) {
    named.push_back({o.surrogates[i].stem().string(), &surrogates[i]});
  }
  const auto report = obfuscation_battery(model, data.test, cfg.battery, named);
  out << std::fixed << std::setprecision(4);
  for (const auto& c : report.checks) {
    out << (c.passed ? (*c.passed ? "PASS " : "FAIL ") : "SKIP ") << c.name;
    for (const auto& [k, v] : c.values) out << ' ' << k << '=' << v;
    out << "  (" << c.detail << ")\n";
  }
  if (!o.out.empty()) {
    DirLock lock(o.out);
    MetricsWriter metrics(o.out / "metrics.jsonl", cfg.run_id, cfg.metrics_wall_clock);
    metrics.write(RecordKind::battery, battery_payload(report), {{"model", o.models.front().string()}});
  }
  return kExitOk;
}

int report(const Options& o, std::ostream& out) {
  if (!fs::is_directory(o.runs)) throw ConfigError("--runs '" + o.runs.string() + "' is not a directory");
  std::vector<fs::path> streams;
  for (const auto& entry : fs::recursive_directory_iterator(o.runs)) {
    if (entry.is_regular_file() && entry.path().filename() == "metrics.jsonl") streams.push_back(entry.path());
  }
  std::sort(streams.begin(), streams.end());
  std::vector<MetricsRecord> records;
  for (const auto& p : streams) {
    auto r = read_metrics(p);
    records.insert(records.end(), r.begin(), r.end());
  }
  const auto csv = comparison_csv(records);
  if (!o.out.empty()) {
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    std::ofstream(o.out) << csv;
  }
  out << csv;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial distillation laboratory", "paid"};
  app.require_subcommand(1);
  Options o;

  auto seed = [&o](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&o](std::uint64_t v) { o.seed = v, o.seed_set = true; }, "Random seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
  gen->add_option("--kind", o.kind, "gauss-blobs, two-moons or ring")->capture_default_str();
  gen->add_option("--classes", o.classes)->capture_default_str();
  gen->add_option("--n", o.n, "Number of samples")->capture_default_str();
  gen->add_option("--noise", o.noise)->capture_default_str();
  gen->add_option("--out", o.out, "Output .paid file")->required();
  seed(gen);

  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  tr->add_option("--config", o.config, "Run config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", o.out, "Output directory (overrides the config)");
  tr->add_flag("--validate-on-test", o.validate_on_test, "Select checkpoints on the test split");
  seed(tr);

  auto* at = app.add_subcommand("attack", "Craft adversarial examples and export them");
  at->add_option("--model", o.models, "Checkpoint")->required()->expected(1)->check(CLI::ExistingFile);
  at->add_option("--data", o.data, "Dataset file")->required()->check(CLI::ExistingFile);
  at->add_option("--attack", o.attack, "fgsm, pgd, mi-fgsm, cw-l2 or unbounded")->capture_default_str();
  at->add_option("--epsilon", o.epsilon)->capture_default_str();
  at->add_option("--step-size", o.step_size)->capture_default_str();
  at->add_option("--steps", o.steps)->capture_default_str();
  at->add_option("--out", o.out, "Output .pait file")->required();
  seed(at);

  auto* ev = app.add_subcommand("eval", "Clean and adversarial accuracy of a checkpoint");
  auto* cr = app.add_subcommand("cross-rob", "Cross-model robustness matrix");
  auto* bat = app.add_subcommand("battery", "Gradient-obfuscation checks");
  for (auto* sub : {ev, cr, bat}) {
    sub->add_option("--model", o.models, "Checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--data", o.data, "Dataset file (defaults to the config's test split)")
        ->check(CLI::ExistingFile);
    sub->add_option("--config", o.config, "Run config for attack budgets")->check(CLI::ExistingFile);
    seed(sub);
  }
  ev->get_option("--model")->expected(1);
  bat->get_option("--model")->expected(1);
  ev->add_option("--out", o.out, "Append a report record to OUT/metrics.jsonl");
  bat->add_option("--out", o.out, "Append a battery record to OUT/metrics.jsonl");
  bat->add_option("--surrogate", o.surrogates, "Surrogate checkpoints for the transfer check")
      ->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("report", "Aggregate metrics streams into a CSV table");
  rep->add_option("--runs", o.runs, "Directory searched for metrics.jsonl files")->required();
  rep->add_option("--out", o.out, "Also write the CSV here");

  std::vector<const char*> argv{"paid"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return gen_data(o, out);
    if (tr->parsed()) return train(o, out);
    if (at->parsed()) return attack(o, out);
    if (ev->parsed()) return eval(o, out);
    if (cr->parsed()) return cross_rob(o, out);
    if (bat->parsed()) return battery(o, out);
    return report(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace paid::cli
