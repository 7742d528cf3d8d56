#include "paid/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "paid/error.hpp"

namespace paid {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not a valid number");
  }
  return value;
}

template <typename T>
std::string format_number(T value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Ref>
Field number(std::string key, Ref ref) {
  return {key,
          [key, ref](RunConfig& c, std::string_view v, const auto&) { ref(c) = parse_number<T>(key, v); },
          [ref](const RunConfig& c) { return format_number(ref(c)); }};
}

template <typename Ref>
Field boolean(std::string key, Ref ref) {
  return {key, [key, ref](RunConfig& c, std::string_view v, const auto&) { ref(c) = parse_bool(key, v); },
          [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); }};
}

template <typename Ref>
Field text(std::string key, Ref ref) {
  return {key, [ref](RunConfig& c, std::string_view v, const auto&) { ref(c) = std::string(v); },
          [ref](const RunConfig& c) { return ref(c); }};
}

/// A path that must name an existing file when set.
template <typename Ref>
Field input_file(std::string key, Ref ref) {
  return {key,
          [key, ref](RunConfig& c, std::string_view v, const std::filesystem::path& base) {
            if (v.empty()) {
              ref(c).clear();
              return;
            }
            std::filesystem::path p{std::string(v)};
            if (p.is_relative() && !base.empty()) p = base / p;
            if (!std::filesystem::is_regular_file(p)) {
              throw ConfigError(key + ": file '" + p.string() + "' does not exist");
            }
            ref(c) = p;
          },
          [ref](const RunConfig& c) { return ref(c).string(); }};
}

template <typename Ref>
Field output_dir(std::string key, Ref ref) {
  return {key,
          [ref](RunConfig& c, std::string_view v, const std::filesystem::path& base) {
            std::filesystem::path p{std::string(v)};
            if (p.is_relative() && !base.empty()) p = base / p;
            ref(c) = p;
          },
          [ref](const RunConfig& c) { return ref(c).string(); }};
}

template <typename Ref>
Field int_list(std::string key, Ref ref) {
  return {key,
          [key, ref](RunConfig& c, std::string_view v, const auto&) {
            std::vector<int> out;
            while (!v.empty()) {
              const auto comma = v.find(',');
              const auto item = trim(v.substr(0, comma));
              if (!item.empty()) out.push_back(parse_number<int>(key, item));
              v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
            }
            ref(c) = std::move(out);
          },
          [ref](const RunConfig& c) {
            std::string s;
            for (auto e : ref(c)) s += (s.empty() ? "" : ",") + std::to_string(e);
            return s;
          }};
}

template <typename E, typename Ref>
Field enumeration(std::string key, Ref ref, E (*parse)(std::string_view)) {
  return {key,
          [key, ref, parse](RunConfig& c, std::string_view v, const auto&) {
            try {
              ref(c) = parse(v);
            } catch (const Error& e) {
              throw ConfigError(key + ": " + e.what());
            }
          },
          [ref](const RunConfig& c) { return std::string(to_string(ref(c))); }};
}

#define PAID_REF(member) [](auto& c) -> auto& { return c.member; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(text("run.id", PAID_REF(run_id)));
    f.push_back(number<std::uint64_t>("seed", PAID_REF(seed)));
    f.push_back(output_dir("out", PAID_REF(out)));
    f.push_back(enumeration<Method>("method", PAID_REF(method), parse_method));

    f.push_back(text("model.student", PAID_REF(student_model)));
    f.push_back(text("model.peer", PAID_REF(peer_model)));
    f.push_back(input_file("model.teacher_checkpoint", PAID_REF(teacher_checkpoint)));

    f.push_back(text("data.source", PAID_REF(data_source)));
    f.push_back(enumeration<SyntheticKind>("data.kind", PAID_REF(data_kind), parse_synthetic_kind));
    f.push_back(number<std::size_t>("data.classes", PAID_REF(data_classes)));
    f.push_back(number<std::size_t>("data.n", PAID_REF(data_n)));
    f.push_back(number<std::size_t>("data.test_n", PAID_REF(data_test_n)));
    f.push_back(number<double>("data.noise", PAID_REF(data_noise)));
    f.push_back(number<std::uint64_t>("data.seed", PAID_REF(data_seed)));
    f.push_back(input_file("data.train", PAID_REF(data_train)));
    f.push_back(input_file("data.test", PAID_REF(data_test)));

    f.push_back(number<int>("train.epochs", PAID_REF(train.epochs)));
    f.push_back(number<std::size_t>("train.batch_size", PAID_REF(train.batch_size)));
    f.push_back(number<Real>("train.lr", PAID_REF(train.lr_initial)));
    f.push_back(int_list("train.lr_decay_epochs", PAID_REF(train.lr_decay_epochs)));
    f.push_back(number<Real>("train.lr_decay_factor", PAID_REF(train.lr_decay_factor)));
    f.push_back(number<Real>("train.momentum", PAID_REF(train.momentum)));
    f.push_back(number<Real>("train.weight_decay", PAID_REF(train.weight_decay)));
    f.push_back(boolean("train.swa", PAID_REF(train.swa_enabled)));
    f.push_back(number<int>("train.swa_start", PAID_REF(train.swa_start_epoch)));
    f.push_back(number<double>("train.val_fraction", PAID_REF(train.val_fraction)));
    f.push_back(boolean("train.validate_on_test", PAID_REF(train.validate_on_test)));
    f.push_back(number<Real>("train.trades_beta", PAID_REF(train.trades_beta)));
    f.push_back(boolean("train.log_cross_robustness", PAID_REF(train.log_cross_robustness)));

    f.push_back(number<double>("loss.gamma1", PAID_REF(train.loss.gamma1)));
    f.push_back(number<double>("loss.gamma2", PAID_REF(train.loss.gamma2)));
    f.push_back(number<double>("loss.lambda1", PAID_REF(train.loss.lambda1)));
    f.push_back(number<double>("loss.lambda2", PAID_REF(train.loss.lambda2)));
    f.push_back(number<double>("loss.lambda3", PAID_REF(train.loss.lambda3)));
    f.push_back(number<double>("loss.tau_peer", PAID_REF(train.loss.tau_peer)));
    f.push_back(number<double>("loss.tau_student", PAID_REF(train.loss.tau_student)));
    f.push_back(boolean("loss.detach_clean_branch", PAID_REF(train.loss.detach_clean_branch)));

    f.push_back(number<double>("attack.epsilon_gap_fraction", PAID_REF(epsilon_gap_fraction)));
    f.push_back(number<Real>("attack.train.epsilon", PAID_REF(train.attack.epsilon)));
    f.push_back(number<Real>("attack.train.step_size", PAID_REF(train.attack.step_size)));
    f.push_back(number<int>("attack.train.steps", PAID_REF(train.attack.steps)));
    f.push_back(boolean("attack.train.random_start", PAID_REF(train.attack.random_start)));
    f.push_back(number<Real>("attack.val.epsilon", PAID_REF(train.val_attack.epsilon)));
    f.push_back(number<Real>("attack.val.step_size", PAID_REF(train.val_attack.step_size)));
    f.push_back(number<int>("attack.val.steps", PAID_REF(train.val_attack.steps)));
    f.push_back(number<Real>("attack.eval.epsilon", PAID_REF(eval_attack.epsilon)));
    f.push_back(number<Real>("attack.eval.step_size", PAID_REF(eval_attack.step_size)));
    f.push_back(number<int>("attack.eval.steps", PAID_REF(eval_attack.steps)));
    f.push_back(boolean("attack.eval.random_start", PAID_REF(eval_attack.random_start)));
    f.push_back(number<int>("attack.eval.mi_steps", PAID_REF(eval_mi_steps)));
    f.push_back(number<Real>("attack.eval.mi_decay", PAID_REF(eval_mi_decay)));
    f.push_back(number<Real>("attack.eval.cw_c", PAID_REF(eval_cw_c)));
    f.push_back(number<int>("attack.eval.cw_steps", PAID_REF(eval_cw_steps)));
    f.push_back(number<Real>("attack.eval.cw_lr", PAID_REF(eval_cw_lr)));

    f.push_back(number<int>("battery.pgd_base_steps", PAID_REF(battery.pgd_base.steps)));
    f.push_back(number<int>("battery.pgd_long_steps", PAID_REF(battery.pgd_long.steps)));
    f.push_back(number<int>("battery.unbounded_steps", PAID_REF(battery.unbounded_steps)));
    f.push_back(number<double>("battery.max_iteration_gap", PAID_REF(battery.max_iteration_gap)));
    f.push_back(number<double>("battery.max_unbounded_accuracy", PAID_REF(battery.max_unbounded_accuracy)));

    f.push_back(boolean("metrics.wall_clock", PAID_REF(metrics_wall_clock)));
    return f;
  }();
  return table;
}

#undef PAID_REF

void check_consistent(const RunConfig& c) {
  if (c.data_source != "synthetic" && c.data_source != "file") {
    throw ConfigError("data.source must be 'synthetic' or 'file'");
  }
  if (c.data_source == "file" && c.data_train.empty()) throw ConfigError("data.source = file needs data.train");
  if (c.method == Method::fixed_teacher_ad && c.teacher_checkpoint.empty()) {
    throw ConfigError("method fixed-teacher-ad needs model.teacher_checkpoint");
  }
  if (c.epsilon_gap_fraction < 0) throw ConfigError("attack.epsilon_gap_fraction must be >= 0");
  c.train.validate();
}

}  // namespace

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
    if (it == fields().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    it->set(cfg, value, base_dir);
  }
  check_consistent(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

RunData prepare_data(const RunConfig& cfg) {
  RunData data;
  if (cfg.data_source == "file") {
    data.train = load_dataset(cfg.data_train);
    data.train.split = Split::train;
    if (!cfg.data_test.empty()) {
      data.test = load_dataset(cfg.data_test);
    } else {
      std::tie(data.train, data.test) = split_dataset(data.train, 0.2, cfg.data_seed);
    }
    data.test.split = Split::test;
    const auto classes = std::max(data.train.classes, data.test.classes);
    data.train.classes = data.test.classes = classes;
    return data;
  }
  auto train = gen_synthetic(cfg.data_kind, cfg.data_classes, cfg.data_n, cfg.data_noise, cfg.data_seed);
  auto test = gen_synthetic(cfg.data_kind, cfg.data_classes, cfg.data_test_n, cfg.data_noise,
                            cfg.data_seed ^ 0x5eed7e57ull);
  data.train = std::move(train.data);
  data.test = std::move(test.data);
  data.test.split = Split::test;
  if (cfg.data_kind == SyntheticKind::gauss_blobs) data.class_gap = train.class_gap;
  return data;
}

RunConfig resolve_budgets(const RunConfig& cfg, const RunData& data) {
  if (cfg.epsilon_gap_fraction <= 0) return cfg;
  if (!data.class_gap) throw ConfigError("attack.epsilon_gap_fraction needs gauss-blobs data with a known class gap");
  auto c = cfg;
  const auto eps = static_cast<Real>(cfg.epsilon_gap_fraction) * *data.class_gap;
  for (AttackConfig* a : {&c.train.attack, &c.train.val_attack, &c.eval_attack, &c.battery.pgd_base, &c.battery.pgd20,
                          &c.battery.pgd_long, &c.battery.fgsm}) {
    a->epsilon = eps;
    a->step_size = eps / 4;
  }
  c.battery.unbounded_step_size = eps / 4;
  return c;
}

std::vector<NamedAttack> eval_attacks(const RunConfig& cfg) {
  const auto& e = cfg.eval_attack;
  auto fgsm = AttackConfig::fgsm(e.epsilon);
  auto pgd = e;
  auto mi = AttackConfig::mi_fgsm(cfg.eval_mi_steps, e.epsilon, cfg.eval_mi_decay);
  auto cw = AttackConfig::cw_l2(cfg.eval_cw_c);
  cw.steps = cfg.eval_cw_steps;
  cw.step_size = cfg.eval_cw_lr;
  return {{"fgsm", AttackKind::fgsm, fgsm},
          {"pgd" + std::to_string(pgd.steps), AttackKind::pgd, pgd},
          {"mi-fgsm", AttackKind::mi_fgsm, mi},
          {"cw", AttackKind::cw_l2, cw}};
}

}  // namespace paid
