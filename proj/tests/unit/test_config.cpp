#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "paid/config.hpp"
#include "paid/error.hpp"

using namespace paid;

TEST(RunConfig, EmptyTextGivesDefaults) {
  const auto c = parse_run_config("");
  EXPECT_EQ(c.method, Method::peeraid);
  EXPECT_EQ(c.student_model, "mlp-s");
  EXPECT_EQ(c.train.epochs, 100);
  EXPECT_EQ(c.data_n, 3000u);
}

TEST(RunConfig, ParsesDottedKeysAndComments) {
  const auto c = parse_run_config(
      "# comment line\n"
      "run.id = alpha   # trailing comment\n"
      "seed = 7\n"
      "method = pgd-at\n"
      "train.epochs = 20\n"
      "train.lr_decay_epochs = 10, 15\n"
      "loss.tau_student = 2.5\n"
      "attack.train.epsilon = 0.05\n"
      "attack.train.random_start = false\n"
      "data.kind = two-moons\n");
  EXPECT_EQ(c.run_id, "alpha");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.method, Method::pgd_at);
  EXPECT_EQ(c.train.lr_decay_epochs, (std::vector<int>{10, 15}));
  EXPECT_EQ(c.train.loss.tau_student, 2.5);
  EXPECT_EQ(c.train.attack.epsilon, Real(0.05));
  EXPECT_FALSE(c.train.attack.random_start);
  EXPECT_EQ(c.data_kind, SyntheticKind::two_moons);
}

TEST(RunConfig, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW((void)parse_run_config("train.epoch = 3\n"), ConfigError);
  EXPECT_THROW((void)parse_run_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW((void)parse_run_config("seed\n"), ConfigError);
  EXPECT_THROW((void)parse_run_config("seed = abc\n"), ConfigError);
  EXPECT_THROW((void)parse_run_config("train.swa = maybe\n"), ConfigError);
  EXPECT_THROW((void)parse_run_config("method = mart\n"), ConfigError);
  EXPECT_THROW((void)parse_run_config("train.epochs = 10\n"), ConfigError);  // decays 50, 80 past the end
}

TEST(RunConfig, ReferencedFilesMustExist) {
  const auto dir = test::scratch_dir("config_files");
  EXPECT_THROW((void)parse_run_config("data.source = file\ndata.train = nope.paid\n", dir), ConfigError);
  { std::ofstream(dir / "train.paid") << "x"; }
  const auto c = parse_run_config("data.source = file\ndata.train = train.paid\n", dir);
  EXPECT_EQ(c.data_train, dir / "train.paid");
  EXPECT_THROW((void)parse_run_config("method = fixed-teacher-ad\n"), ConfigError);
}

TEST(RunConfig, RoundTripIsIdentityOnKeySet) {
  auto c = parse_run_config(
      "run.id = rt\nseed = 3\nmethod = trades\ntrain.epochs = 12\ntrain.lr_decay_epochs = 6\n"
      "loss.gamma2 = 0.3\nattack.epsilon_gap_fraction = 0.25\ntrain.swa = true\nbattery.pgd_long_steps = 50\n");
  const auto text = serialize_run_config(c);
  const auto again = parse_run_config(text);
  EXPECT_EQ(serialize_run_config(again), text);

  std::set<std::string> keys;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) keys.insert(line.substr(0, line.find(" = ")));
  const auto all = run_config_keys();
  EXPECT_EQ(keys, std::set<std::string>(all.begin(), all.end()));
}

TEST(RunConfig, LoadResolvesRelativeToFile) {
  const auto dir = test::scratch_dir("config_load");
  { std::ofstream(dir / "run.cfg") << "out = results\n"; }
  EXPECT_EQ(load_run_config(dir / "run.cfg").out, dir / "results");
  EXPECT_THROW((void)load_run_config(dir / "missing.cfg"), ConfigError);
}

TEST(RunData, SyntheticSplitsAndGapBudgets) {
  const auto c = parse_run_config(
      "data.n = 300\ndata.test_n = 100\nattack.epsilon_gap_fraction = 0.25\ntrain.epochs = 2\n"
      "train.lr_decay_epochs = 1\n");
  const auto data = prepare_data(c);
  EXPECT_EQ(data.train.size(), 300u);
  EXPECT_EQ(data.test.size(), 100u);
  ASSERT_TRUE(data.class_gap.has_value());
  EXPECT_NE(data.train.inputs.slice_rows(0, 100), data.test.inputs);
  const auto r = resolve_budgets(c, data);
  const Real eps = Real(0.25) * *data.class_gap;
  EXPECT_EQ(r.train.attack.epsilon, eps);
  EXPECT_EQ(r.train.attack.step_size, eps / 4);
  EXPECT_EQ(r.train.val_attack.epsilon, eps);
  EXPECT_EQ(r.eval_attack.epsilon, eps);
  EXPECT_EQ(r.battery.pgd_long.epsilon, eps);
  EXPECT_EQ(r.battery.unbounded_step_size, eps / 4);
}

TEST(RunData, GapBudgetNeedsBlobs) {
  const auto c = parse_run_config("data.kind = ring\ndata.n = 90\ndata.test_n = 30\nattack.epsilon_gap_fraction = 0.25\n");
  EXPECT_THROW((void)resolve_budgets(c, prepare_data(c)), ConfigError);
}

TEST(RunData, EvalAttacksFollowKeys) {
  const auto c = parse_run_config("attack.eval.steps = 7\nattack.eval.cw_c = 0.5\n");
  const auto attacks = eval_attacks(c);
  ASSERT_EQ(attacks.size(), 4u);
  EXPECT_EQ(attacks[0].name, "fgsm");
  EXPECT_EQ(attacks[1].name, "pgd7");
  EXPECT_EQ(attacks[3].cfg.c_balance, Real(0.5));
}
