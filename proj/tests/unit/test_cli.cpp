#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "oracles.hpp"
#include "paid/dataset.hpp"
#include "paid/metrics.hpp"
#include "paid/model.hpp"

using namespace paid;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path write_config(const std::filesystem::path& dir, const std::string& method,
                                   const std::string& extra = "") {
  const auto p = dir / (method + ".cfg");
  std::ofstream(p) << "run.id = " << method << "\nmethod = " << method
                   << "\ndata.n = 300\ndata.test_n = 90\ntrain.epochs = 2\ntrain.lr_decay_epochs = 1\n"
                      "attack.epsilon_gap_fraction = 0.25\nattack.eval.cw_steps = 5\nbattery.pgd_long_steps = 20\n"
                      "battery.unbounded_steps = 20\n"
                   << extra;
  return p;
}

}  // namespace

TEST(Cli, NoOrUnknownSubcommandIsUsageError) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, UnknownFlagPrintsUsageToStderr) {
  const auto dir = test::scratch_dir("cli_flag");
  const auto cfg = write_config(dir, "natural");
  const auto r = run({"train", "--config", cfg.string(), "--bogus"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--config"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const auto dir = test::scratch_dir("cli_runtime");
  std::ofstream(dir / "bad.cfg") << "no.such.key = 1\n";
  const auto r = run({"train", "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("unknown key"), std::string::npos);
}

TEST(Cli, GenDataWritesLoadableFile) {
  const auto dir = test::scratch_dir("cli_gen");
  const auto r = run({"gen-data", "--kind", "ring", "--n", "60", "--seed", "4", "--out", (dir / "d.paid").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(load_dataset(dir / "d.paid").inputs, gen_synthetic(SyntheticKind::ring, 3, 60, 0.08, 4).data.inputs);
}

TEST(Cli, TrainWritesCheckpointsAndMetricsInsideOutDir) {
  const auto dir = test::scratch_dir("cli_train");
  const auto cfg = write_config(dir, "peeraid");
  const auto out = dir / "run";
  const auto r = run({"train", "--config", cfg.string(), "--out", out.string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const char* f : {"config.cfg", "test.paid", "metrics.jsonl", "student.ckpt", "best_student.ckpt", "peer.ckpt",
                        "best_peer.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  }
  EXPECT_FALSE(std::filesystem::exists(out / ".paid.lock"));
  std::size_t in_dir = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) in_dir += e.path() != out && e.path() != cfg;
  EXPECT_EQ(in_dir, 0u);

  const auto recs = read_metrics(out / "metrics.jsonl");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].payload.at("epoch"), 0);
  EXPECT_EQ(recs[1].payload.at("epoch"), 1);
  EXPECT_EQ(recs[2].kind, RecordKind::report);
  EXPECT_EQ(recs[2].tags.at("method"), "peeraid");

  // A second run into the same directory would duplicate epochs.
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--out", out.string()}).code, cli::kExitRuntime);
}

TEST(Cli, LockedDirectoryRefused) {
  const auto dir = test::scratch_dir("cli_lock");
  const auto cfg = write_config(dir, "natural");
  std::filesystem::create_directories(dir / "run");
  std::ofstream(dir / "run" / ".paid.lock") << "";
  const auto r = run({"train", "--config", cfg.string(), "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("locked"), std::string::npos);
}

TEST(Cli, TrainIsDeterministic) {
  const auto dir = test::scratch_dir("cli_det");
  const auto cfg = write_config(dir, "pgd-at");
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.jsonl"), slurp(dir / "b" / "metrics.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "student.ckpt"), slurp(dir / "b" / "student.ckpt"));
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--seed", "5", "--out", (dir / "c").string()}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "student.ckpt"), slurp(dir / "c" / "student.ckpt"));
}

TEST(Cli, EvalAttackBatteryCrossRobAndReport) {
  const auto dir = test::scratch_dir("cli_tools");
  const auto cfg = write_config(dir, "natural");
  const auto out = dir / "run";
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", out.string()}).code, 0);
  const auto ckpt = (out / "best_student.ckpt").string();
  const auto data = (out / "test.paid").string();

  auto r = run({"eval", "--model", ckpt, "--data", data, "--config", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("clean"), std::string::npos);
  EXPECT_NE(r.out.find("pgd20"), std::string::npos);

  r = run({"attack", "--model", ckpt, "--data", data, "--attack", "fgsm", "--out", (dir / "adv.pait").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_raw_tensor(dir / "adv.pait").extent(0), 90u);

  r = run({"battery", "--model", ckpt, "--data", data, "--config", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* c : {"iteration_gap", "unbounded_attack", "fgsm_vs_pgd", "SKIP transfer_vs_whitebox"}) {
    EXPECT_NE(r.out.find(c), std::string::npos) << c;
  }

  r = run({"cross-rob", "--model", ckpt, "--model", (out / "student.ckpt").string(), "--data", data});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("best_student"), std::string::npos);

  r = run({"report", "--runs", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("method,runs,clean,fgsm,pgd20\nnatural,1,", 0), 0u) << r.out;
}

TEST(Cli, ReportOnEmptyTreeStillEmitsHeader) {
  const auto dir = test::scratch_dir("cli_report_empty");
  const auto r = run({"report", "--runs", dir.string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "method,runs,clean,fgsm,pgd20\n");
}
