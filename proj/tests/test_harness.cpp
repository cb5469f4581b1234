#include "mppca/harness.hpp"
#include "mppca/io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

using namespace mppca;
using namespace mppca::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "mppca_harness_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json read_json(const fs::path& p) { return json::parse(io::read_text_file(p.string())); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MPPCA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

CommandContext small_crp(const std::string& out) {
  CommandContext ctx;
  ctx.seed = 3;
  ctx.out_dir = out;
  ctx.config = {{"sequences", 2000}, {"stick_draws", 2000}, {"chi2_runs", 20}, {"chi2_customers", 500}};
  return ctx;
}

}  // namespace

TEST(Manifest, GitBlobHash) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Manifest, MergeRejectsUnknownKeys) {
  const json d = {{"a", 1}, {"b", {{"c", 2}}}};
  EXPECT_EQ(merge_config(d, {{"b", {{"c", 5}}}})["b"]["c"], 5);
  try {
    merge_config(d, {{"b", {{"x", 1}}}});
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("b.x"), std::string::npos);
  }
}

TEST(Manifest, RecordsHashesOfWrittenFiles) {
  const fs::path dir = scratch_dir("crp");
  run_crp_check(small_crp(dir.string()));
  const json m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["command"], "crp-check");
  EXPECT_EQ(m["seed"], 3);
  EXPECT_EQ(m["config"]["sequences"], 2000);
  ASSERT_EQ(m["outputs"].size(), 1u);
  const std::string name = m["outputs"][0]["name"];
  EXPECT_EQ(m["outputs"][0]["sha1"], git_blob_sha1(io::read_text_file((dir / name).string())));
}

TEST(Determinism, SameSeedSameBytes) {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  run_crp_check(small_crp(a.string()));
  run_crp_check(small_crp(b.string()));
  EXPECT_EQ(io::read_text_file((a / "manifest.json").string()), io::read_text_file((b / "manifest.json").string()));

  CommandContext s1;
  s1.seed = 5;
  s1.config = {{"samples", 500}, {"noise_sd", {0.4, 1.0}}, {"distances", {1.0}}};
  s1.out_dir = a.string();
  run_sim1(s1);
  const std::string first = io::read_text_file((a / "sim1.csv").string());
  s1.out_dir = b.string();
  run_sim1(s1);
  EXPECT_EQ(first, io::read_text_file((b / "sim1.csv").string()));
  s1.seed = 6;
  s1.out_dir = b.string();
  run_sim1(s1);
  EXPECT_NE(first, io::read_text_file((b / "sim1.csv").string()));
}

TEST(Sim1, CsvRoundTripsThroughTable) {
  const fs::path dir = scratch_dir("sim1");
  CommandContext ctx;
  ctx.seed = 1;
  ctx.config = {{"samples", 200}, {"noise_sd", {1.0}}, {"distances", {0.5, 2.0}}};
  ctx.out_dir = dir.string();
  const Sim1Result r = run_sim1(ctx);
  const io::Table t = io::read_table((dir / "sim1.csv").string(), true);
  ASSERT_EQ(t.values.rows(), static_cast<Index>(r.cells.size()));
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    EXPECT_EQ(t.labels[i], r.cells[i].configuration);
    EXPECT_EQ(t.values(static_cast<Index>(i), 3), r.cells[i].accuracy);
  }
  EXPECT_EQ(r.cell("dim2", 1.0, 2.0, 1).configuration, "dim2");
}

TEST(Deep, MalformedLabelRowIsNamed) {
  const fs::path dir = scratch_dir("deep_bad");
  io::write_text_file((dir / "emb.csv").string(), "a,1,0\nb,0,1\nc,1,1\n");
  io::write_text_file((dir / "lab.csv").string(), "a,1,0\nb,0.5,0.3\nc,0,1\n");
  CommandContext ctx;
  ctx.config = {{"embeddings", (dir / "emb.csv").string()}, {"labels", (dir / "lab.csv").string()}};
  try {
    run_deep(ctx);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2 (id b)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0.8"), std::string::npos) << msg;
  }
}

TEST(Deep, SyntheticRunReplays) {
  CommandContext ctx;
  ctx.seed = 2;
  ctx.config = {{"epochs", 5}};
  const DeepResult a = run_deep(ctx), b = run_deep(ctx);
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_EQ(a.heads_json, b.heads_json);
  EXPECT_EQ(a.train_loss.size(), 6u);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli");
  const std::string cfg = (dir / "cfg.json").string();
  io::write_text_file(cfg, R"({"stick_draws": 2000, "chi2_runs": 20, "chi2_customers": 500})");
  EXPECT_EQ(run_cli("crp-check --samples 2000 --config " + cfg + " --out " + (dir / "ok").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "manifest.json"));

  const std::string bad = (dir / "bad.json").string();
  io::write_text_file(bad, R"({"no_such_key": 1})");
  EXPECT_EQ(run_cli("crp-check --config " + bad + " --out " + (dir / "bad").string()), 2);
  EXPECT_NE(run_cli("crp-check --config " + (dir / "missing.json").string()), 0);
  EXPECT_NE(run_cli("no-such-command"), 0);
  EXPECT_NE(run_cli("crp-check --samples 0"), 0);
}
