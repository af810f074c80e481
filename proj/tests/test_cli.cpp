#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eviadapt/cli.hpp"

using namespace eviadapt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "eviadapt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int spawn(const std::string& args) {
  const int status = std::system((std::string(EVIADAPT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  const auto d = fs::temp_directory_path() / ("eviadapt_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Partial config merged onto the benchmark preset; small enough for a unit test.
fs::path tiny_config_file(const fs::path& dir) {
  const auto p = dir / "tiny.json";
  std::ofstream(p) << R"({
  "encoder": {"input-channels": 4, "layers": 1, "hidden-size": 8, "dropout-rate": 0.0},
  "batch-size": 16, "pretrain-epochs": 50, "adapt-iterations": 5, "window-length": 10,
  "keep-fraction": 0.95, "seeds": [1, 2],
  "synthetic": {"units": 4, "test-units": 3, "sensors": 4, "life-min": 30, "life-max": 50}
})";
  return p;
}

std::vector<std::string> csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  return cells;
}

// generate -> pretrain -> adapt -> evaluate under `root`; returns the evaluate directory.
fs::path full_chain(const fs::path& root, const std::vector<std::string>& extra = {}) {
  const auto cfg = tiny_config_file(root).string();
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  const auto data = (root / "data").string();
  auto r = run_cli(with({"--config", cfg, "--out", data, "generate"}));
  EXPECT_EQ(r.code, 0) << r.err;
  r = run_cli(with({"--config", cfg, "--data-dir", data, "--out", (root / "pre").string(), "pretrain"}));
  EXPECT_EQ(r.code, 0) << r.err;
  r = run_cli(with({"--out", (root / "ad").string(), "adapt", "--checkpoint", (root / "pre" / "pretrained.ckpt").string()}));
  EXPECT_EQ(r.code, 0) << r.err;
  r = run_cli(with({"--out", (root / "ev").string(), "evaluate", "--checkpoint", (root / "ad" / "adapted.ckpt").string()}));
  EXPECT_EQ(r.code, 0) << r.err;
  return root / "ev";
}

}  // namespace

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(spawn("frobnicate"), 1);
  EXPECT_EQ(spawn("--help"), 0);
}

TEST(Cli, UnknownConfigKeysRejected) {
  const auto dir = fresh_dir("badkey");
  EXPECT_EQ(run_cli({"--hidden-units", "3", "generate"}).code, 1);
  EXPECT_EQ(run_cli({"--preset", "fast", "generate"}).code, 1);
  std::ofstream(dir / "bad.json") << R"({"encoder": {"width": 3}})";
  const auto r = run_cli({"--config", (dir / "bad.json").string(), "--out", (dir / "x").string(), "generate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("encoder.width"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"--adapt-lr", "-1", "--out", (dir / "y").string(), "generate"}).code, 1);
  EXPECT_FALSE(fs::exists(dir / "x"));
  fs::remove_all(dir);
}

TEST(Cli, EndToEndProducesFiniteResults) {
  const auto root = fresh_dir("chain");
  const auto ev = full_chain(root);
  for (const char* sub : {"data", "pre", "ad", "ev"}) EXPECT_TRUE(fs::exists(root / sub / "config.json")) << sub;
  EXPECT_TRUE(fs::exists(root / "ad" / "target_stages.csv"));

  std::ifstream csv(ev / "results.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "scenario,variant,seed,rmse,score");
  const auto cells = csv_row(row);
  ASSERT_EQ(cells.size(), 5u) << row;
  EXPECT_EQ(cells[1], "S-Unc");
  EXPECT_TRUE(std::isfinite(std::stod(cells[3])));
  EXPECT_TRUE(std::isfinite(std::stod(cells[4])));

  // The resolved config records the override and the checkpoint's settings.
  const json written = read_json_file(ev / "config.json");
  EXPECT_EQ(written.at("data-dir").get<std::string>(), (root / "data").string());
  EXPECT_EQ(written.at("encoder").at("hidden-size").get<int>(), 8);
  fs::remove_all(root);
}

TEST(Cli, SameSeedTwiceGivesIdenticalFiles) {
  const auto a = fresh_dir("seed_a"), b = fresh_dir("seed_b");
  const auto ea = full_chain(a, {"--seed", "7"});
  const auto eb = full_chain(b, {"--seed", "7"});
  EXPECT_EQ(read_json_file(ea / "config.json").at("seed").get<int>(), 7);
  for (const char* f : {"results.csv", "comparison.md", "predictions.csv"}) {
    const auto x = slurp(ea / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(eb / f)) << f;
  }
  EXPECT_EQ(slurp(a / "ad" / "adapt_loss.csv"), slurp(b / "ad" / "adapt_loss.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, OutputRootFromEnvironment) {
  const auto root = fresh_dir("env");
  ::setenv(cli::kOutEnv, root.c_str(), 1);
  const auto r = run_cli({"--config", tiny_config_file(root).string(), "generate"});
  ::unsetenv(cli::kOutEnv);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "generate" / "config.json"));
  fs::remove_all(root);
}

TEST(Cli, ErrorCategories) {
  const auto root = fresh_dir("errors");
  const auto cfg = tiny_config_file(root).string();
  EXPECT_EQ(run_cli({"--config", cfg, "--data-dir", (root / "missing").string(), "--out", (root / "p").string(),
                     "pretrain"}).code,
            2);
  std::ofstream(root / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run_cli({"--out", (root / "e").string(), "evaluate", "--checkpoint", (root / "junk.ckpt").string()}).code,
            2);
  EXPECT_EQ(run_cli({"evaluate"}).code, 1);  // --checkpoint is required

  const auto num = run_cli({"--config", cfg, "--label-scale", "1e-160", "--out", (root / "n").string(), "pretrain"});
  EXPECT_EQ(num.code, 3);
  EXPECT_NE(num.err.find("numerical error"), std::string::npos) << num.err;
  EXPECT_EQ(spawn("--config " + cfg + " --label-scale 1e-160 --out " + (root / "n2").string() + " pretrain"), 3);
  fs::remove_all(root);
}

TEST(Cli, AblateFailurePersistsPartials) {
  const auto root = fresh_dir("ablate_fail");
  const auto out = root / "ab";
  // Every target fraction lands in the last stage, so stage-wise alignment has no first-stage pool.
  const auto r = run_cli({"--config", tiny_config_file(root).string(), "--stages.target", "[0.0]", "--out", out.string(),
                          "ablate"});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_NE(r.err.find("pool is empty"), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(out / "config.json"));
  const std::string results = slurp(out / "results.csv");
  EXPECT_NE(results.find("Source-EVI,1,"), std::string::npos) << results;
  fs::remove_all(root);
}

TEST(Cli, AblateRunsAllVariants) {
  const auto root = fresh_dir("ablate");
  const auto r = run_cli({"--config", tiny_config_file(root).string(), "--adapt-iterations", "2", "--out",
                          (root / "ab").string(), "ablate"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* v : {"Source-EVI", "S-Unc", "G-Unc", "G-Fea"})
    EXPECT_NE(r.out.find(std::string(" ") + v + ":"), std::string::npos) << v << "\n" << r.out;
  fs::remove_all(root);
}

TEST(Cli, SweepTagsEachQuantileSet) {
  const auto root = fresh_dir("sweep");
  const auto r = run_cli({"--config", tiny_config_file(root).string(), "--adapt-iterations", "2", "--seeds", "[1]",
                          "--out", (root / "sw").string(), "sweep", "--quantile-sets", "[[0.25,0.5],[0.25,0.75]]"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(root / "sw" / "results.csv");
  EXPECT_NE(csv.find("q-0.25-0.5 S-Unc"), std::string::npos) << csv;
  EXPECT_NE(csv.find("q-0.25-0.75 S-Unc"), std::string::npos) << csv;
  EXPECT_EQ(run_cli({"--out", (root / "x").string(), "sweep", "--quantile-sets", "[0.5]"}).code, 1);
  fs::remove_all(root);
}
