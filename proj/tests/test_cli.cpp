#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int exit_code = -1;
  std::string stdout_text;
};

std::string fixture(const std::string& name) { return std::string(FIXTURE_DIR) + "/" + name; }

CliResult run_cli(const std::string& args) {
  const fs::path out = fs::temp_directory_path() /
                       ("align_cli_stdout_" + std::to_string(::getpid()) + ".txt");
  const std::string cmd =
      std::string(ALIGN_CLI_PATH) + " " + args + " > " + out.string() + " 2>/dev/null";
  const int raw = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WEXITSTATUS(raw);
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  result.stdout_text = ss.str();
  return result;
}

TEST(Cli, MatchSinglePair) {
  const CliResult r =
      run_cli("match --scene " + fixture("scene_1x1.json") + " --preds " + fixture("preds_1x1.json"));
  ASSERT_EQ(r.exit_code, 0) << r.stdout_text;
  const auto j = nlohmann::json::parse(r.stdout_text);
  ASSERT_EQ(j.at("pairs").size(), 1u);
  EXPECT_EQ(j.at("pairs")[0].at("pred"), 0);
  EXPECT_EQ(j.at("pairs")[0].at("gt"), 0);
  EXPECT_TRUE(j.at("unmatched").empty());
}

TEST(Cli, MatchManyToOneReplicates) {
  const CliResult r = run_cli("match --scene " + fixture("scene_2gt.json") + " --preds " +
                              fixture("preds_6x2.json") + " --k 3");
  ASSERT_EQ(r.exit_code, 0) << r.stdout_text;
  const auto j = nlohmann::json::parse(r.stdout_text);
  ASSERT_EQ(j.at("pairs").size(), 6u);
  int count[2] = {0, 0};
  for (const auto& pair : j.at("pairs")) ++count[pair.at("gt").get<int>()];
  EXPECT_EQ(count[0], 3);
  EXPECT_EQ(count[1], 3);
}

TEST(Cli, MatchAgreesWithOracle) {
  const std::string base =
      "match --scene " + fixture("scene_2gt.json") + " --preds " + fixture("preds_6x2.json");
  const CliResult solver = run_cli(base);
  const CliResult oracle = run_cli(base + " --oracle");
  ASSERT_EQ(solver.exit_code, 0);
  ASSERT_EQ(oracle.exit_code, 0);
  const auto js = nlohmann::json::parse(solver.stdout_text);
  const auto jo = nlohmann::json::parse(oracle.stdout_text);
  EXPECT_DOUBLE_EQ(js.at("total_cost").get<double>(), jo.at("total_cost").get<double>());
}

TEST(Cli, ParseErrorExitsTwo) {
  const fs::path bad = fs::temp_directory_path() / "align_cli_bad_scene.json";
  std::ofstream(bad) << "{\"classes\": 3, \"objects\": [";
  const CliResult r =
      run_cli("match --scene " + bad.string() + " --preds " + fixture("preds_1x1.json"));
  EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, InfeasibleReplicationExitsThree) {
  const CliResult match = run_cli("match --scene " + fixture("scene_2gt.json") + " --preds " +
                                  fixture("preds_6x2.json") + " --k 4");
  EXPECT_EQ(match.exit_code, 3);
  const CliResult loss = run_cli("loss --scene " + fixture("scene_2gt.json") + " --preds " +
                                 fixture("preds_6x2.json") + " --k 4");
  EXPECT_EQ(loss.exit_code, 3);
}

TEST(Cli, LossPerfectPredictionNearZero) {
  const CliResult r = run_cli("loss --scene " + fixture("scene_perfect.json") + " --preds " +
                              fixture("preds_perfect.json") + " --variant ia_bce");
  ASSERT_EQ(r.exit_code, 0) << r.stdout_text;
  const auto j = nlohmann::json::parse(r.stdout_text);
  const auto& layer = j.at("layers")[0];
  EXPECT_LE(layer.at("cls_pos").get<double>(), 1e-6);
  EXPECT_DOUBLE_EQ(layer.at("reg_l1").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(layer.at("reg_giou").get<double>(), 0.0);
}

TEST(Cli, LossReportsBothVariantsWithoutOrderingContract) {
  const std::string base = "loss --scene " + fixture("scene_perfect.json") + " --preds " +
                           fixture("preds_perfect.json");
  const CliResult ia = run_cli(base + " --variant ia_bce");
  const CliResult focal = run_cli(base + " --variant focal");
  ASSERT_EQ(ia.exit_code, 0);
  ASSERT_EQ(focal.exit_code, 0);
  // Reporting only: both parse and carry finite totals.
  EXPECT_TRUE(std::isfinite(nlohmann::json::parse(ia.stdout_text).at("total").get<double>()));
  EXPECT_TRUE(std::isfinite(nlohmann::json::parse(focal.stdout_text).at("total").get<double>()));
}

TEST(Cli, LossGoldenFile) {
  // Frozen output: generated once by this implementation, then pinned byte
  // for byte. Guards serialization, ordering and numeric formatting drift.
  const CliResult r = run_cli("loss --scene " + fixture("scene_2gt.json") + " --preds " +
                              fixture("preds_6x2.json") + " --variant ia_bce --k 2");
  ASSERT_EQ(r.exit_code, 0);
  std::ifstream golden(fixture("golden_loss.json"));
  ASSERT_TRUE(golden.good()) << "missing golden fixture";
  std::stringstream ss;
  ss << golden.rdbuf();
  EXPECT_EQ(r.stdout_text, ss.str());
}

TEST(Cli, GradcheckSubcommandPasses) {
  const CliResult r = run_cli("gradcheck --variant ia_bce --seeds 5 --tol 1e-4");
  EXPECT_EQ(r.exit_code, 0) << r.stdout_text;
  EXPECT_NE(r.stdout_text.find("PASS"), std::string::npos);
}

TEST(Cli, DiagnoseWritesCsvs) {
  const fs::path out_dir = fs::temp_directory_path() / "align_cli_diag";
  fs::remove_all(out_dir);
  const CliResult r = run_cli("diagnose --scene " + fixture("scene_2gt.json") + " --preds " +
                              fixture("preds_6x2.json") + " --bins 8 --out " + out_dir.string());
  ASSERT_EQ(r.exit_code, 0) << r.stdout_text;
  EXPECT_TRUE(fs::exists(out_dir / "recall.csv"));
  EXPECT_TRUE(fs::exists(out_dir / "density.csv"));
  EXPECT_TRUE(fs::exists(out_dir / "histograms.csv"));
  const auto j = nlohmann::json::parse(r.stdout_text);
  EXPECT_EQ(j.at("scenes"), 1);
  EXPECT_EQ(j.at("mode"), "mean");
}

TEST(Cli, TrainSmallConfigProducesTraceAndSummary) {
  const fs::path out_dir = fs::temp_directory_path() / "align_cli_train";
  fs::remove_all(out_dir);
  const fs::path cfg = fs::temp_directory_path() / "align_cli_train_cfg.json";
  std::ofstream(cfg) << R"({
    "scene": {"n_gt": 2, "seed": 5, "count": 2},
    "train": {"steps": 30, "n_queries": 12, "seed": 7},
    "criterion": {"variant": "ia_bce"},
    "output_dir": ")" << out_dir.string() << R"("
  })";
  const CliResult r = run_cli("train " + cfg.string());
  ASSERT_EQ(r.exit_code, 0) << r.stdout_text;
  EXPECT_TRUE(fs::exists(out_dir / "trace_base.csv"));
  EXPECT_TRUE(fs::exists(out_dir / "summary.json"));
  const auto j = nlohmann::json::parse(r.stdout_text);
  EXPECT_EQ(j.at("arms").size(), 1u);
  EXPECT_EQ(j.at("arms")[0].at("runs"), 2);
}

TEST(Cli, CompareRequiresVariants) {
  const fs::path cfg = fs::temp_directory_path() / "align_cli_cmp_novariants.json";
  std::ofstream(cfg) << R"({"scene": {"n_gt": 1}, "train": {"steps": 5, "n_queries": 6},
                           "output_dir": "unused"})";
  const CliResult r = run_cli("compare " + cfg.string());
  EXPECT_EQ(r.exit_code, 2);
}

}  // namespace
