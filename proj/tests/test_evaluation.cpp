#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "eviadapt/evaluation.hpp"

using namespace eviadapt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& tag) {
  const auto d = fs::temp_directory_path() / ("eviadapt_eval_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

// Units whose every label is `rul`; a zero encoder with head bias gamma = 1 and
// label_scale = rul then predicts every label exactly.
DomainDataset constant_label_dataset(double rul, EvalProtocol protocol) {
  DomainDataset ds;
  ds.name = "flat";
  ds.window_length = 5;
  ds.protocol = protocol;
  for (int k = 1; k <= 3; ++k) {
    UnitSeries u;
    u.unit = k;
    const int t = 8 + 3 * k;
    u.total_life = t;
    u.sensors = Matrix(static_cast<std::size_t>(t), 2, 0.5);
    for (int c = 1; c <= t; ++c) {
      u.cycles.push_back(c);
      u.rul.push_back(rul);
    }
    ds.units.push_back(u);
  }
  ds.normalization = Normalization::fit(ds.units);
  ds.reindex();
  return ds;
}

}  // namespace

TEST(Rmse, Examples) {
  const std::vector<double> y = {1, 2, 3};
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_DOUBLE_EQ(rmse(std::vector<double>{3.5, 4.5, 5.5}, y), 2.5);
  EXPECT_DOUBLE_EQ(rmse(std::vector<double>{-1.5, -0.5, 0.5}, y), 2.5);
  EXPECT_NEAR(rmse(std::vector<double>{3, 4}, std::vector<double>{0, 0}), 3.5355339059327378, 1e-15);
  EXPECT_THROW(rmse(std::vector<double>{1}, y), ShapeError);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), UsageError);
}

TEST(Score, Examples) {
  const std::vector<double> y = {50, 20};
  EXPECT_EQ(score(y, y), 0.0);
  EXPECT_NEAR(score(std::vector<double>{60}, std::vector<double>{50}), std::exp(1.0) - 1, 1e-15);
  EXPECT_NEAR(score(std::vector<double>{37}, std::vector<double>{50}), std::exp(1.0) - 1, 1e-15);
  EXPECT_THROW(score(std::vector<double>{1}, y), ShapeError);
}

TEST(Score, MonotoneAndAsymmetric) {
  double prev_late = 0.0, prev_early = 0.0;
  for (double d = 0.25; d < 60; d += 0.25) {
    const double late = score(std::vector<double>{100 + d}, std::vector<double>{100});
    const double early = score(std::vector<double>{100 - d}, std::vector<double>{100});
    EXPECT_GT(late, prev_late);
    EXPECT_GT(early, prev_early);
    EXPECT_GT(late, early);
    prev_late = late, prev_early = early;
  }
}

TEST(Metrics, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0, 130);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(17), y(17);
    for (std::size_t i = 0; i < 17; ++i) p[i] = std::round(d(rng)), y[i] = std::round(d(rng));
    std::vector<std::size_t> order(17);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> p2, y2;
    for (std::size_t i : order) p2.push_back(p[i]), y2.push_back(y[i]);
    EXPECT_NEAR(rmse(p, y), rmse(p2, y2), 1e-12);
    EXPECT_NEAR(score(p, y), score(p2, y2), 1e-9 * (1 + score(p, y)));
  }
}

TEST(EvaluateModel, ExactPredictorScoresZero) {
  const QuantileSet q;
  const LstmEncoder enc = LstmEncoder::zeros({2, 1, 4, 0.0});
  EvidentialHead head = EvidentialHead::zeros(4, q);
  for (std::size_t c = 0; c < q.size(); ++c) head.parameters()[1].value(0, c) = 1.0;  // gamma bias
  for (auto protocol : {EvalProtocol::AllWindows, EvalProtocol::LastWindow}) {
    const auto ds = constant_label_dataset(42.0, protocol);
    const auto e = evaluate_model(enc, head, ds, 42.0);
    EXPECT_EQ(e.rmse, 0.0);
    EXPECT_EQ(e.score, 0.0);
    EXPECT_EQ(e.predictions.size(), protocol == EvalProtocol::LastWindow ? 3u : ds.size());
  }
}

TEST(EvaluateModel, LastWindowOnePredictionPerUnit) {
  const auto ds = constant_label_dataset(10.0, EvalProtocol::LastWindow);
  const LstmEncoder enc({2, 1, 4, 0.0}, 1);
  const EvidentialHead head(4, QuantileSet(), 2);
  const auto e = evaluate_model(enc, head, ds);
  ASSERT_EQ(e.predictions.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(e.predictions[k].id.unit, static_cast<int>(k + 1));
    EXPECT_EQ(e.predictions[k].id.cycle, ds.units[k].cycles.back());
  }
}

TEST(EvaluateModel, DeterministicAndRejectsUnlabeled) {
  auto ds = constant_label_dataset(10.0, EvalProtocol::AllWindows);
  const LstmEncoder enc({2, 2, 6, 0.5}, 1);
  const EvidentialHead head(6, QuantileSet(), 2);
  const auto a = evaluate_model(enc, head, ds, 130.0);
  const auto b = evaluate_model(enc, head, ds, 130.0);
  EXPECT_EQ(a.rmse, b.rmse);
  EXPECT_EQ(a.score, b.score);
  for (std::size_t i = 0; i < a.predictions.size(); ++i)
    EXPECT_EQ(a.predictions[i].predicted, b.predictions[i].predicted);

  // Chunking is invisible in the predictions.
  const auto ids = ds.evaluation_ids();
  EXPECT_EQ(predict_rul(enc, head, ds, ids, 1.0, 3), predict_rul(enc, head, ds, ids, 1.0, 1000));

  for (auto& u : ds.units) u.rul.clear();
  EXPECT_THROW(evaluate_model(enc, head, ds), DataError);
}

TEST(ResultRecord, MeansAreArithmetic) {
  ResultRecord r{"A->B", "S-Unc", {1, 2, 3}, {10, 20, 33}, {1, 2, 6}, "config.json", {}};
  EXPECT_DOUBLE_EQ(r.mean_rmse(), 21.0);
  EXPECT_DOUBLE_EQ(r.mean_score(), 3.0);
}

TEST(EmitReport, TwelveScenarioLayout) {
  std::vector<ResultRecord> records;
  for (int s = 1; s <= 4; ++s)
    for (int t = 1; t <= 4; ++t) {
      if (s == t) continue;
      const std::string sc = "FD00" + std::to_string(s) + "->FD00" + std::to_string(t);
      records.push_back({sc, "S-Unc", {1, 2}, {10.0 + s, 12.0 + t}, {100.0, 200.0}, "config.json", {}});
    }
  ASSERT_EQ(records.size(), 12u);
  const auto dir = fresh_dir("layout");
  const auto paths = emit_report(records, dir);
  EXPECT_EQ(paths.size(), 2u + 12u * 2u);

  std::ifstream md(dir / "comparison.md");
  std::string line;
  std::getline(md, line);
  EXPECT_EQ(line, "## RMSE");
  std::getline(md, line);
  std::getline(md, line);
  // variant column + 12 scenarios + Avg. = 14 cells -> 15 pipes
  EXPECT_EQ(std::count(line.begin(), line.end(), '|'), 15);
  EXPECT_NE(line.find("Avg."), std::string::npos);
  EXPECT_NE(line.find("FD001->FD002"), std::string::npos);

  std::ifstream csv(dir / "results.csv");
  std::getline(csv, line);
  EXPECT_EQ(line, "scenario,variant,seed,rmse,score");
  std::getline(csv, line);
  EXPECT_EQ(line, "FD001->FD002,S-Unc,1,11,100");
  int rows = 1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 12 * 3);
  fs::remove_all(dir);
}

TEST(EmitReport, EmptyVariantOmitsColumn) {
  const std::vector<ResultRecord> records = {{"A->B", "", {1}, {5.0}, {2.0}, "", {}},
                                             {"C->D", "", {1}, {7.0}, {4.0}, "", {{"loss", {3, 2, 1}}}}};
  const auto dir = fresh_dir("novariant");
  emit_report(records, dir);
  const std::string md = slurp(dir / "comparison.md");
  EXPECT_EQ(md.find("variant"), std::string::npos);
  EXPECT_NE(md.find("| A->B | C->D | Avg. |"), std::string::npos) << md;
  EXPECT_NE(md.find("| 5.00 | 7.00 | 6.00 |"), std::string::npos) << md;
  EXPECT_TRUE(fs::exists(dir / "C-_D_loss.svg"));
  EXPECT_FALSE(fs::exists(dir / "A-_B_loss.svg"));  // no curves recorded
  fs::remove_all(dir);
}

TEST(EmitReport, RerunIsByteIdentical) {
  const std::vector<ResultRecord> records = {
      {"src->tgt", "S-Unc", {1, 2, 3}, {1.0 / 3.0, 2.5, 7.125}, {0.1, 0.2, 0.3}, "config.json", {{"sea", {-1.2, -1.5}}}},
      {"src->tgt", "G-Unc", {1, 2, 3}, {4.0, 5.0, 6.0}, {1, 2, 3}, "config.json", {}}};
  const auto d1 = fresh_dir("a"), d2 = fresh_dir("b");
  const auto p1 = emit_report(records, d1);
  const auto p2 = emit_report(records, d2);
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].filename(), p2[i].filename());
    EXPECT_EQ(slurp(p1[i]), slurp(p2[i])) << p1[i];
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(EmitReport, Errors) {
  const std::vector<ResultRecord> records = {{"A->B", "", {1}, {5.0}, {2.0}, "", {}}};
  const auto blocker = fresh_dir("blocked");
  { std::ofstream(blocker) << "file, not a directory"; }
  EXPECT_THROW(emit_report(records, blocker / "sub"), DataError);
  fs::remove(blocker);
  EXPECT_THROW(emit_report({}, fresh_dir("empty")), UsageError);
}
