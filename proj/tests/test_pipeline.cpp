#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.h"
#include "meshmodes/pipeline.h"

using namespace meshmodes;

TEST_CASE("split rules") {
  const SplitRule nth = SplitRule::parse("every-nth:10");
  CHECK(nth.training(50) == std::vector<int>{0, 10, 20, 30, 40});
  CHECK(nth.testing(50).size() == 45);
  CHECK(SplitRule::parse(nth.to_string()).training(50) == nth.training(50));

  const SplitRule tenth = SplitRule::parse("ratio:0.1");
  CHECK(tenth.training(50) == std::vector<int>{0, 10, 20, 30, 40});
  CHECK(SplitRule::parse("ratio:0.25").training(9) == std::vector<int>{0, 4, 8});
  CHECK(SplitRule::parse("ratio:1").testing(7).empty());

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double r = u(rng);
    std::ostringstream text;
    text.precision(17);
    text << "ratio:" << r;
    const SplitRule rule = SplitRule::parse(text.str());
    const int count = 2 + trial;
    const auto train = rule.training(count);
    const auto test = rule.testing(count);
    CHECK(train.size() + test.size() == static_cast<std::size_t>(count));
    CHECK(train.front() == 0);
    CHECK(static_cast<double>(train.size()) == std::floor((count - 1) * r) + 1.0);
  }

  for (const char* bad : {"every-nth:0", "ratio:0", "ratio:1.5", "foo:3", "every-nth:3x",
                          "every-nth", "ratio:", ""}) {
    CHECK_THROWS_AS(SplitRule::parse(bad), UsageError);
  }
}

TEST_CASE("run config") {
  const auto j = nlohmann::json::parse(R"({
    "data": "d", "cache": "c.bin", "checkpoint": "m.mdca", "out": "o",
    "split": "ratio:0.2", "shapes": 30, "epochs": 17, "kz": [6, 5], "seed": 9,
    "bar": {"segments": 8, "ring_vertices": 5}
  })");
  const RunConfig rc = RunConfig::from_json(j);
  CHECK(rc.data == "d");
  CHECK(rc.cache == "c.bin");
  CHECK(rc.checkpoint == "m.mdca");
  CHECK(rc.out == "o");
  CHECK(rc.split.to_string() == SplitRule::parse("ratio:0.2").to_string());
  CHECK(rc.shapes == 30);
  CHECK(rc.train.epochs == 17);
  CHECK(rc.train.kz0 == 6);
  CHECK(rc.train.kz1 == 5);
  CHECK(rc.train.seed == 9);
  CHECK(rc.bar.segments == 8);
  CHECK(rc.bar.ring_vertices == 5);

  CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::array()), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json({{"no_such_key", 1}}), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json({{"data", 5}}), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json({{"shapes", 0}}), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json({{"split", "sometimes"}}), UsageError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.json"), UsageError);

  const auto path = std::filesystem::temp_directory_path() / "meshmodes_test_config.json";
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(RunConfig::load(path.string()), UsageError);
  {
    std::ofstream out(path);
    out << j.dump();
  }
  CHECK(RunConfig::load(path.string()).train.kz0 == 6);
  std::filesystem::remove(path);
}

TEST_CASE("loss log csv") {
  std::vector<LossRow> log(3);
  for (int i = 0; i < 3; ++i) {
    log[i].step = i;
    log[i].loss.first.recon = 0.1 / (i + 1);
    log[i].loss.second.sparsity = 1.0 / 3.0;
    log[i].loss.total = std::acos(-1.0) * i;
  }
  const std::string csv = loss_log_csv(log);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,recon0,sparsity0,nontrivial0,recon_second,sparsity_second,nontrivial_second,total");
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<double> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(std::stod(cell));
    REQUIRE(cells.size() == 8);
    CHECK(cells[0] == rows);
    CHECK(cells[1] == log[rows].loss.first.recon);
    CHECK(cells[5] == log[rows].loss.second.sparsity);
    CHECK(cells[7] == log[rows].loss.total);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("training and evaluation pipeline") {
  const auto& f = fixtures::trained();
  CHECK(f.model.scaler.to_json() == FeatureScaler::fit(f.raw_train).to_json());
  CHECK(f.model.components.size() == 4 + 4 * 3);

  const ModelRuntime rt(f.model);
  std::vector<TriangleMesh> ground;
  std::vector<FeatureMatrix> raw;
  for (int i = 1; i < 30; i += 3) {
    ground.push_back(f.data.meshes[i]);
    raw.push_back(f.encoded.raw[i]);
  }
  const auto recon = reconstruct_shapes(rt, raw);
  REQUIRE(recon.size() == ground.size());
  for (const auto& m : recon) CHECK(m.faces == f.data.meshes[0].faces);

  const EvalReport report = evaluate_model(rt, ground, raw);
  CHECK(report.per_shape_e_rms.size() == ground.size());
  CHECK(std::isfinite(report.e_rms));
  CHECK(report.e_rms > 0.0);
  CHECK(report.percentage < 0.05);
  // Same numbers through the mesh-only path, up to OBJ-free recomputation.
  const EvalReport direct = evaluate_meshes(f.data.meshes[0], ground, recon);
  CHECK(direct.e_rms == doctest::Approx(report.e_rms).epsilon(1e-9));
  CHECK(direct.sted.total() == doctest::Approx(report.sted.total()).epsilon(1e-9));

  const EvalReport self = evaluate_meshes(f.data.meshes[0], ground, ground);
  CHECK(self.e_rms == 0.0);
  CHECK(self.sted.total() == 0.0);
  CHECK(self.percentage == 0.0);

  raw.pop_back();
  CHECK_THROWS_AS(evaluate_model(rt, ground, raw), DataError);
  CHECK_THROWS_AS(evaluate_meshes(f.data.meshes[0], ground, {}), DataError);
  CHECK_THROWS_AS(train_model(f.data.meshes[0], {}, TrainConfig{}), UsageError);
}
