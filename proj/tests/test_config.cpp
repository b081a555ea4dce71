#include <filesystem>
#include <fstream>
#include <sstream>

#include "divdir/checkpoint.hpp"
#include "divdir/config.hpp"
#include "doctest.h"

using namespace divdir;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("divdir_cfg_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json toy_doc() {
  return nlohmann::json::parse(R"({
    "command": "train",
    "data": {
      "train": {"kind": "synthetic", "count": 300, "features": 6, "classes": 3, "seed": 1, "margin": 1.0, "limit": 200},
      "test": {"kind": "synthetic", "count": 300, "features": 6, "classes": 3, "seed": 1, "margin": 1.0, "offset": 200}
    },
    "network": {"input_shape": [6], "layers": [
      {"kind": "dense", "units": 12, "activation": "relu", "bayesian": false},
      {"kind": "dense", "units": 3, "activation": "none", "bayesian": true}], "draws": 4},
    "train": {"epochs": 12, "batch_size": 25, "learning_rate": 0.02, "seed": 5},
    "eval": {"predict_draws": 4}
  })");
}

}  // namespace

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_NOTHROW(run_from_json(toy_doc()));
  for (const char* path : {"/bogus", "/data/validation", "/data/train/colour", "/train/penalty/lamda_M", "/eval/draws",
                           "/network/layers/0/size"}) {
    auto j = toy_doc();
    j[nlohmann::json::json_pointer(path)] = 1;
    CHECK_THROWS_WITH_AS(run_from_json(j), doctest::Contains("unknown key"), std::invalid_argument);
  }
  auto j = toy_doc();
  j["train"]["epochs"] = "many";
  CHECK_THROWS_AS(run_from_json(j), std::invalid_argument);
}

TEST_CASE("command requirements are checked before running") {
  auto j = toy_doc();
  j["command"] = "attack";
  CHECK_THROWS_WITH_AS(run_from_json(j), doctest::Contains("checkpoint"), std::invalid_argument);
  j["command"] = "sweep";
  j["checkpoint"] = "/nonexistent/model.bin";
  CHECK_THROWS_WITH_AS(run_from_json(j), doctest::Contains("not found"), std::invalid_argument);
  j = toy_doc();
  j["command"] = "gen-offline";
  CHECK_THROWS_WITH_AS(run_from_json(j), doctest::Contains("offline_adv"), std::invalid_argument);
  j = toy_doc();
  j["data"]["train"] = {{"kind", "idx"}, {"images", "/nonexistent"}, {"labels", "/nonexistent"}};
  CHECK_THROWS_WITH_AS(run_from_json(j), doctest::Contains("data.train.images"), std::invalid_argument);
}

TEST_CASE("sweep grids") {
  auto j = toy_doc();
  j["sweep"] = {{"eps", {0.0, 0.015, 0.035, 0.055, 0.07}}};
  const auto c = run_from_json(j);
  CHECK(c.sweep.eps == std::vector<double>{0.0, 0.015, 0.035, 0.055, 0.07});
  j["sweep"]["eps"] = {0.1, 0.1};
  CHECK_THROWS_WITH_AS(run_from_json(j), doctest::Contains("strictly increasing"), std::invalid_argument);

  SweepGrid g;
  CHECK(g.cell(0.005).alpha == 0.005);
  CHECK(g.cell(0.3).alpha == 0.01);
  CHECK(attack_kind(g.cell(0.3)) == "pgd");
  CHECK(attack_kind(AttackConfig::fgsm(0.3)) == "fgsm");
  CHECK(attack_kind(AttackConfig::fgm(0.3)) == "fgm");
  CHECK(attack_kind(AttackConfig::bim(0.3)) == "bim");

  SweepResult bad;
  bad.rows.push_back({"m", "pgd", Norm::linf, 0.2});
  bad.rows.push_back({"m", "pgd", Norm::linf, 0.1});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(model_id("/nonexistent/model.bin"), std::runtime_error);
}

TEST_CASE("overrides") {
  nlohmann::json doc = toy_doc();
  apply_override(doc, "train.epochs=3");
  apply_override(doc, "train.penalty.lambda_S=2.5");
  apply_override(doc, "run_dir=some/where");
  CHECK(doc["train"]["epochs"] == 3);
  CHECK(doc["train"]["penalty"]["lambda_S"] == 2.5);
  CHECK(doc["run_dir"] == "some/where");
  CHECK_THROWS_AS(apply_override(doc, "train.epochs.x=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(doc, "noequals"), std::invalid_argument);
}

TEST_CASE("resolved config echo round trips and names the run directory") {
  const auto c = run_from_json(toy_doc());
  CHECK(run_to_json(run_from_json(run_to_json(c))) == run_to_json(c));
  const auto dir = resolve_run_dir(c);
  CHECK(dir.string().rfind("runs/train-", 0) == 0);
  CHECK(resolve_run_dir(run_from_json(toy_doc())) == dir);
  auto j = toy_doc();
  j["train"]["seed"] = 6;
  CHECK(resolve_run_dir(run_from_json(j)) != dir);
}

TEST_CASE("end to end: data, train, sweep") {
  const auto root = scratch("e2e");

  auto gen = toy_doc();
  gen["command"] = "gen-data";
  gen["run_dir"] = (root / "data").string();
  run_command(run_from_json(gen));
  REQUIRE(fs::exists(root / "data" / "train.bin"));
  CHECK(load_dataset(root / "data" / "test.bin").size() == 100);
  CHECK_THROWS_WITH_AS(run_command(run_from_json(gen)), doctest::Contains("already in use"), std::invalid_argument);

  auto tr = toy_doc();
  tr["data"]["train"] = {{"kind", "container"}, {"path", (root / "data" / "train.bin").string()}};
  tr["data"]["test"] = {{"kind", "container"}, {"path", (root / "data" / "test.bin").string()}};
  tr["run_dir"] = (root / "train").string();
  const auto summary = run_command(run_from_json(tr));
  CHECK(summary["test"]["standard_accuracy"].get<double>() >= 0.9);
  CHECK(fs::exists(root / "train" / "config.json"));
  CHECK(fs::exists(root / "train" / "metrics.csv"));

  auto sw = tr;
  sw["command"] = "sweep";
  sw["checkpoint"] = (root / "train" / "checkpoint.bin").string();
  sw["sweep"] = {{"eps", {0.0, 0.1, 0.2, 0.3}}, {"steps", 20}, {"alpha", 0.02}, {"draws_for_gradient", 4}};
  sw["run_dir"] = (root / "sweep").string();
  const auto s = run_command(run_from_json(sw));
  const auto rows = s["rows"];
  REQUIRE(rows.size() == 4);
  CHECK(rows[0]["accuracy"] == summary["test"]["standard_accuracy"]);
  CHECK(s["non_increasing"].get<bool>());
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i]["accuracy"] <= rows[i - 1]["accuracy"]);
  const auto csv = slurp(root / "sweep" / "sweep.csv");
  CHECK(csv.rfind(std::string(kSweepHeader) + "\n", 0) == 0);
  CHECK(csv.find(model_id(root / "train" / "checkpoint.bin") + ",pgd,linf,0.10000000000000001,") != std::string::npos);

  // re-running from the echoed config reproduces the sweep exactly
  std::ifstream echo(root / "sweep" / "config.json");
  auto again = nlohmann::json::parse(echo);
  again["run_dir"] = (root / "sweep2").string();
  run_command(run_from_json(again));
  CHECK(slurp(root / "sweep2" / "sweep.csv") == csv);
  fs::remove_all(root);
}
