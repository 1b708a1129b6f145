#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "routerank/pipeline.hpp"

using namespace routerank;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ROUTERANK_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("routerank_unit_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("splits have exact sizes and are seeded") {
  const auto s = assign_splits(1000, 0.8, 0.1, 3);
  std::size_t counts[3] = {0, 0, 0};
  for (Split x : s) ++counts[static_cast<int>(x)];
  CHECK(counts[0] == 800);
  CHECK(counts[1] == 100);
  CHECK(counts[2] == 100);
  CHECK(assign_splits(1000, 0.8, 0.1, 3) == s);
  CHECK(assign_splits(1000, 0.8, 0.1, 4) != s);
  CHECK(split_from_string(to_string(Split::kVal)) == Split::kVal);
}

TEST_CASE("config json round trip and strict keys") {
  PipelineConfig c;
  c.apply_seed(42);
  c.world.n_users = 7;
  c.model.deep_hidden = {9, 3};
  Json j;
  to_json(j, c);
  PipelineConfig back;
  from_json(j, back);
  Json again;
  to_json(again, back);
  CHECK(j == again);
  CHECK(back.seed == 42);
  CHECK(back.model.seed == 42);

  Json bad = j;
  bad["typo"] = 1;
  CHECK_THROWS_AS(from_json(bad, back), SchemaError);
  bad = j;
  bad["world"]["n_userz"] = 3;
  CHECK_THROWS_AS(from_json(bad, back), SchemaError);
  bad = j;
  bad["train_frac"] = "lots";
  CHECK_THROWS_AS(from_json(bad, back), SchemaError);

  c.train_frac = 0.95;
  c.val_frac = 0.1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("cli exit codes") {
  const auto dir = fresh_dir("cli");
  CHECK(run_cli("--out " + dir.string() + " eval") == 3);
  CHECK(run_cli("--out " + dir.string() + " train") == 3);
  CHECK(run_cli("--bogus-flag gen") == 2);
  CHECK(run_cli("--config " + (dir / "nope.json").string() + " --out " + dir.string() + " gen") == 3);

  std::ofstream(dir / "bad.json") << R"({"seed": 1, "wrold": {}})";
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " --out " + dir.string() + " gen") == 4);
}

TEST_CASE("tampered upstream artifacts are refused") {
  const auto dir = fresh_dir("tamper");
  const std::string base = std::string("--config ") + ROUTERANK_TEST_DATA + "/tiny.json --quiet --out " + dir.string();
  REQUIRE(run_cli(base + " gen") == 0);
  CHECK_NOTHROW(verify_stage(dir, "gen"));
  {
    std::ofstream f(dir / "users.jsonl", std::ios::app);
    f << "\n";
  }
  CHECK_THROWS_AS(verify_stage(dir, "gen"), SchemaError);
  CHECK(run_cli(base + " extract") == 4);

  fs::remove(dir / "users.jsonl");
  CHECK_THROWS_AS(verify_stage(dir, "gen"), MissingInput);
  fs::remove_all(dir);
}
