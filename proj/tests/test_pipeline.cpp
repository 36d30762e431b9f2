#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "fixtures.hpp"
#include "rlab/common/errors.hpp"
#include "rlab/pipeline/pipeline.hpp"
#include "rlab/report/csv.hpp"

using namespace rlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return {{"seed", 3},
          {"corpus", {{"synthetic", {{"n_relations", 3}, {"n_subjects", 6}}}}},
          {"model", {{"train", {{"n_layers", 2}, {"d_model", 32}, {"steps", 1500}}}}},
          {"harvest", {{"languages", {"xa", "yb"}}}}};
}

json full_config() {
  auto c = small_config();
  c["experiments"] = {{"trace", {{"samples", 2}, {"max_examples", 3}}},
                      {"knockout", {{"partitions", {"subject", "last"}}}},
                      {"extract", json::object()},
                      {"patch", {{{"condition", 1}, {"patch_lang", "xa"}, {"max_pairs", 20}},
                                 {{"condition", 2}, {"patch_lang", "xa"}, {"context_lang", "yb"}, {"max_pairs", 20}}}}};
  return c;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = report::read_text(e.path());
  }
  return out;
}

std::vector<std::string> kinds(const std::vector<report::ExperimentManifest>& ms) {
  std::vector<std::string> out;
  for (const auto& m : ms) out.push_back(m.kind);
  return out;
}

}  // namespace

TEST_CASE("a config without experiments stops after harvesting") {
  const auto dir = fixtures::temp_dir("pipeline_harvest_only");
  const auto r = pipeline::run_pipeline(small_config(), dir);
  CHECK(kinds(r.manifests) == std::vector<std::string>{"corpus", "train-toy", "harvest", "harvest"});
  CHECK(kinds(report::read_manifests(dir / "manifests.jsonl")) == kinds(r.manifests));
  for (const auto& m : r.manifests) {
    CHECK(m.status == "complete");
    for (const auto& o : m.outputs) CHECK(fs::exists(dir / o));
  }
  CHECK(fs::exists(dir / "harvest/xa.jsonl"));
  CHECK_FALSE(fs::exists(dir / "plots"));
}

TEST_CASE("full runs resume and reproduce byte for byte") {
  const auto a = fixtures::temp_dir("pipeline_a");
  const auto b = fixtures::temp_dir("pipeline_b");
  const auto first = pipeline::run_pipeline(full_config(), a);
  const auto k = kinds(first.manifests);
  for (const auto* want : {"trace", "knockout", "extract", "patch", "report"}) {
    CHECK(std::find(k.begin(), k.end(), want) != k.end());
  }
  const auto before = tree(a);

  const auto again = pipeline::run_pipeline(full_config(), a);
  CHECK(again.manifests.empty());
  CHECK(again.skipped.size() == first.manifests.size());
  CHECK(tree(a) == before);

  pipeline::run_pipeline(full_config(), b);
  CHECK(tree(b) == before);
}

TEST_CASE("an interrupted stage leaves a partial manifest and the rest resumes") {
  const auto dir = fixtures::temp_dir("pipeline_partial");
  auto bad = small_config();
  bad["experiments"] = {{"extract", json::object()},
                        {"patch", {{{"condition", 2}, {"patch_lang", "xa"}, {"context_lang", "xa"}}}}};
  CHECK_THROWS_AS(pipeline::run_pipeline(bad, dir), ConfigError);
  const auto ms = report::read_manifests(dir / "manifests.jsonl");
  REQUIRE_FALSE(ms.empty());
  CHECK(ms.back().kind == "patch");
  CHECK(ms.back().status == "partial");
  CHECK(ms.back().outputs.empty());
  CHECK_FALSE(ms.back().error.empty());

  bad["experiments"]["patch"][0]["context_lang"] = "yb";
  const auto r = pipeline::run_pipeline(bad, dir);
  CHECK(std::find(r.skipped.begin(), r.skipped.end(), "extract:xa") != r.skipped.end());
  CHECK(kinds(r.manifests) == std::vector<std::string>{"patch", "report"});
}

TEST_CASE("a changed stage config in the same directory is refused before writing") {
  const auto dir = fixtures::temp_dir("pipeline_changed");
  auto c = small_config();
  c["experiments"] = {{"extract", json::object()}};
  pipeline::run_pipeline(c, dir);
  const auto before = report::read_text(dir / "extract/xa/profile.csv");
  c["harvest"]["max_prefix"] = 2;
  CHECK_THROWS_AS(pipeline::run_pipeline(c, dir), ConfigError);
  CHECK(report::read_text(dir / "extract/xa/profile.csv") == before);
}

TEST_CASE("config validation") {
  const auto dir = fixtures::temp_dir("pipeline_config");
  auto c = small_config();
  c["experimentz"] = json::object();
  CHECK_THROWS_AS(pipeline::run_pipeline(c, dir), ConfigError);
  CHECK_THROWS_AS(pipeline::run_pipeline(json::array(), dir), ConfigError);
  report::write_text(dir / "bad.json", "{\"seed\": ");
  CHECK_THROWS_AS(pipeline::load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(pipeline::make_backend("carrier-pigeon", nullptr), ConfigError);
}

TEST_CASE("command line smoke test") {
  const auto dir = fixtures::temp_dir("pipeline_cli");
  const std::string cli = RLAB_CLI;
  const auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
  };
  CHECK(run("corpus synth --relations 2 --subjects 4 --out " + (dir / "corpus").string()) == 0);
  CHECK(run("corpus stats --corpus " + (dir / "corpus").string()) == 0);
  CHECK(report::read_text(dir / "log.txt").find("xa") != std::string::npos);
  CHECK(run("corpus stats --corpus " + (dir / "nowhere").string()) != 0);
  CHECK(report::read_text(dir / "log.txt").starts_with("error: "));
  CHECK(run("no-such-verb") != 0);
  report::write_text(dir / "cfg.json", small_config().dump());
  CHECK(run("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out/manifests.jsonl"));
  CHECK(run("serve-check --backend native --model " + (dir / "out/model/card.json").string()) == 0);
  CHECK(report::read_text(dir / "log.txt").find("FAIL") == std::string::npos);
  CHECK(run("serve-check --backend remote:127.0.0.1:1 --model " + (dir / "out/model/card.json").string()) != 0);
}
