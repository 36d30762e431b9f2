#include <doctest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "fixtures.hpp"
#include "rlab/common/errors.hpp"
#include "rlab/corpus/aliases.hpp"

// after Eigen: httplib pulls in system macros Eigen trips over
#include <httplib.h>

using namespace rlab;
using namespace rlab::corpus;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

Corpus small_corpus() {
  Corpus c;
  c.languages = {"en"};
  c.templates = {{"P1", "en", "[X] lives in [Y]", 0, true},
                 {"P1", "en", "[Y] is home to [X]", 1, false},
                 {"P2", "en", "[X] speaks [Y] .", 2, false}};
  c.triplets = {{"Q1", "P1", "Q9"}, {"Q2", "P1", "Q9"}, {"Q1", "P2", "Q8"}};
  c.aliases = {{{"en", "Q1"}, {"Ann"}},
               {{"en", "Q2"}, {"Paris Hilton"}},
               {{"en", "Q9"}, {"Paris", "City of Light"}},
               {{"en", "Q8"}, {"French"}}};
  c.articles = {{{"en", "Q9"}, "the"}};
  return c;
}

}  // namespace

TEST_CASE("template rendering and object-final detection") {
  const Template t{"P1", "en", "[X] lives in [Y]", 0, true};
  CHECK(render(t, "Ann", "Paris") == "Ann lives in Paris");
  CHECK(render_query(t, "Ann") == "Ann lives in");
  CHECK(render_prefix(t, "Ann") == "Ann lives in");
  CHECK(is_object_final("[X] lives in [Y]  "));
  CHECK_FALSE(is_object_final("[X] lives in [Y] ."));
  const Template v{"P2", "en", "[X] speaks [Y] .", 0, false};
  CHECK(render_query(v, "Ann") == "Ann speaks.");
  CHECK(render_prefix(v, "Ann") == "Ann speaks");
  CHECK_NOTHROW(check_pattern("[X] a [Y]"));
  CHECK_THROWS_AS(check_pattern("[X] a"), SchemaError);
  CHECK_THROWS_AS(check_pattern("[X] [X] [Y]"), SchemaError);
}

TEST_CASE("corpus queries") {
  const auto c = small_corpus();
  CHECK(c.surface("en", "Q9") == "Paris");
  CHECK_THROWS_AS(c.surface("en", "Q404"), SchemaError);
  CHECK(c.article("en", "Q9") == "the");
  CHECK(c.article("en", "Q8").empty());
  CHECK(c.templates_for("P1", "en").size() == 2);
  CHECK(c.triplets_in("en").size() == 3);
  CHECK(c.triplets_in("de").empty());
  CHECK(c.counts("en").templates == 3);
}

TEST_CASE("trivial-leak filter") {
  CHECK(normalize_for_match("  Paris,  HILTON! ") == "paris, hilton");
  const auto c = filter_trivial(small_corpus());
  // "Paris Hilton lives in" contains the alias "Paris"
  CHECK(c.is_excluded(c.triplets[1], c.templates[0]));
  CHECK_FALSE(c.is_excluded(c.triplets[0], c.templates[0]));
  CHECK(c.excluded.size() == 2);  // both P1 templates for Q2
  CHECK(filter_trivial(c) == c);
}

TEST_CASE("corpus directory round trip and load errors") {
  const auto dir = fixtures::temp_dir("corpus_io");
  const auto c = small_corpus();
  save_corpus(c, dir / "a");
  const auto back = load_corpus(dir / "a");
  CHECK(back.templates == c.templates);
  CHECK(back.triplets == c.triplets);
  CHECK(back.aliases == c.aliases);
  CHECK(back.articles == c.articles);
  CHECK(back.languages == c.languages);

  fs::create_directories(dir / "empty");
  CHECK(load_corpus(dir / "empty").triplets.empty());

  write(dir / "bad/templates/en.jsonl", "{\"relation_id\": \"P1\", \"pattern\": \"[X] x [Y]\"}\n{oops\n");
  write(dir / "bad/triplets.jsonl", "");
  write(dir / "bad/aliases.jsonl", "");
  try {
    load_corpus(dir / "bad");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("en.jsonl:2") != std::string::npos);
  }
  write(dir / "noalias/templates/en.jsonl", "{\"relation_id\": \"P1\", \"pattern\": \"[X] x [Y]\"}\n");
  write(dir / "noalias/triplets.jsonl", "{\"subject_id\": \"Q1\", \"relation_id\": \"P1\", \"object_id\": \"Q2\"}\n");
  CHECK_THROWS_AS(load_corpus(dir / "noalias"), LoadError);
  write(dir / "badpattern/templates/en.jsonl", "{\"relation_id\": \"P1\", \"pattern\": \"no slots\"}\n");
  write(dir / "badpattern/triplets.jsonl", "");
  write(dir / "badpattern/aliases.jsonl", "");
  CHECK_THROWS(load_corpus(dir / "badpattern"));
}

TEST_CASE("synthetic corpora are deterministic and well-formed") {
  SyntheticOptions o;
  o.seed = 4;
  const auto a = gen_synthetic(o);
  const auto b = gen_synthetic(o);
  CHECK(a.corpus == b.corpus);
  o.seed = 5;
  CHECK_FALSE(gen_synthetic(o).corpus == a.corpus);
  const auto& c = a.corpus;
  CHECK(c.languages == std::vector<std::string>{"xa", "yb"});
  CHECK(c.triplets.size() == 64);
  for (const auto& lang : c.languages) {
    CHECK(c.triplets_in(lang).size() == 64);
    std::size_t final_templates = 0;
    for (const auto& t : c.templates) {
      if (t.lang != lang) continue;
      CHECK_NOTHROW(check_pattern(t.pattern));
      final_templates += t.object_final;
    }
    CHECK(final_templates == 8);  // 2 paraphrases x 4 relations
  }
  // SOV language has non-object-final templates
  bool sov_nonfinal = false;
  for (const auto& t : c.templates) sov_nonfinal |= (t.lang == "yb" && !t.object_final);
  CHECK(sov_nonfinal);
  // each subject has one object per relation
  std::set<std::pair<std::string, std::string>> sr;
  for (const auto& t : c.triplets) CHECK(sr.insert({t.subject_id, t.relation_id}).second);
}

TEST_CASE("synthetic collisions share object surfaces across languages") {
  SyntheticOptions o;
  o.collision_fraction = 0.5;
  const auto c = gen_synthetic(o).corpus;
  std::set<std::string> objects;
  for (const auto& t : c.triplets) objects.insert(t.object_id);
  std::size_t shared = 0;
  for (const auto& id : objects) shared += c.surface("xa", id) == c.surface("yb", id);
  CHECK(shared == (objects.size() + 1) / 2);
  o.collision_fraction = 0.0;
  const auto d = gen_synthetic(o).corpus;
  for (const auto& id : objects) CHECK(d.surface("xa", id) != d.surface("yb", id));
}

TEST_CASE("synthetic generation fails loudly when the inventory is exhausted") {
  SyntheticOptions o;
  o.n_subjects = 100000;
  CHECK_THROWS_AS(gen_synthetic(o), GenerationError);
}

TEST_CASE("wbgetentities parsing") {
  const auto j = nlohmann::json::parse(R"({"entities": {
    "Q90": {"labels": {"en": {"value": "Paris"}, "fr": {"value": "Paris"}},
            "aliases": {"en": [{"value": "City of Light"}, {"value": "Paris"}]}},
    "Q404": {"id": "Q404", "missing": ""}}})");
  const auto r = parse_wbgetentities(j, {"en", "fr", "de"});
  CHECK(r.aliases.at({"en", "Q90"}) == std::vector<std::string>{"Paris", "City of Light"});
  CHECK(r.aliases.at({"fr", "Q90"}) == std::vector<std::string>{"Paris"});
  CHECK_FALSE(r.aliases.contains({"de", "Q90"}));
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].id == "Q404");
  CHECK_THROWS_AS(parse_wbgetentities(nlohmann::json::parse(R"({"error": {"info": "bad"}})"), {"en"}), ProtocolError);
}

TEST_CASE("alias fetching against a local endpoint with transient failures") {
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Get("/w/api.php", [&](const httplib::Request& req, httplib::Response& res) {
    if (calls++ == 0) {
      res.status = 503;
      return;
    }
    nlohmann::json entities = nlohmann::json::object();
    std::string ids = req.get_param_value("ids");
    std::size_t start = 0;
    while (start <= ids.size()) {
      const auto bar = ids.find('|', start);
      const std::string id = ids.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
      if (id == "Q404") {
        entities[id] = {{"id", id}, {"missing", ""}};
      } else {
        entities[id] = {{"labels", {{"en", {{"value", "label-" + id}}}}},
                        {"aliases", {{"en", nlohmann::json::array({{{"value", "alt-" + id}}})}}}};
      }
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    res.set_content(nlohmann::json{{"entities", entities}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  FetchOptions o;
  o.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/w/api.php";
  o.timeout_ms = 2000;
  o.retries = 2;
  o.max_concurrency = 1;
  o.batch_size = 2;
  const auto r = fetch_aliases({"Q3", "Q1", "Q404", "Q1"}, o);
  CHECK(r.aliases.size() == 2);
  CHECK(r.aliases.at({"en", "Q1"}) == std::vector<std::string>{"label-Q1", "alt-Q1"});
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].id == "Q404");
  CHECK(calls.load() == 3);  // one retry after the 503, then one call per remaining batch

  auto c = small_corpus();
  merge_aliases(c, r);
  const auto once = c;
  merge_aliases(c, r);
  CHECK(c == once);
  CHECK(c.aliases.at({"en", "Q1"}) == std::vector<std::string>{"Ann", "label-Q1", "alt-Q1"});

  // every attempt fails
  server.stop();
  t.join();
  FetchOptions dead = o;
  dead.retries = 1;
  const auto failed = fetch_aliases({"Q7"}, dead);
  CHECK(failed.aliases.empty());
  REQUIRE(failed.failures.size() == 1);
  CHECK(failed.failures[0].id == "Q7");
}
