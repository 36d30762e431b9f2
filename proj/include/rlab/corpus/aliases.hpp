#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlab/corpus/corpus.hpp"

namespace rlab::corpus {

struct FetchOptions {
  std::string endpoint = "https://www.wikidata.org/w/api.php";
  std::vector<std::string> languages = {"en"};
  int timeout_ms = 10000;
  int retries = 3;
  int max_concurrency = 4;
  int batch_size = 50;  // API limit for wbgetentities
};

struct FetchFailure {
  std::string id;
  std::string reason;
};

struct FetchResult {
  std::map<AliasKey, std::vector<std::string>> aliases;
  std::vector<FetchFailure> failures;
};

// Parses a wbgetentities response: label first, then aliases in source
// order, deduplicated. Entities with neither label nor aliases in a language
// are skipped; entities reported as missing become failures.
FetchResult parse_wbgetentities(const nlohmann::json& response, const std::vector<std::string>& languages);

FetchResult fetch_aliases(const std::vector<std::string>& object_ids, const FetchOptions& options);

// Appends fetched aliases not yet present; existing canonical forms stay first.
void merge_aliases(Corpus& corpus, const FetchResult& fetched);

}  // namespace rlab::corpus
