#include "rlab/corpus/aliases.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "rlab/common/errors.hpp"
#include "rlab/common/parallel.hpp"

namespace rlab::corpus {
namespace {

using nlohmann::json;

void push_unique(std::vector<std::string>& list, std::string value) {
  if (value.empty()) return;
  if (std::find(list.begin(), list.end(), value) == list.end()) list.push_back(std::move(value));
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError(fmt::format("endpoint '{}' lacks a scheme", url));
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string join(const std::vector<std::string>& items, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (i > from) out += '|';
    out += items[i];
  }
  return out;
}

}  // namespace

FetchResult parse_wbgetentities(const json& response, const std::vector<std::string>& languages) {
  FetchResult out;
  if (!response.contains("entities")) {
    const auto info = response.contains("error") ? response["error"].value("info", "unknown error") : "no entities";
    throw ProtocolError(fmt::format("wbgetentities: {}", info));
  }
  for (const auto& [id, entity] : response.at("entities").items()) {
    if (entity.contains("missing")) {
      out.failures.push_back({id, "missing entity"});
      continue;
    }
    for (const auto& lang : languages) {
      std::vector<std::string> list;
      if (entity.contains("labels") && entity["labels"].contains(lang)) {
        push_unique(list, entity["labels"][lang].value("value", ""));
      }
      if (entity.contains("aliases") && entity["aliases"].contains(lang)) {
        for (const auto& a : entity["aliases"][lang]) push_unique(list, a.value("value", ""));
      }
      if (!list.empty()) out.aliases[{lang, id}] = std::move(list);
    }
  }
  return out;
}

FetchResult fetch_aliases(const std::vector<std::string>& object_ids, const FetchOptions& options) {
  const Endpoint ep = split_endpoint(options.endpoint);
  std::vector<std::string> ids = object_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  const std::size_t n_batches = (ids.size() + batch - 1) / batch;
  std::vector<FetchResult> parts(n_batches);

  std::string langs;
  for (const auto& l : options.languages) langs += (langs.empty() ? "" : "|") + l;

  parallel_for(
      n_batches,
      [&](std::size_t b) {
        const std::size_t from = b * batch;
        const std::size_t to = std::min(ids.size(), from + batch);
        httplib::Client client(ep.origin);
        client.set_connection_timeout(std::chrono::milliseconds(options.timeout_ms));
        client.set_read_timeout(std::chrono::milliseconds(options.timeout_ms));
        client.set_follow_location(true);
        const httplib::Params params = {{"action", "wbgetentities"},
                                        {"ids", join(ids, from, to)},
                                        {"props", "labels|aliases"},
                                        {"languages", langs},
                                        {"format", "json"}};
        std::string reason = "no attempt made";
        for (int attempt = 0; attempt <= options.retries; ++attempt) {
          if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 << std::min(attempt, 5)));
          auto res = client.Get(ep.path, params, httplib::Headers{{"User-Agent", "recall-lab/1"}});
          if (!res) {
            reason = httplib::to_string(res.error());
            continue;
          }
          if (res->status >= 500 || res->status == 429) {
            reason = fmt::format("HTTP {}", res->status);
            continue;
          }
          if (res->status != 200) {
            reason = fmt::format("HTTP {}", res->status);
            break;
          }
          try {
            parts[b] = parse_wbgetentities(json::parse(res->body), options.languages);
            return;
          } catch (const std::exception& e) {
            reason = e.what();
            break;
          }
        }
        for (std::size_t i = from; i < to; ++i) parts[b].failures.push_back({ids[i], reason});
      },
      static_cast<unsigned>(std::max(1, options.max_concurrency)));

  FetchResult out;
  for (auto& p : parts) {
    for (auto& [k, v] : p.aliases) out.aliases[k] = std::move(v);
    for (auto& f : p.failures) out.failures.push_back(std::move(f));
  }
  return out;
}

void merge_aliases(Corpus& corpus, const FetchResult& fetched) {
  for (const auto& [key, list] : fetched.aliases) {
    auto& slot = corpus.aliases[key];
    for (const auto& a : list) push_unique(slot, a);
  }
}

}  // namespace rlab::corpus
