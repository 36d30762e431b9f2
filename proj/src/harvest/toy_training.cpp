#include "rlab/harvest/toy_training.hpp"

#include <algorithm>

#include "rlab/common/errors.hpp"
#include "rlab/engine/backend.hpp"
#include "rlab/harvest/harvest.hpp"
#include "rlab/runtime/decode.hpp"

namespace rlab::harvest {
namespace {

using runtime::TokenId;
using runtime::Vocabulary;

struct TrainedPrompt {
  std::string lang;
  std::size_t triplet = 0;  // index into triplets_in(lang)
  runtime::RunInputs prompt;
  std::vector<TokenId> target;  // continuation including </s>
};

std::string object_text(const corpus::Corpus& c, const std::string& lang, const std::string& id) {
  const std::string article = c.article(lang, id);
  const std::string& alias = c.surface(lang, id);
  return article.empty() ? alias : article + " " + alias;
}

std::vector<TrainedPrompt> trained_prompts(const corpus::Corpus& c, const Vocabulary& vocab, bool ed,
                                           const std::vector<std::string>& languages) {
  std::vector<TrainedPrompt> out;
  for (const auto& lang : languages) {
    const auto triplets = c.triplets_in(lang);
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      const auto& t = triplets[i];
      const std::string& subject = c.surface(lang, t.subject_id);
      auto target = runtime::tokenize(object_text(c, lang, t.object_id), vocab);
      target.push_back(Vocabulary::kEos);
      for (const auto* tpl : c.templates_for(t.relation_id, lang)) {
        if (!ed && !tpl->object_final) continue;
        out.push_back({lang, i, build_prompt(*tpl, subject, vocab, ed), target});
      }
    }
  }
  return out;
}

std::vector<std::string> all_languages(const corpus::Corpus& c, const std::vector<std::string>& languages) {
  return languages.empty() ? c.languages : languages;
}

}  // namespace

Vocabulary corpus_vocabulary(const corpus::Corpus& corpus) {
  return Vocabulary::build(corpus::corpus_words(corpus), 1);
}

std::vector<runtime::TrainingSequence> toy_training_data(const corpus::Corpus& corpus, const Vocabulary& vocab,
                                                         runtime::Arch arch,
                                                         const std::vector<std::string>& languages) {
  const bool ed = arch == runtime::Arch::encoder_decoder;
  std::vector<runtime::TrainingSequence> out;
  for (auto& p : trained_prompts(corpus, vocab, ed, all_languages(corpus, languages))) {
    runtime::TrainingSequence seq;
    seq.enc_tokens = std::move(p.prompt.enc_tokens);
    seq.dec_tokens = std::move(p.prompt.dec_tokens);
    seq.loss_from = static_cast<int>(seq.dec_tokens.size()) - 1;
    seq.dec_tokens.insert(seq.dec_tokens.end(), p.target.begin(), p.target.end());
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<MemorizationReport> memorization_report(const engine::Backend& backend, const corpus::Corpus& corpus,
                                                    const Vocabulary& vocab,
                                                    const std::vector<std::string>& languages) {
  const bool ed = backend.capabilities().model.is_encoder_decoder();
  const auto langs = all_languages(corpus, languages);
  std::vector<MemorizationReport> reports;
  for (const auto& lang : langs) {
    MemorizationReport r;
    r.lang = lang;
    const auto triplets = corpus.triplets_in(lang);
    std::vector<char> hit(triplets.size(), 0);
    for (const auto& p : trained_prompts(corpus, vocab, ed, {lang})) {
      if (hit[p.triplet]) continue;
      const int budget = static_cast<int>(p.target.size());
      hit[p.triplet] = engine::greedy_decode(backend, p.prompt, budget) == p.target ? 1 : 0;
    }
    r.pairs = hit.size();
    r.memorized = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
    for (std::size_t i = 0; i < hit.size(); ++i) {
      if (hit[i]) r.memorized_ids.push_back(triplets[i].id());
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

ToyModel train_toy(const corpus::Corpus& corpus, runtime::ModelConfig config,
                   const runtime::TrainOptions& options, const std::vector<std::string>& languages) {
  ToyModel toy;
  toy.vocab = corpus_vocabulary(corpus);
  config.vocab_size = toy.vocab.size();
  if (config.is_encoder_decoder()) config.sentinel_ids = toy.vocab.sentinel_ids();
  const auto data = toy_training_data(corpus, toy.vocab, config.arch, languages);
  if (data.empty()) throw TrainingError("the corpus yields no training sequences");
  std::size_t longest = 0;
  for (const auto& s : data) longest = std::max({longest, s.enc_tokens.size(), s.dec_tokens.size()});
  config.max_seq = std::max(config.max_seq, static_cast<int>(longest) + 4);
  config.validate();
  toy.report = runtime::train(config, data, options);
  toy.model = std::make_shared<const runtime::Model>(config, toy.report.weights);
  const engine::NativeBackend backend(toy.model);
  toy.memorization = memorization_report(backend, corpus, toy.vocab, languages);
  return toy;
}

nlohmann::json memorization_to_json(const std::vector<MemorizationReport>& reports) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : reports) {
    out.push_back({{"lang", r.lang}, {"pairs", r.pairs}, {"memorized", r.memorized}, {"rate", r.rate()}});
  }
  return out;
}

}  // namespace rlab::harvest
