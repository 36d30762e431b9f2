#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rlab/corpus/corpus.hpp"
#include "rlab/engine/backend.hpp"
#include "rlab/runtime/checkpoint.hpp"
#include "rlab/runtime/trainer.hpp"

namespace rlab::harvest {

// Vocabulary covering every corpus word plus one sentinel.
runtime::Vocabulary corpus_vocabulary(const corpus::Corpus& corpus);

// Training text per (triplet, template, language). Decoder-only: object-final
// templates, [<s>] sentence [</s>], loss on the object part. Encoder-decoder:
// every template, encoder = sentinel-masked query, decoder = [<s>, sentinel,
// (article), object, </s>]. Objects are rendered with their canonical alias
// and article, if any.
std::vector<runtime::TrainingSequence> toy_training_data(const corpus::Corpus& corpus,
                                                         const runtime::Vocabulary& vocab,
                                                         runtime::Arch arch,
                                                         const std::vector<std::string>& languages);

struct MemorizationReport {
  std::string lang;
  std::size_t pairs = 0;      // (triplet, language) pairs trained
  std::size_t memorized = 0;  // some trained template decodes its exact target
  std::vector<std::string> memorized_ids;  // triplet ids, corpus order

  double rate() const { return pairs == 0 ? 0.0 : static_cast<double>(memorized) / static_cast<double>(pairs); }
};

// Greedy decoding of each trained prompt compared against its training
// continuation.
std::vector<MemorizationReport> memorization_report(const engine::Backend& backend,
                                                    const corpus::Corpus& corpus,
                                                    const runtime::Vocabulary& vocab,
                                                    const std::vector<std::string>& languages);

struct ToyModel {
  runtime::ModelPtr model;
  runtime::Vocabulary vocab;
  runtime::TrainReport report;
  std::vector<MemorizationReport> memorization;
};

// Sizes config.vocab_size and sentinel ids to the corpus, trains and measures.
ToyModel train_toy(const corpus::Corpus& corpus, runtime::ModelConfig config,
                   const runtime::TrainOptions& options, const std::vector<std::string>& languages);

nlohmann::json memorization_to_json(const std::vector<MemorizationReport>& reports);

}  // namespace rlab::harvest
