#pragma once

#include <string>
#include <vector>

#include "rlab/engine/backend.hpp"
#include "rlab/harvest/example.hpp"
#include "rlab/report/csv.hpp"

namespace rlab::knockout {

// argmax of E x when unique; -1 on ties (including the zero vector).
runtime::TokenId projection_argmax(const engine::Backend& backend, std::span<const double> x);

struct ExtractionEvents {
  std::string example_id;
  runtime::TokenId target = -1;  // o* = argmax(E h^L)
  // Per decoder layer; cross is empty for decoder-only models.
  std::vector<bool> self_attn;
  std::vector<bool> cross_attn;
  std::vector<bool> mlp;
  std::vector<bool> state;  // layers 0..L, sanity channel
};

ExtractionEvents extraction_events(const engine::Backend& backend, const harvest::MemorizedExample& example);

struct ExtractionRow {
  int layer = 0;
  runtime::SiteKind kind = runtime::SiteKind::mlp_f;
  double rate = 0.0;
  std::size_t n_events = 0;
  std::size_t mlp_with_attn = 0;     // mlp_f rows only
  std::size_t mlp_without_attn = 0;  // mlp_f rows only
};

struct ExtractionProfile {
  std::size_t n_examples = 0;
  std::vector<ExtractionRow> rows;        // sublayer kinds, by layer then kind
  std::vector<ExtractionRow> state_rows;  // state_h sanity channel, layers 0..L
  std::vector<ExtractionEvents> events;
};

// The attention paired with an MLP is the same layer's self-attention for
// decoder-only models and its cross-attention for encoder-decoder models.
ExtractionProfile aggregate_events(std::vector<ExtractionEvents> events, bool encoder_decoder);

ExtractionProfile extraction_profile(const engine::Backend& backend,
                                     const std::vector<harvest::MemorizedExample>& examples, unsigned threads = 1);

// Columns: layer, kind, rate, n_events, mlp_with_attn, mlp_without_attn.
report::CsvTable profile_table(const ExtractionProfile& profile, bool include_state = true);

}  // namespace rlab::knockout
