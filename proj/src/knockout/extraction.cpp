#include "rlab/knockout/extraction.hpp"

#include "rlab/common/parallel.hpp"
#include "rlab/report/csv.hpp"

namespace rlab::knockout {

using runtime::SiteKind;
using runtime::Stream;

runtime::TokenId projection_argmax(const engine::Backend& backend, std::span<const double> x) {
  const auto logits = backend.project(x);
  return runtime::unique_argmax(logits);
}

ExtractionEvents extraction_events(const engine::Backend& backend, const harvest::MemorizedExample& example) {
  const auto& model = backend.capabilities().model;
  const int L = model.n_layers_dec;
  const bool ed = model.is_encoder_decoder();
  runtime::Hooks hooks;
  for (int l = 0; l < L; ++l) {
    hooks.captures.push_back({Stream::dec, l, SiteKind::self_attn_s, -1});
    if (ed) hooks.captures.push_back({Stream::dec, l, SiteKind::cross_attn_c, -1});
    hooks.captures.push_back({Stream::dec, l, SiteKind::mlp_f, -1});
  }
  for (int l = 0; l <= L; ++l) hooks.captures.push_back({Stream::dec, l, SiteKind::state_h, -1});
  const auto out = backend.execute(example.inputs(), hooks);

  ExtractionEvents ev;
  ev.example_id = example.id();
  const auto& final_state = out.captures.back().vector;
  ev.target = runtime::argmax(backend.project(final_state));
  std::size_t k = 0;
  for (int l = 0; l < L; ++l) {
    ev.self_attn.push_back(projection_argmax(backend, out.captures[k++].vector) == ev.target);
    if (ed) ev.cross_attn.push_back(projection_argmax(backend, out.captures[k++].vector) == ev.target);
    ev.mlp.push_back(projection_argmax(backend, out.captures[k++].vector) == ev.target);
  }
  for (int l = 0; l <= L; ++l) ev.state.push_back(projection_argmax(backend, out.captures[k++].vector) == ev.target);
  return ev;
}

ExtractionProfile aggregate_events(std::vector<ExtractionEvents> events, bool encoder_decoder) {
  ExtractionProfile p;
  p.n_examples = events.size();
  const std::size_t L = events.empty() ? 0 : events.front().mlp.size();
  const double n = static_cast<double>(events.size());
  auto rate = [&](std::size_t count) { return events.empty() ? 0.0 : static_cast<double>(count) / n; };
  for (std::size_t l = 0; l < L; ++l) {
    std::size_t self = 0, cross = 0, mlp = 0, with = 0, without = 0;
    for (const auto& e : events) {
      self += e.self_attn[l];
      if (encoder_decoder) cross += e.cross_attn[l];
      if (e.mlp[l]) {
        ++mlp;
        const bool attn = encoder_decoder ? e.cross_attn[l] : e.self_attn[l];
        ++(attn ? with : without);
      }
    }
    const int layer = static_cast<int>(l);
    p.rows.push_back({layer, SiteKind::self_attn_s, rate(self), self, 0, 0});
    if (encoder_decoder) p.rows.push_back({layer, SiteKind::cross_attn_c, rate(cross), cross, 0, 0});
    p.rows.push_back({layer, SiteKind::mlp_f, rate(mlp), mlp, with, without});
  }
  const std::size_t S = events.empty() ? 0 : events.front().state.size();
  for (std::size_t l = 0; l < S; ++l) {
    std::size_t c = 0;
    for (const auto& e : events) c += e.state[l];
    p.state_rows.push_back({static_cast<int>(l), SiteKind::state_h, rate(c), c, 0, 0});
  }
  p.events = std::move(events);
  return p;
}

ExtractionProfile extraction_profile(const engine::Backend& backend,
                                     const std::vector<harvest::MemorizedExample>& examples, unsigned threads) {
  std::vector<ExtractionEvents> events(examples.size());
  parallel_for(
      examples.size(), [&](std::size_t i) { events[i] = extraction_events(backend, examples[i]); }, threads);
  return aggregate_events(std::move(events), backend.capabilities().model.is_encoder_decoder());
}

report::CsvTable profile_table(const ExtractionProfile& profile, bool include_state) {
  report::CsvTable t;
  t.columns = {"layer", "kind", "rate", "n_events", "mlp_with_attn", "mlp_without_attn"};
  auto add = [&](const ExtractionRow& r) {
    t.rows.push_back({std::to_string(r.layer), std::string(runtime::to_string(r.kind)),
                      report::format_number(r.rate), std::to_string(r.n_events), std::to_string(r.mlp_with_attn),
                      std::to_string(r.mlp_without_attn)});
  };
  for (const auto& r : profile.rows) add(r);
  if (include_state) {
    for (const auto& r : profile.state_rows) add(r);
  }
  return t;
}

}  // namespace rlab::knockout
