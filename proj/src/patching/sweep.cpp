#include "rlab/common/errors.hpp"
#include "rlab/patching/patching.hpp"
#include "rlab/report/aggregate.hpp"

namespace rlab::patching {

using runtime::SiteKind;
using runtime::Stream;

double set_probability(std::span<const double> distribution, const std::set<TokenId>& tokens) {
  double p = 0.0;
  for (TokenId t : tokens) p += distribution[static_cast<std::size_t>(t)];
  return p;
}

CachedRun capture_last_states(const engine::Backend& backend, const harvest::MemorizedExample& example) {
  const int L = backend.capabilities().model.n_layers_dec;
  runtime::Hooks hooks;
  for (int l = 0; l <= L; ++l) hooks.captures.push_back({Stream::dec, l, SiteKind::state_h, -1});
  auto out = backend.execute(example.inputs(), hooks);
  CachedRun run;
  for (auto& c : out.captures) run.states.push_back(std::move(c.vector));
  run.distribution = std::move(out.distribution);
  run.predicted = out.predicted_token;
  return run;
}

const CachedRun& CaptureCache::get(const engine::Backend& backend, const harvest::MemorizedExample& example) {
  auto it = runs_.find(example.id());
  if (it == runs_.end()) it = runs_.emplace(example.id(), capture_last_states(backend, example)).first;
  return it->second;
}

void CaptureCache::populate(const engine::Backend& backend, const std::vector<PatchPair>& pairs) {
  for (const auto& p : pairs) {
    get(backend, p.patch);
    get(backend, p.context);
  }
}

PatchOutcome patch_sweep(const engine::Backend& backend, const PatchPair& pair, CaptureCache* cache) {
  CaptureCache local;
  CaptureCache& c = cache ? *cache : local;
  const CachedRun& patch = c.get(backend, pair.patch);
  const CachedRun& context = c.get(backend, pair.context);
  const auto& lc_oc = pair.channel(Label::Lc_oc).tokens;
  const auto& lp_op = pair.channel(Label::Lp_op).tokens;

  PatchOutcome out;
  out.pair_id = pair.id();
  out.condition = pair.condition;
  out.patch_lang = pair.patch.lang;
  out.context_lang = pair.context.lang;
  out.base_lc_oc = set_probability(context.distribution, lc_oc);
  out.base_lp_op = set_probability(patch.distribution, lp_op);
  out.context_prediction = context.predicted;
  out.patch_prediction = patch.predicted;
  for (std::size_t i = 0; i < kChannelCount; ++i) out.enabled[i] = pair.channels[i].enabled;

  for (int l = 0; l < static_cast<int>(patch.states.size()); ++l) {
    LayerOutcome lo;
    lo.layer = l;
    try {
      runtime::Hooks hooks;
      hooks.replacements.push_back({{Stream::dec, l, SiteKind::state_h, -1}, patch.states[static_cast<std::size_t>(l)]});
      const auto run = backend.execute(pair.context.inputs(), hooks);
      lo.predicted = run.predicted_token;
      lo.label = classify_prediction(run.predicted_token, pair);
      lo.p_lc_oc = set_probability(run.distribution, lc_oc);
      lo.p_lp_op = set_probability(run.distribution, lp_op);
      if (out.base_lc_oc > 0.0) lo.rel_lc_oc = report::relative_difference(lo.p_lc_oc, out.base_lc_oc);
      if (out.base_lp_op > 0.0) lo.rel_lp_op = report::relative_difference(lo.p_lp_op, out.base_lp_op);
    } catch (const Error& e) {
      lo.missing = true;
      lo.error = e.what();
    }
    out.layers.push_back(std::move(lo));
  }
  return out;
}

std::vector<PatchOutcome> sweep_all(const engine::Backend& backend, const std::vector<PatchPair>& pairs) {
  CaptureCache cache;
  cache.populate(backend, pairs);
  std::vector<PatchOutcome> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(patch_sweep(backend, p, &cache));
  return out;
}

}  // namespace rlab::patching
