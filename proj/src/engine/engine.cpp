#include "rlab/engine/engine.hpp"

#include <cmath>
#include <map>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::engine {
namespace {

using runtime::AttentionKind;
using runtime::Stream;

HookSite normalised(const HookSite& site, const std::optional<runtime::StreamShape>& shape) {
  HookSite s = site;
  if (shape) {
    const int n = shape->tokens(site.stream);
    if (s.token < 0) s.token += n;
  }
  return s;
}

void check_block(const Capabilities& caps, const AttentionBlock& b, std::size_t index,
                 const std::optional<runtime::StreamShape>& shape, runtime::KnockoutMode mode,
                 std::vector<std::string>& out) {
  const auto& m = caps.model;
  const std::string where = fmt::format("intervention {} (attn_block)", index);
  if (b.stream == Stream::enc && !m.is_encoder_decoder()) {
    out.push_back(where + ": encoder stream on a decoder-only backend");
    return;
  }
  if (b.attention == AttentionKind::cross && (b.stream != Stream::dec || !m.is_encoder_decoder())) {
    out.push_back(where + ": cross-attention exists only in the decoder of encoder-decoder models");
    return;
  }
  const int layers = runtime::stream_layers(m, b.stream);
  if (b.layers.empty()) out.push_back(where + ": empty layer set");
  for (int l : b.layers) {
    if (l < 0 || l >= layers) out.push_back(fmt::format("{}: layer {} outside [0, {})", where, l, layers));
  }
  if (b.key_tokens.empty()) out.push_back(where + ": key token set is empty");
  if (!shape) return;
  const int nq = shape->tokens(b.stream);
  const int nk = b.attention == AttentionKind::cross ? shape->enc_tokens : nq;
  if (b.query_token >= nq || b.query_token < -nq) {
    out.push_back(fmt::format("{}: query token {} outside {} tokens", where, b.query_token, nq));
    return;
  }
  std::vector<bool> blocked(static_cast<std::size_t>(nk), false);
  for (int k : b.key_tokens) {
    if (k >= nk || k < -nk) {
      out.push_back(fmt::format("{}: key token {} outside {} tokens", where, k, nk));
      return;
    }
    blocked[static_cast<std::size_t>(k < 0 ? k + nk : k)] = true;
  }
  if (mode != runtime::KnockoutMode::mask_logits) return;
  const int q = b.query_token < 0 ? b.query_token + nq : b.query_token;
  const bool causal = b.stream == Stream::dec && b.attention == AttentionKind::self;
  const int visible = causal ? q + 1 : nk;
  bool all = true;
  for (int k = 0; k < visible; ++k) all = all && blocked[static_cast<std::size_t>(k)];
  if (all) out.push_back(where + ": blocks every key visible to the query (empty softmax row)");
}

}  // namespace

std::vector<std::string> validate_plan(const Capabilities& caps, const Plan& plan,
                                       const std::optional<runtime::StreamShape>& shape,
                                       const RunStore* store, runtime::KnockoutMode mode) {
  std::vector<std::string> out;
  std::map<HookSite, std::size_t> writers;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const Intervention& iv = plan[i];
    const std::string name = action_name(iv.action);
    if (!caps.supports(name)) {
      out.push_back(fmt::format("intervention {}: backend does not support {}", i, name));
    }
    if (const auto* b = std::get_if<AttnBlock>(&iv.action)) {
      check_block(caps, b->block, i, shape, mode, out);
      continue;
    }
    if (auto problem = runtime::site_problem(caps.model, iv.site, shape)) {
      out.push_back(fmt::format("intervention {} ({} at {}): {}", i, name, runtime::describe(iv.site),
                                *problem));
      continue;
    }
    if (const auto* r = std::get_if<Replace>(&iv.action)) {
      if (static_cast<int>(r->vector.size()) != caps.model.d_model) {
        out.push_back(fmt::format("intervention {}: replace vector has length {}, expected {}", i,
                                  r->vector.size(), caps.model.d_model));
      }
      for (double v : r->vector) {
        if (!std::isfinite(v)) {
          out.push_back(fmt::format("intervention {}: replace vector is not finite", i));
          break;
        }
      }
    }
    if (const auto* r = std::get_if<RestoreFrom>(&iv.action); r && store) {
      auto run = store->get(r->run);
      if (!run) {
        out.push_back(fmt::format("intervention {}: unknown or stale run id '{}'", i, r->run.value));
      } else if (!run->find(iv.site)) {
        out.push_back(fmt::format("intervention {}: run '{}' has no capture at {}", i, r->run.value,
                                  runtime::describe(iv.site)));
      }
    }
    if (iv.is_write()) {
      const HookSite key = normalised(iv.site, shape);
      auto [it, inserted] = writers.emplace(key, i);
      if (!inserted) {
        out.push_back(fmt::format("interventions {} and {} both write {}", it->second, i,
                                  runtime::describe(iv.site)));
      }
    }
  }
  return out;
}

Engine::Engine(const Backend& backend, RunStore& store, runtime::KnockoutMode mode)
    : backend_(backend), store_(store), mode_(mode) {}

RunOutput Engine::run_with_plan(const RunInputs& inputs, const Plan& plan) const {
  const auto& caps = backend_.capabilities();
  const auto problems = validate_plan(caps, plan, inputs.shape(), &store_, mode_);
  if (!problems.empty()) {
    std::string msg = "invalid intervention plan:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw PlanError(msg);
  }
  runtime::Hooks hooks;
  hooks.knockout_mode = mode_;
  for (const auto& iv : plan) {
    if (std::holds_alternative<Capture>(iv.action)) {
      hooks.captures.push_back(iv.site);
    } else if (const auto* r = std::get_if<Replace>(&iv.action)) {
      hooks.replacements.push_back({iv.site, r->vector});
    } else if (const auto* r = std::get_if<RestoreFrom>(&iv.action)) {
      hooks.replacements.push_back({iv.site, *store_.get(r->run)->find(iv.site)});
    } else if (const auto* b = std::get_if<AttnBlock>(&iv.action)) {
      hooks.blocks.push_back(b->block);
    }
  }
  return backend_.execute(inputs, hooks);
}

RunId Engine::record(const RunInputs& inputs, const std::vector<HookSite>& sites,
                     RunOutput* output) const {
  Plan plan;
  plan.reserve(sites.size());
  for (const auto& s : sites) plan.push_back(Intervention::capture(s));
  RunOutput out = run_with_plan(inputs, plan);
  RunId id = store_.put(inputs.shape(), out.captures);
  if (output) *output = std::move(out);
  return id;
}

}  // namespace rlab::engine
