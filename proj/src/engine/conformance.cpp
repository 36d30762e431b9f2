#include "rlab/engine/conformance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <fmt/format.h>

#include "rlab/runtime/hooks.hpp"

namespace rlab::engine {
namespace {

using runtime::AttentionBlock;
using runtime::AttentionKind;
using runtime::Hooks;
using runtime::SiteKind;
using runtime::Stream;

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

RunInputs random_inputs(const runtime::ModelConfig& m, std::mt19937_64& rng) {
  const int lo = std::min(4, m.vocab_size - 1);
  std::uniform_int_distribution<TokenId> tok(lo, m.vocab_size - 1);
  const int len = std::max(2, std::min(6, m.max_seq));
  RunInputs in;
  if (m.is_encoder_decoder()) {
    for (int i = 0; i < len; ++i) in.enc_tokens.push_back(tok(rng));
    in.dec_tokens = {1, tok(rng)};
  } else {
    in.dec_tokens.push_back(1);
    for (int i = 1; i < len; ++i) in.dec_tokens.push_back(tok(rng));
  }
  return in;
}

CheckResult run_check(std::string name, const std::function<std::string()>& body) {
  CheckResult r{std::move(name), false, {}};
  try {
    r.detail = body();
    r.passed = r.detail.empty();
  } catch (const std::exception& e) {
    r.detail = fmt::format("error: {}", e.what());
  }
  return r;
}

}  // namespace

std::vector<CheckResult> conformance_suite(const Backend& backend, const ConformanceOptions& options) {
  const auto& caps = backend.capabilities();
  const auto& m = caps.model;
  const double tol = options.tolerance;
  std::mt19937_64 rng(options.seed);
  const RunInputs a = random_inputs(m, rng);
  const RunInputs b = random_inputs(m, rng);
  const int L = m.n_layers_dec;
  std::vector<CheckResult> out;

  out.push_back(run_check("no-op plan", [&]() -> std::string {
    const auto x = backend.execute(a, {});
    const auto y = backend.execute(a, {});
    double sum = 0.0;
    for (double p : x.distribution) sum += p;
    if (std::abs(sum - 1.0) > 1e-3) return fmt::format("distribution sums to {}", sum);
    if (const double d = max_abs_diff(x.distribution, y.distribution); d > tol) {
      return fmt::format("repeated empty plan differs by {}", d);
    }
    if (x.predicted_token != y.predicted_token) return "predicted token changed";
    return {};
  }));

  out.push_back(run_check("self-replacement", [&]() -> std::string {
    if (!caps.supports("capture") || !caps.supports("replace")) return "capture/replace unsupported";
    const auto base = backend.execute(a, {});
    for (int layer = 0; layer <= L; ++layer) {
      const HookSite site{Stream::dec, layer, SiteKind::state_h, -1};
      Hooks cap;
      cap.captures = {site};
      const auto captured = backend.execute(a, cap).captures.at(0).vector;
      Hooks rep;
      rep.replacements = {{site, captured}};
      const auto patched = backend.execute(a, rep);
      if (const double d = max_abs_diff(base.distribution, patched.distribution); d > tol) {
        return fmt::format("layer {} self-replacement moved distribution by {}", layer, d);
      }
    }
    return {};
  }));

  out.push_back(run_check("layer-L patch", [&]() -> std::string {
    if (!caps.supports("capture") || !caps.supports("replace")) return "capture/replace unsupported";
    const HookSite site{Stream::dec, L, SiteKind::state_h, -1};
    Hooks cap;
    cap.captures = {site};
    const auto donor = backend.execute(b, cap);
    Hooks rep;
    rep.replacements = {{site, donor.captures.at(0).vector}};
    const auto patched = backend.execute(a, rep);
    if (patched.predicted_token != donor.predicted_token) {
      return fmt::format("predicted {} but donor predicts {}", patched.predicted_token, donor.predicted_token);
    }
    if (const double d = max_abs_diff(patched.distribution, donor.distribution); d > tol) {
      return fmt::format("distribution differs from donor by {}", d);
    }
    return {};
  }));

  out.push_back(run_check("residual decomposition", [&]() -> std::string {
    const bool ed = m.is_encoder_decoder();
    const int tokens = static_cast<int>(a.dec_tokens.size());
    Hooks cap;
    for (int l = 0; l < L; ++l) {
      for (int t = 0; t < tokens; ++t) {
        cap.captures.push_back({Stream::dec, l, SiteKind::state_h, t});
        cap.captures.push_back({Stream::dec, l, SiteKind::self_attn_s, t});
        if (ed) cap.captures.push_back({Stream::dec, l, SiteKind::cross_attn_c, t});
        cap.captures.push_back({Stream::dec, l, SiteKind::mlp_f, t});
        cap.captures.push_back({Stream::dec, l + 1, SiteKind::state_h, t});
      }
    }
    const auto run = backend.execute(a, cap);
    const std::size_t per = ed ? 5 : 4;
    double worst = 0.0;
    for (std::size_t i = 0; i < run.captures.size(); i += per) {
      const auto& next = run.captures[i + per - 1].vector;
      std::vector<double> sum = run.captures[i].vector;
      for (std::size_t k = 1; k + 1 < per; ++k) {
        for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += run.captures[i + k].vector[d];
      }
      worst = std::max(worst, max_abs_diff(sum, next));
    }
    if (worst > tol * 10) return fmt::format("residual identity violated by {}", worst);
    return {};
  }));

  out.push_back(run_check("future-key knockout is a no-op", [&]() -> std::string {
    if (!caps.supports("attn_block")) return "attn_block unsupported";
    const int tokens = static_cast<int>(a.dec_tokens.size());
    if (tokens < 2) return {};
    AttentionBlock blk;
    blk.stream = Stream::dec;
    blk.attention = AttentionKind::self;
    for (int l = 0; l < L; ++l) blk.layers.push_back(l);
    blk.query_token = 0;
    for (int t = 1; t < tokens; ++t) blk.key_tokens.push_back(t);
    Hooks h;
    h.blocks = {blk};
    const auto base = backend.execute(a, {});
    const auto ko = backend.execute(a, h);
    if (const double d = max_abs_diff(base.distribution, ko.distribution); d > tol) {
      return fmt::format("blocking causally hidden keys moved distribution by {}", d);
    }
    return {};
  }));

  out.push_back(run_check("knockout determinism", [&]() -> std::string {
    if (!caps.supports("attn_block")) return "attn_block unsupported";
    const int tokens = static_cast<int>(a.dec_tokens.size());
    AttentionBlock blk;
    blk.stream = Stream::dec;
    blk.attention = AttentionKind::self;
    for (int l = 0; l < L; ++l) blk.layers.push_back(l);
    blk.query_token = tokens - 1;
    if (tokens >= 2) blk.key_tokens = {0};
    Hooks h;
    h.blocks = {blk};
    if (blk.key_tokens.empty()) return {};
    const auto x = backend.execute(a, h);
    const auto y = backend.execute(a, h);
    if (const double d = max_abs_diff(x.distribution, y.distribution); d > tol) {
      return fmt::format("repeated knockout differs by {}", d);
    }
    return {};
  }));

  out.push_back(run_check("final-state projection", [&]() -> std::string {
    const HookSite site{Stream::dec, L, SiteKind::state_h, -1};
    Hooks cap;
    cap.captures = {site};
    const auto run = backend.execute(a, cap);
    auto h = run.captures.at(0).vector;
    double ss = 0.0;
    for (double v : h) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(h.size()) + 1e-6);
    for (double& v : h) v *= inv;
    const auto logits = backend.project(h);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    if (best != run.predicted_token) {
      return fmt::format("argmax of projection {} but prediction {}", best, run.predicted_token);
    }
    return {};
  }));

  return out;
}

}  // namespace rlab::engine
