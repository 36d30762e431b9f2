#include <doctest.h>

#include "fixtures.hpp"
#include "trace_oracle.hpp"
#include "rlab/common/errors.hpp"
#include "rlab/engine/engine.hpp"
#include "rlab/report/aggregate.hpp"
#include "rlab/tracing/causal_trace.hpp"

using namespace rlab;
using namespace rlab::tracing;
using runtime::SiteKind;
using runtime::Stream;

namespace {

harvest::MemorizedExample manual_example(std::vector<runtime::TokenId> ids, int first, int last) {
  harvest::MemorizedExample e;
  e.lang = "t";
  e.triplet = {"S1", "R1", "O1"};
  e.input_ids = std::move(ids);
  e.subject_first = first;
  e.subject_last = last;
  return e;
}

std::vector<harvest::MemorizedExample> head(const std::vector<harvest::MemorizedExample>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<long>(std::min(n, v.size()))};
}

}  // namespace

TEST_CASE("sigma is the population standard deviation") {
  CHECK(sigma_of({{1.0, 2.0}, {3.0, 4.0}}) == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
  CHECK(sigma_of({{2.0, 2.0}}) == 0.0);
  CHECK_THROWS_AS(sigma_of({}), ConfigError);
}

TEST_CASE("noise samples are keyed and scale with the multiplier") {
  const auto a = noise_sample(1, "x", 0, 50, 2.0);
  CHECK(a == noise_sample(1, "x", 0, 50, 2.0));
  CHECK(a != noise_sample(1, "x", 1, 50, 2.0));
  CHECK(a != noise_sample(1, "y", 0, 50, 2.0));
  for (double v : noise_sample(1, "x", 0, 50, 0.0)) CHECK(v == 0.0);
}

TEST_CASE("token roles") {
  const auto e = manual_example({1, 5, 6, 7, 8, 9, 10}, 2, 4);
  CHECK(token_role(e, Stream::dec, 0) == "before_subject");
  CHECK(token_role(e, Stream::dec, 2) == "subject_first");
  CHECK(token_role(e, Stream::dec, 3) == "subject_middle");
  CHECK(token_role(e, Stream::dec, 4) == "subject_last");
  CHECK(token_role(e, Stream::dec, 5) == "first_subsequent");
  CHECK(token_role(e, Stream::dec, 6) == "last");
}

TEST_CASE("grid sites cover every token and layer") {
  const auto c = fixtures::tiny_config();
  const auto e = manual_example({1, 5, 6, 7}, 1, 2);
  const auto sites = grid_sites(c, e, default_kinds(c.arch));
  CHECK(sites.size() == 4 * (3 + 2 + 2));
  CHECK_THROWS_AS(grid_sites(c, e, {SiteKind::cross_attn_c}), CapabilityError);
  const auto r = restore_sites(c, {Stream::dec, 1, 1, SiteKind::mlp_f}, 4);
  CHECK(r.size() == 2);
  CHECK(restore_sites(c, {Stream::dec, 1, 2, SiteKind::state_h}, 4).size() == 1);
}

TEST_CASE("traced_ie with one noise sample matches the oracle") {
  const auto model = fixtures::tiny_model();
  engine::NativeBackend backend(model);
  engine::RunStore store;
  const engine::Engine eng(backend, store);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 12; ++trial) {
    auto ids = fixtures::random_tokens(rng, 6);
    ids[0] = 1;
    const auto ex = manual_example(ids, 1, 1 + trial % 3);
    TraceConfig cfg;
    cfg.n_samples = 1;
    cfg.seed = 5;
    cfg.window_sublayer = 1 + trial % 2;
    const SiteKind kinds[] = {SiteKind::state_h, SiteKind::mlp_f, SiteKind::self_attn_s};
    const TraceSite site{Stream::dec, trial % 6, trial % 2, kinds[trial % 3]};
    const double sigma = 0.7;
    const double got = traced_ie(eng, ex, site, cfg, sigma);
    const double want = fixtures::oracle_ie(*model, ex, site, cfg.window_sublayer, sigma, cfg.noise_multiplier, cfg.seed);
    CHECK(std::abs(got - want) < 1e-6);
  }
}

TEST_CASE("tracing identities on the trained toy") {
  const auto& t = fixtures::decoder_toy();
  const auto examples = head(t.harvests.at("xa"), 6);
  REQUIRE(!examples.empty());
  const int L = t.toy.model->config().n_layers_dec;

  SUBCASE("zero noise gives zero effect everywhere") {
    TraceConfig cfg;
    cfg.noise_multiplier = 0.0;
    cfg.n_samples = 2;
    for (const auto& g : trace_grid(*t.backend, examples, cfg)) {
      CHECK_FALSE(g.partial);
      for (const auto& c : g.cells) {
        for (double ie : c.ie_samples) CHECK(ie == 0.0);
      }
    }
  }

  SUBCASE("restoring every subject state at layer 0 recovers the clean probability") {
    engine::RunStore store;
    const engine::Engine eng(*t.backend, store);
    const double sigma = compute_sigma(*t.backend, examples);
    for (const auto& ex : examples) {
      std::vector<engine::HookSite> sites, embeds;
      for (int i = ex.subject_first; i <= ex.subject_last; ++i) {
        sites.push_back({Stream::dec, 0, SiteKind::state_h, i});
        embeds.push_back({Stream::dec, 0, SiteKind::embed, i});
      }
      auto all = embeds;
      all.insert(all.end(), sites.begin(), sites.end());
      runtime::RunOutput clean;
      const auto run = eng.record(ex.inputs(), all, &clean);
      std::vector<std::vector<double>> clean_embeds;
      for (std::size_t i = 0; i < embeds.size(); ++i) clean_embeds.push_back(clean.captures[i].vector);
      const auto tok = clean.predicted_token;
      const double p_clean = clean.distribution[static_cast<std::size_t>(tok)];
      for (int rep = 0; rep < 3; ++rep) {
        const auto c = corrupt_run(eng, ex, clean_embeds, tok, sigma, 3.0, 1, rep);
        const double ie = restored_probability(eng, ex, c, sites, run, tok) - c.p;
        CHECK(std::abs(ie - (p_clean - c.p)) < 1e-9);
      }
    }
  }

  SUBCASE("last-token state at layer L and sample means") {
    TraceConfig cfg;
    cfg.n_samples = 10;
    const auto grids = trace_grid(*t.backend, examples, cfg);
    for (const auto& g : grids) {
      REQUIRE(g.p_corrupt_samples.size() == 10);
      for (const auto& c : g.cells) {
        REQUIRE(c.ie_samples.size() == 10);
        report::MeanFold f;
        for (double v : c.ie_samples) f.add(v);
        CHECK(c.ie_mean == f.mean());
        if (c.site.kind == SiteKind::state_h && c.site.layer == L && c.role == "last") {
          for (std::size_t k = 0; k < 10; ++k) {
            CHECK(std::abs(c.ie_samples[k] - (g.p_clean - g.p_corrupt_samples[k])) < 1e-9);
          }
        }
      }
    }
    // mean grid is the fold over complete grids
    const auto means = mean_grid(grids);
    REQUIRE_FALSE(means.empty());
    const auto& m = means.front();
    report::MeanFold f;
    for (const auto& g : grids) {
      for (const auto& c : g.cells) {
        if (c.role == m.role && c.site.layer == m.layer && c.site.kind == m.kind) f.add(c.ie_mean);
      }
    }
    CHECK(m.ie_mean == f.mean());
    CHECK(m.n == f.n);
  }
}

TEST_CASE("trace grids are deterministic across thread counts") {
  const auto& t = fixtures::decoder_toy();
  const auto examples = head(t.harvests.at("yb"), 4);
  TraceConfig cfg;
  cfg.n_samples = 3;
  cfg.threads = 1;
  const auto a = grid_table(trace_grid(*t.backend, examples, cfg));
  cfg.threads = 3;
  const auto b = grid_table(trace_grid(*t.backend, examples, cfg));
  CHECK(a.rows == b.rows);
  CHECK(a.columns == std::vector<std::string>{"example_id", "token_idx", "token_role", "layer", "kind", "ie_mean",
                                              "p_clean", "p_corrupt"});
}

TEST_CASE("encoder-decoder grids trace the encoder and cross-attention") {
  const auto& t = fixtures::encdec_toy();
  const auto examples = head(t.harvests.begin()->second, 2);
  REQUIRE_FALSE(examples.empty());
  TraceConfig cfg;
  cfg.n_samples = 2;
  const auto grids = trace_grid(*t.backend, examples, cfg);
  bool enc = false, cross = false;
  for (const auto& c : grids[0].cells) {
    enc |= c.site.stream == Stream::enc && c.site.kind == SiteKind::mlp_f;
    cross |= c.site.kind == SiteKind::cross_attn_c && c.site.stream == Stream::dec;
  }
  CHECK(enc);
  CHECK(cross);
}
