#include <doctest.h>

#include "fixtures.hpp"
#include "rlab/common/errors.hpp"
#include "rlab/harvest/toy_training.hpp"
#include "rlab/patching/patching.hpp"

using namespace rlab;
using namespace rlab::patching;
using runtime::SiteKind;
using runtime::Stream;

namespace {

std::vector<PatchPair> toy_pairs(const fixtures::Toy& t, Condition c, std::size_t max_pairs) {
  PairOptions o;
  o.condition = c;
  o.patch_lang = "xa";
  o.context_lang = "yb";
  o.max_pairs = max_pairs;
  return build_pairs(t.harvests, t.corpus, t.toy.vocab, o);
}

// One example per triplet and language, without a model.
std::map<std::string, std::vector<harvest::MemorizedExample>> fake_harvests(const corpus::Corpus& c) {
  std::map<std::string, std::vector<harvest::MemorizedExample>> out;
  for (const auto& lang : c.languages) {
    for (const auto& t : c.triplets_in(lang)) {
      harvest::MemorizedExample e;
      e.lang = lang;
      e.triplet = t;
      out[lang].push_back(e);
    }
  }
  return out;
}

bool disjoint(const std::set<TokenId>& a, const std::set<TokenId>& b) {
  for (auto t : a) {
    if (b.contains(t)) return false;
  }
  return true;
}

void check_report_equal(const ConditionReport& a, const ConditionReport& b) {
  CHECK(a.n_pairs == b.n_pairs);
  CHECK(a.n_layers == b.n_layers);
  CHECK(a.mean_rel_lc_oc == b.mean_rel_lc_oc);
  CHECK(a.mean_rel_lp_op == b.mean_rel_lp_op);
  CHECK(a.n_rel_lc_oc == b.n_rel_lc_oc);
  CHECK(a.n_rel_lp_op == b.n_rel_lp_op);
  CHECK(a.histogram == b.histogram);
  REQUIRE(a.proportions.size() == b.proportions.size());
  for (std::size_t i = 0; i < a.proportions.size(); ++i) {
    CHECK(a.proportions[i].count == b.proportions[i].count);
    CHECK(a.proportions[i].enabled == b.proportions[i].enabled);
  }
}

}  // namespace

TEST_CASE("proportion formatting") {
  CHECK(ProportionRow{Label::Lp_oc, 0, 0}.formatted() == "- (0)");
  CHECK(ProportionRow{Label::Lp_op, 54, 140}.formatted() == "38.6% (54)");
  CHECK(ProportionRow{Label::Lp_op, 3, 3}.formatted() == "100.0% (3)");
  CHECK(condition_number(condition_from_number(2)) == 2);
  CHECK_THROWS_AS(condition_from_number(4), ConfigError);
}

TEST_CASE("classification uses the unique enabled channel") {
  PatchPair p;
  p.channels[static_cast<std::size_t>(Label::Lc_oc)] = {{7, 8}, true};
  p.channels[static_cast<std::size_t>(Label::Lp_op)] = {{9}, true};
  p.channels[static_cast<std::size_t>(Label::cross_rp_sc)] = {{8}, true};
  p.channels[static_cast<std::size_t>(Label::Lp_oc)] = {{10}, false};
  CHECK(classify_prediction(7, p) == Label::Lc_oc);
  CHECK(classify_prediction(9, p) == Label::Lp_op);
  CHECK(classify_prediction(8, p) == Label::other);  // two channels
  CHECK(classify_prediction(10, p) == Label::other);  // disabled
  CHECK(classify_prediction(11, p) == Label::other);
}

TEST_CASE("pair construction follows the condition and alias rules") {
  corpus::SyntheticOptions so;
  so.n_subjects = 6;
  so.n_relations = 3;
  so.collision_fraction = 0.5;
  auto corpus = corpus::gen_synthetic(so).corpus;
  // Drop one object's aliases in the second language.
  const std::string lost = corpus.triplets.front().object_id;
  corpus.aliases.erase({"yb", lost});
  const auto vocab = harvest::corpus_vocabulary(corpus);
  const auto harvests = fake_harvests(corpus);

  for (int cn = 1; cn <= 3; ++cn) {
    PairOptions o;
    o.condition = condition_from_number(cn);
    o.patch_lang = "xa";
    o.context_lang = "yb";
    const auto pairs = build_pairs(harvests, corpus, vocab, o);
    const std::string lc = cn == 1 ? "xa" : "yb";
    std::size_t expected = 0;
    std::set<std::string> ids;
    for (const auto& p : harvests.at("xa")) {
      for (const auto& c : harvests.at(lc)) {
        const bool rel = p.triplet.relation_id == c.triplet.relation_id;
        const bool subj = p.triplet.subject_id == c.triplet.subject_id;
        const bool shape = cn == 1 ? (!rel && !subj) : cn == 2 ? (rel && !subj) : (!rel && subj);
        if (!shape) continue;
        if (cn != 1 && (!corpus.aliases_of("xa", c.triplet.object_id) || !corpus.aliases_of("yb", p.triplet.object_id))) continue;
        ++expected;
        ids.insert(p.id() + "=>" + c.id());
      }
    }
    CHECK(pairs.size() == expected);
    std::size_t disabled = 0;
    for (const auto& pair : pairs) {
      CHECK(ids.contains(pair.id()));
      CHECK(pair.patch.lang == "xa");
      CHECK(pair.context.lang == lc);
      if (cn == 1) {
        CHECK_FALSE(pair.channel(Label::Lp_oc).enabled);
        CHECK_FALSE(pair.channel(Label::Lc_op).enabled);
        continue;
      }
      CHECK_FALSE(pair.channel(Label::cross_rp_sc).enabled);
      const auto& op = pair.patch.triplet.object_id;
      const auto& oc = pair.context.triplet.object_id;
      const bool oc_apart = disjoint(first_tokens(corpus, vocab, "xa", oc), first_tokens(corpus, vocab, "yb", oc));
      const bool op_apart = disjoint(first_tokens(corpus, vocab, "xa", op), first_tokens(corpus, vocab, "yb", op));
      CHECK(pair.channel(Label::Lp_oc).enabled == (oc_apart && !pair.channel(Label::Lp_oc).tokens.empty()));
      CHECK(pair.channel(Label::Lc_oc).enabled == (oc_apart && !pair.channel(Label::Lc_oc).tokens.empty()));
      CHECK(pair.channel(Label::Lc_op).enabled == (op_apart && !pair.channel(Label::Lc_op).tokens.empty()));
      if (!oc_apart) ++disabled;
    }
    if (cn != 1) CHECK(disabled > 0);
  }

  PairOptions same;
  same.condition = Condition::diff_lang_same_rel_diff_subj;
  same.patch_lang = same.context_lang = "xa";
  CHECK_THROWS_AS(build_pairs(harvests, corpus, vocab, same), ConfigError);

  PairOptions sub;
  sub.condition = Condition::same_lang_diff_rel_diff_subj;
  sub.patch_lang = "xa";
  sub.max_pairs = 10;
  const auto a = build_pairs(harvests, corpus, vocab, sub);
  const auto b = build_pairs(harvests, corpus, vocab, sub);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id() == b[i].id());
}

TEST_CASE("self-patching changes nothing at any layer") {
  const auto& t = fixtures::decoder_toy();
  const int L = t.toy.model->config().n_layers_dec;
  for (const auto& e : t.harvests.at("xa")) {
    PatchPair p{Condition::same_lang_diff_rel_diff_subj, e, e, {}};
    auto& ch = p.channels[static_cast<std::size_t>(Label::Lc_oc)];
    ch.tokens = first_tokens(t.corpus, t.toy.vocab, "xa", e.triplet.object_id);
    ch.enabled = true;
    p.channels[static_cast<std::size_t>(Label::Lp_op)] = ch;
    const auto out = patch_sweep(*t.backend, p);
    REQUIRE(out.layers.size() == static_cast<std::size_t>(L) + 1);
    for (const auto& l : out.layers) {
      CHECK(l.predicted == out.context_prediction);
      REQUIRE(l.rel_lc_oc.has_value());
      CHECK(*l.rel_lc_oc == 0.0);
      CHECK(*l.rel_lp_op == 0.0);
    }
  }
}

TEST_CASE("patching the final layer transplants the prediction") {
  const auto& t = fixtures::decoder_toy();
  const int L = t.toy.model->config().n_layers_dec;
  for (auto c : {Condition::same_lang_diff_rel_diff_subj, Condition::diff_lang_same_rel_diff_subj,
                 Condition::diff_lang_diff_rel_same_subj}) {
    const auto outs = sweep_all(*t.backend, toy_pairs(t, c, 60));
    REQUIRE_FALSE(outs.empty());
    for (const auto& o : outs) {
      const auto& last = o.layers.at(static_cast<std::size_t>(L));
      CHECK(last.predicted == o.patch_prediction);
      CHECK(std::abs(last.p_lp_op - o.base_lp_op) < 1e-12);
    }
  }
}

TEST_CASE("sweep agrees with the reference forward") {
  const auto& t = fixtures::decoder_toy();
  const auto& m = *t.toy.model;
  const int L = m.config().n_layers_dec;
  const auto pairs = toy_pairs(t, Condition::diff_lang_same_rel_diff_subj, 6);
  for (const auto& pair : pairs) {
    const auto out = patch_sweep(*t.backend, pair);
    oracle::Hooks cap;
    const int pt = static_cast<int>(pair.patch.input_ids.size()) - 1;
    for (int l = 0; l <= L; ++l) cap.capture.push_back({Stream::dec, SiteKind::state_h, l, pt});
    const auto patch_run = fixtures::oracle_run(m, pair.patch.inputs(), cap);
    const int ct = static_cast<int>(pair.context.input_ids.size()) - 1;
    for (int l = 0; l <= L; ++l) {
      oracle::Hooks h;
      h.replace.push_back({{Stream::dec, SiteKind::state_h, l, ct}, patch_run.captures[static_cast<std::size_t>(l)]});
      const auto ref = fixtures::oracle_run(m, pair.context.inputs(), h);
      const auto& lo = out.layers[static_cast<std::size_t>(l)];
      CHECK(lo.predicted == ref.predicted);
      CHECK(std::abs(lo.p_lc_oc - set_probability(ref.distribution, pair.channel(Label::Lc_oc).tokens)) < 1e-6);
      CHECK(std::abs(lo.p_lp_op - set_probability(ref.distribution, pair.channel(Label::Lp_op).tokens)) < 1e-6);
    }
  }
}

TEST_CASE("labels are exclusive over a 200-pair sweep and reports rebuild from the dump") {
  const auto& t = fixtures::decoder_toy();
  const auto pairs = toy_pairs(t, Condition::same_lang_diff_rel_diff_subj, 200);
  REQUIRE(pairs.size() == 200);
  const auto outs = sweep_all(*t.backend, pairs);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (const auto& l : outs[i].layers) {
      int hits = 0;
      for (std::size_t k = 0; k < kChannelCount; ++k) {
        const auto& ch = pairs[i].channels[k];
        if (ch.enabled && ch.tokens.contains(l.predicted)) ++hits;
      }
      if (l.label == Label::other) {
        CHECK(hits != 1);
      } else {
        CHECK(hits == 1);
        CHECK(pairs[i].channel(l.label).tokens.contains(l.predicted));
      }
    }
  }
  const auto rep = condition_report(outs);
  for (const auto& row : rep.histogram) {
    std::size_t sum = 0;
    for (auto c : row) sum += c;
    CHECK(sum == outs.size());
  }
  const auto rebuilt = outcomes_from_dump(raw_dump_lines(outs));
  REQUIRE(rebuilt.size() == outs.size());
  check_report_equal(condition_report(rebuilt), rep);
  CHECK(report::to_csv(proportions_table(condition_report(rebuilt))) == report::to_csv(proportions_table(rep)));
  CHECK(report::to_csv(curves_table(condition_report(rebuilt))) == report::to_csv(curves_table(rep)));
}

TEST_CASE("modal label and ordering predicate") {
  ConditionReport r;
  r.n_layers = 3;
  r.histogram.assign(3, {});
  r.histogram[0][static_cast<std::size_t>(Label::cross_rp_sc)] = 5;
  r.histogram[0][static_cast<std::size_t>(Label::other)] = 2;
  r.histogram[1][static_cast<std::size_t>(Label::Lp_op)] = 6;
  r.histogram[2][static_cast<std::size_t>(Label::Lp_op)] = 3;
  r.histogram[2][static_cast<std::size_t>(Label::Lc_oc)] = 3;
  CHECK(modal_label(r, 0) == Label::cross_rp_sc);
  CHECK_FALSE(modal_label(r, 2).has_value());
  CHECK(cross_before_patch_object(r));
  std::swap(r.histogram[0], r.histogram[1]);
  CHECK_FALSE(cross_before_patch_object(r));
}
