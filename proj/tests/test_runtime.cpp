#include <doctest.h>

#include "fixtures.hpp"
#include "rlab/common/errors.hpp"
#include "rlab/runtime/checkpoint.hpp"
#include "rlab/runtime/decode.hpp"
#include "rlab/runtime/tokenizer.hpp"
#include "rlab/runtime/trainer.hpp"

using namespace rlab;
using runtime::Arch;
using runtime::KnockoutMode;
using runtime::SiteKind;
using runtime::Stream;

TEST_CASE("config validation rejects inconsistent shapes") {
  auto c = fixtures::tiny_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = fixtures::tiny_config();
  c.sentinel_ids = {5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = fixtures::tiny_config(Arch::encoder_decoder);
  CHECK_NOTHROW(c.validate());
  c.sentinel_ids.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward matches the loop oracle with random hooks") {
  for (Arch arch : {Arch::decoder_only, Arch::encoder_decoder}) {
    const auto model = fixtures::tiny_model(arch);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
      const auto in = fixtures::random_inputs(rng, model->config());
      const auto mode = trial % 2 ? KnockoutMode::zero_weights : KnockoutMode::mask_logits;
      auto hooks = trial % 4 == 0 ? fixtures::HookPair{} : fixtures::random_hooks(rng, model->config(), in, mode);
      hooks.runtime.captures.push_back({Stream::dec, 1, SiteKind::mlp_f, -1});
      hooks.oracle.capture.push_back({Stream::dec, SiteKind::mlp_f, 1, static_cast<int>(in.dec_tokens.size()) - 1});
      const auto got = model->forward(in, hooks.runtime);
      const auto want = fixtures::oracle_run(*model, in, hooks.oracle);
      CHECK(fixtures::max_abs_diff(got.distribution, want.distribution) < 1e-9);
      CHECK(fixtures::max_abs_diff(got.captures[0].vector, want.captures[0]) < 1e-9);
    }
  }
}

TEST_CASE("forward is pure and the distribution sums to one") {
  const auto model = fixtures::tiny_model(Arch::encoder_decoder);
  const runtime::RunInputs in{{5, 6, 4, 7}, {1, 4}};
  const auto a = model->forward(in);
  const auto b = model->forward(in);
  CHECK(a.distribution == b.distribution);
  double sum = 0.0;
  for (double p : a.distribution) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("replacing a site with its own capture is bit-exact") {
  const auto model = fixtures::tiny_model(Arch::encoder_decoder);
  const runtime::RunInputs in{{5, 6, 4, 7}, {1, 4, 9}};
  const auto& c = model->config();
  for (Stream s : {Stream::enc, Stream::dec}) {
    for (SiteKind k : {SiteKind::embed, SiteKind::state_h, SiteKind::self_attn_s, SiteKind::mlp_f, SiteKind::cross_attn_c}) {
      if (k == SiteKind::cross_attn_c && s == Stream::enc) continue;
      const int top = k == SiteKind::embed ? 0 : (k == SiteKind::state_h ? runtime::stream_layers(c, s) : runtime::stream_layers(c, s) - 1);
      for (int l = 0; l <= top; ++l) {
        runtime::Hooks cap;
        cap.captures.push_back({s, l, k, 1});
        const auto clean = model->forward(in, cap);
        runtime::Hooks rep;
        rep.replacements.push_back({{s, l, k, 1}, clean.captures[0].vector});
        CHECK(model->forward(in, rep).distribution == clean.distribution);
      }
    }
  }
}

TEST_CASE("residual stream decomposes into sublayer outputs") {
  const auto model = fixtures::tiny_model(Arch::encoder_decoder);
  const runtime::RunInputs in{{5, 6, 4, 7}, {1, 4, 9}};
  for (Stream s : {Stream::enc, Stream::dec}) {
    for (int l = 0; l < 2; ++l) {
      runtime::Hooks h;
      h.captures = {{s, l, SiteKind::state_h, -1}, {s, l + 1, SiteKind::state_h, -1}, {s, l, SiteKind::self_attn_s, -1},
                    {s, l, SiteKind::mlp_f, -1}};
      if (s == Stream::dec) h.captures.push_back({s, l, SiteKind::cross_attn_c, -1});
      const auto out = model->forward(in, h);
      for (int i = 0; i < 8; ++i) {
        double sum = out.captures[0].vector[i] + out.captures[2].vector[i] + out.captures[3].vector[i];
        if (s == Stream::dec) sum += out.captures[4].vector[i];
        CHECK(std::abs(sum - out.captures[1].vector[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("final state projection reproduces the output distribution") {
  const auto model = fixtures::tiny_model();
  const runtime::RunInputs in{{}, {1, 8, 9, 10}};
  runtime::Hooks h;
  h.captures = {{Stream::dec, 2, SiteKind::state_h, -1}};
  const auto out = model->forward(in, h);
  CHECK(fixtures::max_abs_diff(model->distribution_from_state(out.captures[0].vector), out.distribution) < 1e-15);
  const auto logits = model->project(out.captures[0].vector);
  CHECK(fixtures::max_abs_diff(logits, oracle::project(model->weights(), out.captures[0].vector)) < 1e-12);
  CHECK(runtime::argmax(logits) == out.predicted_token);
}

TEST_CASE("input and addressing errors") {
  const auto model = fixtures::tiny_model();
  CHECK_THROWS_AS(model->forward({{}, std::vector<runtime::TokenId>(17, 5)}), LengthError);
  CHECK_THROWS_AS(model->forward({{}, {}}), LengthError);
  CHECK_THROWS_AS(model->forward({{}, {1, 40}}), AddressingError);
  CHECK_THROWS_AS(model->forward({{5}, {1, 6}}), AddressingError);
  runtime::Hooks h;
  h.captures = {{Stream::dec, 3, SiteKind::state_h, 0}};
  CHECK_THROWS_AS(model->forward({{}, {1, 6}}, h), AddressingError);
  h.captures = {{Stream::dec, 0, SiteKind::cross_attn_c, 0}};
  CHECK_THROWS_AS(model->forward({{}, {1, 6}}, h), AddressingError);
  h.captures = {{Stream::dec, 0, SiteKind::state_h, 2}};
  CHECK_THROWS_AS(model->forward({{}, {1, 6}}, h), AddressingError);
  runtime::Hooks r;
  r.replacements.push_back({{Stream::dec, 0, SiteKind::state_h, 0}, std::vector<double>(3, 0.0)});
  CHECK_THROWS_AS(model->forward({{}, {1, 6}}, r), AddressingError);
  runtime::Hooks b;
  b.blocks.push_back({Stream::dec, runtime::AttentionKind::self, {0}, 0, {0}});
  CHECK_THROWS_AS(model->forward({{}, {1, 6}}, b), PlanError);
  b.knockout_mode = KnockoutMode::zero_weights;
  CHECK_NOTHROW(model->forward({{}, {1, 6}}, b));
}

TEST_CASE("argmax helpers") {
  const std::vector<double> v = {0.1, 0.5, 0.5, 0.2};
  CHECK(runtime::argmax(v) == 1);
  CHECK(runtime::unique_argmax(v) == -1);
  const std::vector<double> w = {0.1, 0.5, 0.7};
  CHECK(runtime::unique_argmax(w) == 2);
}

TEST_CASE("tokenizer round trips") {
  CHECK(runtime::split_words("the cat, sat (here).") ==
        std::vector<std::string>{"the", "cat", ",", "sat", "(", "here", ")", "."});
  CHECK(runtime::normalize_text("a  b ,c") == "a b, c");
  CHECK(runtime::split_words("x <extra_id_0> y") == std::vector<std::string>{"x", "<extra_id_0>", "y"});
  const auto v = runtime::Vocabulary::build({"b", "a", "b"}, 2);
  CHECK(v.size() == 8);
  CHECK(v.id("<s>") == runtime::Vocabulary::kBos);
  CHECK(v.id("zzz") == runtime::Vocabulary::kUnk);
  CHECK(v.sentinel_ids() == std::vector<runtime::TokenId>{4, 5});
  CHECK(runtime::detokenize(runtime::tokenize("b a", v), v) == "b a");
  const auto dir = fixtures::temp_dir("vocab");
  v.save(dir / "vocab.txt");
  const auto w = runtime::Vocabulary::load(dir / "vocab.txt");
  CHECK(w.size() == v.size());
  CHECK(w.id("a") == v.id("a"));
}

TEST_CASE("model card round trip is bit-exact") {
  for (Arch arch : {Arch::decoder_only, Arch::encoder_decoder}) {
    const auto model = fixtures::tiny_model(arch);
    std::vector<std::string> words;
    for (int i = 0; i < 28 - (arch == Arch::encoder_decoder ? 1 : 0); ++i) words.push_back("w" + std::to_string(i));
    const auto vocab = runtime::Vocabulary::build(words, arch == Arch::encoder_decoder ? 1 : 0);
    REQUIRE(vocab.size() == 32);
    const auto dir = fixtures::temp_dir("card");
    runtime::save_model(dir, *model, vocab, {{"note", "x"}});
    const auto loaded = runtime::load_model(dir / "card.json");
    const runtime::RunInputs in{arch == Arch::encoder_decoder ? std::vector<runtime::TokenId>{5, 4, 6} : std::vector<runtime::TokenId>{},
                                {1, 7, 8}};
    CHECK(loaded.model->forward(in).distribution == model->forward(in).distribution);
    CHECK(loaded.vocab.size() == vocab.size());
  }
  CHECK_THROWS_AS(runtime::load_model("/nonexistent/card.json"), LoadError);
}

TEST_CASE("analytic gradients match central differences") {
  for (Arch arch : {Arch::decoder_only, Arch::encoder_decoder}) {
    const auto c = fixtures::tiny_config(arch, 3);
    auto w = runtime::Weights::init(c, 3);
    std::vector<runtime::TrainingSequence> batch = {
        {arch == Arch::encoder_decoder ? std::vector<runtime::TokenId>{5, 6, 4} : std::vector<runtime::TokenId>{},
         {1, 7, 8, 9, 2}, 1},
        {arch == Arch::encoder_decoder ? std::vector<runtime::TokenId>{9, 4} : std::vector<runtime::TokenId>{},
         {1, 10, 2}, 0}};
    auto grads = runtime::Weights::zeros(c);
    runtime::loss_and_gradients(c, w, batch, &grads);
    std::vector<std::span<double>> g_views;
    runtime::for_each_param(grads, [&](const runtime::ParamView& p) { g_views.push_back(p.data); });
    std::size_t idx = 0;
    double worst = 0.0;
    runtime::for_each_param(w, [&](const runtime::ParamView& p) {
      const auto g = g_views[idx++];
      for (std::size_t i = 0; i < p.data.size(); i += std::max<std::size_t>(1, p.data.size() / 5)) {
        const double keep = p.data[i];
        const double h = 1e-5;
        p.data[i] = keep + h;
        const double up = runtime::loss_and_gradients(c, w, batch, nullptr);
        p.data[i] = keep - h;
        const double down = runtime::loss_and_gradients(c, w, batch, nullptr);
        p.data[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-3, std::abs(fd) + std::abs(g[i])));
      }
    });
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("training reduces the loss and greedy decode stops at eos") {
  auto c = fixtures::tiny_config();
  c.d_model = 16;
  c.d_ff = 32;
  const std::vector<runtime::TrainingSequence> data = {{{}, {1, 10, 11, 12, 2}, 1}, {{}, {1, 13, 14, 2}, 1}};
  runtime::TrainOptions o;
  o.steps = 400;
  o.batch_size = 2;
  o.lr = 1e-2;
  const auto r = runtime::train(c, data, o);
  CHECK(r.final_loss < r.loss_history.front());
  const runtime::Model m(c, r.weights);
  CHECK(runtime::greedy_decode(m, {{}, {1, 10}}) == std::vector<runtime::TokenId>{11, 12, 2});
  CHECK(runtime::greedy_decode(m, {{}, {1, 13}}, 1).size() == 1);
  const auto again = runtime::train(c, data, o);
  CHECK(again.weights.embedding == r.weights.embedding);
}
