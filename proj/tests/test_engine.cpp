#include <doctest.h>

#include <sys/socket.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <unistd.h>

#include "fixtures.hpp"
#include "rlab/common/errors.hpp"
#include "rlab/engine/conformance.hpp"
#include "rlab/engine/engine.hpp"
#include "rlab/engine/remote.hpp"
#include "rlab/engine/window.hpp"
#include "rlab/engine/wire.hpp"

using namespace rlab;
using engine::Intervention;
using runtime::Arch;
using runtime::AttentionKind;
using runtime::KnockoutMode;
using runtime::SiteKind;
using runtime::Stream;

namespace {

bool same_intervention(const Intervention& a, const Intervention& b) {
  if (a.action.index() != b.action.index()) return false;
  if (const auto* r = std::get_if<engine::Replace>(&a.action)) {
    return a.site == b.site && r->vector == std::get<engine::Replace>(b.action).vector;
  }
  if (const auto* r = std::get_if<engine::RestoreFrom>(&a.action)) {
    return a.site == b.site && r->run == std::get<engine::RestoreFrom>(b.action).run;
  }
  if (const auto* k = std::get_if<engine::AttnBlock>(&a.action)) {
    const auto& x = k->block;
    const auto& y = std::get<engine::AttnBlock>(b.action).block;
    return x.stream == y.stream && x.attention == y.attention && x.layers == y.layers &&
           x.query_token == y.query_token && x.key_tokens == y.key_tokens;
  }
  return a.site == b.site;
}

engine::Plan random_plan(std::mt19937_64& rng) {
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  std::normal_distribution<float> normal(0.0f, 10.0f);
  const SiteKind kinds[] = {SiteKind::embed, SiteKind::state_h, SiteKind::self_attn_s, SiteKind::cross_attn_c,
                            SiteKind::mlp_f};
  auto site = [&] {
    return engine::HookSite{pick(2) ? Stream::enc : Stream::dec, pick(40), kinds[pick(5)], pick(64) - 32};
  };
  engine::Plan plan;
  const int n = pick(8);
  for (int i = 0; i < n; ++i) {
    switch (pick(4)) {
      case 0:
        plan.push_back(Intervention::capture(site()));
        break;
      case 1: {
        std::vector<double> v(static_cast<std::size_t>(pick(70)));
        for (double& x : v) x = static_cast<double>(normal(rng));  // float32-representable
        plan.push_back(Intervention::replace(site(), std::move(v)));
        break;
      }
      case 2:
        plan.push_back(Intervention::restore(site(), {"run-" + std::to_string(pick(1000))}));
        break;
      default: {
        runtime::AttentionBlock b{pick(2) ? Stream::enc : Stream::dec, pick(2) ? AttentionKind::self : AttentionKind::cross,
                                  {}, pick(20) - 10, {}};
        for (int k = pick(5); k > 0; --k) b.layers.push_back(pick(24));
        for (int k = pick(9); k > 0; --k) b.key_tokens.push_back(pick(30) - 5);
        plan.push_back(Intervention::block(b));
      }
    }
  }
  return plan;
}

struct Served {
  explicit Served(runtime::ModelPtr model) : native(std::move(model)), server(native, 0) {
    server.start();
    remote = std::make_unique<engine::RemoteBackend>(engine::Address{"127.0.0.1", server.port()});
  }
  ~Served() {
    remote.reset();
    server.stop();
  }
  engine::NativeBackend native;
  engine::ProtocolServer server;
  std::unique_ptr<engine::RemoteBackend> remote;
};

}  // namespace

TEST_CASE("layer windows") {
  auto w = engine::resolve_window(0, 6, 32);
  CHECK(w.layers == std::vector<int>{0, 1, 2});
  w = engine::resolve_window(10, 6, 32);
  CHECK(w.layers == std::vector<int>{7, 8, 9, 10, 11, 12});
  w = engine::resolve_window(31, 6, 32);
  CHECK(w.layers == std::vector<int>{28, 29, 30, 31});
  w = engine::resolve_window(3, 1, 4);
  CHECK(w.layers == std::vector<int>{3});
  CHECK(engine::default_trace_window(Arch::decoder_only, 32) == 10);
  CHECK(engine::default_trace_window(Arch::encoder_decoder, 24) == 6);
  CHECK(engine::default_knockout_window(Arch::decoder_only, 32) == 6);
  CHECK(engine::default_knockout_window(Arch::encoder_decoder, 24) == 4);
  CHECK(engine::default_knockout_window(Arch::decoder_only, 4) >= 1);
}

TEST_CASE("run_with_plan matches the oracle for replace, restore_from and attn_block") {
  for (Arch arch : {Arch::decoder_only, Arch::encoder_decoder}) {
    const auto model = fixtures::tiny_model(arch);
    engine::NativeBackend backend(model);
    engine::RunStore store;
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
      const auto mode = trial % 2 ? KnockoutMode::zero_weights : KnockoutMode::mask_logits;
      const engine::Engine eng(backend, store, mode);
      const auto donor = fixtures::random_inputs(rng, model->config());
      auto in = fixtures::random_inputs(rng, model->config());
      // restore sites must exist in both runs; align shapes
      in.dec_tokens.resize(donor.dec_tokens.size(), 5);
      in.enc_tokens.resize(donor.enc_tokens.size(), 5);
      auto hooks = fixtures::random_hooks(rng, model->config(), in, mode);
      const int last = static_cast<int>(in.dec_tokens.size()) - 1;
      for (std::size_t k = hooks.oracle.replace.size(); k-- > 0;) {
        const auto& o = hooks.oracle.replace[k].first;
        if (o.stream == Stream::dec && o.kind == SiteKind::state_h && o.layer == 1 && o.token == last) {
          hooks.oracle.replace.erase(hooks.oracle.replace.begin() + static_cast<long>(k));
          hooks.runtime.replacements.erase(hooks.runtime.replacements.begin() + static_cast<long>(k));
        }
      }
      engine::Plan plan;
      for (const auto& r : hooks.runtime.replacements) plan.push_back(Intervention::replace(r.site, r.vector));
      for (const auto& b : hooks.runtime.blocks) plan.push_back(Intervention::block(b));
      const engine::HookSite restored{Stream::dec, 1, SiteKind::state_h, -1};
      const auto run = eng.record(donor, {restored});
      plan.push_back(Intervention::restore(restored, run));
      plan.push_back(Intervention::capture({Stream::dec, 0, SiteKind::mlp_f, 0}));
      auto oh = hooks.oracle;
      const auto donor_state = fixtures::oracle_run(
          *model, donor, {{}, {}, mode, {{Stream::dec, SiteKind::state_h, 1, static_cast<int>(donor.dec_tokens.size()) - 1}}});
      oh.replace.push_back({{Stream::dec, SiteKind::state_h, 1, static_cast<int>(in.dec_tokens.size()) - 1}, donor_state.captures[0]});
      oh.capture.push_back({Stream::dec, SiteKind::mlp_f, 0, 0});
      const auto got = eng.run_with_plan(in, plan);
      const auto want = fixtures::oracle_run(*model, in, oh);
      CHECK(fixtures::max_abs_diff(got.distribution, want.distribution) < 1e-6);
      REQUIRE(got.captures.size() == 1);
      CHECK(fixtures::max_abs_diff(got.captures[0].vector, want.captures[0]) < 1e-6);
    }
  }
}

TEST_CASE("plan validation reports every problem") {
  const auto model = fixtures::tiny_model();
  engine::NativeBackend backend(model);
  engine::RunStore store;
  const engine::Engine eng(backend, store);
  const runtime::RunInputs in{{}, {1, 6, 7}};
  engine::Plan plan = {Intervention::capture({Stream::dec, 9, SiteKind::state_h, 0}),
                       Intervention::restore({Stream::dec, 0, SiteKind::state_h, 1}, {"missing"}),
                       Intervention::replace({Stream::dec, 0, SiteKind::state_h, 2}, {1.0})};
  const auto problems = engine::validate_plan(backend.capabilities(), plan, in.shape(), &store);
  CHECK(problems.size() == 3);
  CHECK_THROWS_AS(eng.run_with_plan(in, plan), PlanError);
  engine::Plan full = {Intervention::block({Stream::dec, AttentionKind::self, {0}, 0, {0}})};
  CHECK_THROWS_AS(eng.run_with_plan(in, full), PlanError);
  engine::Plan cross = {Intervention::block({Stream::dec, AttentionKind::cross, {0}, 0, {0}})};
  CHECK_THROWS_AS(eng.run_with_plan(in, cross), PlanError);
  CHECK(engine::validate_plan(backend.capabilities(), {}).empty());
}

TEST_CASE("engine leaves a no-op plan identical to a plain forward") {
  const auto model = fixtures::tiny_model(Arch::encoder_decoder);
  engine::NativeBackend backend(model);
  engine::RunStore store;
  const engine::Engine eng(backend, store);
  const runtime::RunInputs in{{5, 4, 6}, {1, 4}};
  CHECK(eng.run_with_plan(in, {}).distribution == model->forward(in).distribution);
}

TEST_CASE("wire plans round-trip for 1000 random plans") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    const auto plan = random_plan(rng);
    const auto text = engine::wire::plan_to_json(plan).dump();
    const auto back = engine::wire::plan_from_json(nlohmann::json::parse(text));
    REQUIRE(back.size() == plan.size());
    for (std::size_t k = 0; k < plan.size(); ++k) CHECK(same_intervention(plan[k], back[k]));
    CHECK(engine::wire::plan_to_json(back).dump() == text);
  }
}

TEST_CASE("wire vectors are little-endian float32 base64") {
  const std::vector<double> v = {1.0, -2.5, 0.0};
  const auto b64 = engine::wire::encode_vector(v);
  CHECK(b64 == "AACAPwAAIMAAAAAA");
  CHECK(engine::wire::decode_vector(b64) == v);
  CHECK(engine::wire::decode_vector("") .empty());
  CHECK_THROWS_AS(engine::wire::decode_vector("abc"), ProtocolError);
}

TEST_CASE("wire requests and errors") {
  const auto model = fixtures::tiny_model();
  engine::NativeBackend backend(model);
  auto reply = [&](const std::string& line) { return nlohmann::json::parse(engine::wire::handle_line(backend, line)); };
  CHECK(reply("not json").at("error").at("code") == "bad_request");
  CHECK(reply(R"({"version": 2, "op": "model_info"})").contains("error"));
  CHECK(reply(R"({"version": 1, "op": "dance"})").contains("error"));
  CHECK(reply(R"({"version": 1, "op": "model_info"})").contains("actions"));
  const auto bad = reply(R"({"version": 1, "op": "run", "inputs": {"enc_ids": [], "dec_ids": [1, 99]}, "plan": [], "capture": []})");
  CHECK(bad.at("error").at("code") == "addressing");
  runtime::Hooks h;
  h.captures.push_back({Stream::dec, 1, SiteKind::state_h, -1});
  h.replacements.push_back({{Stream::dec, 0, SiteKind::mlp_f, 0}, std::vector<double>(8, 0.5)});
  h.blocks.push_back({Stream::dec, AttentionKind::self, {1}, 2, {0}});
  h.knockout_mode = KnockoutMode::zero_weights;
  const auto req = engine::wire::request_from_hooks({{}, {1, 6, 7}}, h);
  const auto back = engine::wire::request_from_json(nlohmann::json::parse(engine::wire::request_to_json(req).dump()));
  const auto h2 = engine::wire::hooks_from_request(back);
  CHECK(h2.captures == h.captures);
  CHECK(h2.replacements.size() == 1);
  CHECK(h2.blocks.size() == 1);
  CHECK(h2.knockout_mode == KnockoutMode::zero_weights);
}

TEST_CASE("remote backend agrees with native through a loopback server") {
  for (Arch arch : {Arch::decoder_only, Arch::encoder_decoder}) {
    Served s(fixtures::tiny_model(arch));
    CHECK(s.remote->capabilities().model.d_model == 8);
    CHECK(s.remote->capabilities().model.arch == arch);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      const auto in = fixtures::random_inputs(rng, s.native.capabilities().model);
      auto hooks = fixtures::random_hooks(rng, s.native.capabilities().model, in, KnockoutMode::mask_logits);
      for (auto& r : hooks.runtime.replacements) {
        for (double& x : r.vector) x = static_cast<double>(static_cast<float>(x));
      }
      hooks.runtime.captures.push_back({Stream::dec, 2, SiteKind::state_h, -1});
      const auto a = s.native.execute(in, hooks.runtime);
      const auto b = s.remote->execute(in, hooks.runtime);
      CHECK(fixtures::max_abs_diff(a.distribution, b.distribution) < 1e-6);
      CHECK(fixtures::max_abs_diff(a.captures[0].vector, b.captures[0].vector) < 1e-5);
      CHECK(a.predicted_token == b.predicted_token);
      const auto pa = s.native.project(a.captures[0].vector);
      const auto pb = s.remote->project(a.captures[0].vector);
      CHECK(fixtures::max_abs_diff(pa, pb) < 1e-4);
    }
    runtime::Hooks bad;
    bad.captures.push_back({Stream::dec, 7, SiteKind::state_h, 0});
    const runtime::RunInputs in = arch == Arch::encoder_decoder ? runtime::RunInputs{{5, 4}, {1, 4}} : runtime::RunInputs{{}, {1, 6}};
    CHECK_THROWS_AS(s.remote->execute(in, bad), AddressingError);
  }
}

TEST_CASE("conformance suite passes on native and remote backends") {
  for (Arch arch : {Arch::decoder_only, Arch::encoder_decoder}) {
    Served s(fixtures::tiny_model(arch));
    for (const engine::Backend* b : {static_cast<const engine::Backend*>(&s.native),
                                     static_cast<const engine::Backend*>(s.remote.get())}) {
      const auto results = engine::conformance_suite(*b);
      CHECK(results.size() >= 6);
      for (const auto& r : results) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.passed);
      }
    }
  }
}

TEST_CASE("remote backend reports connection and address problems") {
  CHECK_THROWS_AS(engine::parse_address("nonsense"), ConfigError);
  CHECK(engine::parse_address("remote:localhost:4000").port == 4000);
  CHECK(engine::parse_address("10.0.0.1:80").host == "10.0.0.1");
  // a port with nothing listening
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  CHECK_THROWS_AS(engine::RemoteBackend({"127.0.0.1", port}, 500), ProtocolError);
}
