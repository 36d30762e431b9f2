#include "rlab/engine/wire.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>

#include <fmt/format.h>
#include <sodium.h>

#include "rlab/common/errors.hpp"

namespace rlab::engine::wire {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "wire vectors assume little-endian");

constexpr int kB64 = sodium_base64_VARIANT_ORIGINAL;

json block_to_json(const AttentionBlock& b) {
  return {{"action", "attn_block"},
          {"stream", runtime::to_string(b.stream)},
          {"attention", runtime::to_string(b.attention)},
          {"layers", b.layers},
          {"query_token", b.query_token},
          {"key_tokens", b.key_tokens}};
}

std::string_view error_code(const std::exception& e) {
  if (dynamic_cast<const CapabilityError*>(&e)) return "capability";
  if (dynamic_cast<const AddressingError*>(&e)) return "addressing";
  if (dynamic_cast<const LengthError*>(&e)) return "length";
  if (dynamic_cast<const PlanError*>(&e)) return "plan";
  if (dynamic_cast<const ProtocolError*>(&e)) return "bad_request";
  if (dynamic_cast<const json::exception*>(&e)) return "bad_request";
  return "internal";
}

}  // namespace

std::string encode_vector(std::span<const double> values) {
  std::vector<float> f(values.begin(), values.end());
  const std::size_t bytes = f.size() * sizeof(float);
  std::string out(sodium_base64_encoded_len(bytes, kB64), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(f.data()), bytes,
                    kB64);
  out.resize(std::strlen(out.c_str()));
  return out;
}

std::vector<double> decode_vector(std::string_view base64) {
  std::vector<unsigned char> bin(base64.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(bin.data(), bin.size(), base64.data(), base64.size(), nullptr, &len,
                        nullptr, kB64) != 0) {
    throw ProtocolError("malformed base64 vector");
  }
  if (len % sizeof(float) != 0) throw ProtocolError("vector byte length is not a multiple of 4");
  std::vector<float> f(len / sizeof(float));
  std::memcpy(f.data(), bin.data(), len);
  return {f.begin(), f.end()};
}

json site_to_json(const HookSite& s) {
  return {{"stream", runtime::to_string(s.stream)},
          {"layer", s.layer},
          {"kind", runtime::to_string(s.kind)},
          {"token", s.token}};
}

HookSite site_from_json(const json& j) {
  return HookSite{runtime::parse_stream(j.at("stream").get<std::string>()), j.at("layer").get<int>(),
                  runtime::parse_site_kind(j.at("kind").get<std::string>()), j.at("token").get<int>()};
}

json intervention_to_json(const Intervention& iv) {
  if (const auto* b = std::get_if<AttnBlock>(&iv.action)) return block_to_json(b->block);
  json j = {{"action", action_name(iv.action)}, {"site", site_to_json(iv.site)}};
  if (const auto* r = std::get_if<Replace>(&iv.action)) j["vector"] = encode_vector(r->vector);
  if (const auto* r = std::get_if<RestoreFrom>(&iv.action)) j["run_id"] = r->run.value;
  return j;
}

Intervention intervention_from_json(const json& j) {
  const auto action = j.at("action").get<std::string>();
  if (action == "attn_block") {
    AttentionBlock b;
    b.stream = runtime::parse_stream(j.at("stream").get<std::string>());
    b.attention = runtime::parse_attention_kind(j.value("attention", std::string("self")));
    b.layers = j.at("layers").get<std::vector<int>>();
    b.query_token = j.at("query_token").get<int>();
    b.key_tokens = j.at("key_tokens").get<std::vector<int>>();
    return Intervention::block(std::move(b));
  }
  const HookSite site = site_from_json(j.at("site"));
  if (action == "capture") return Intervention::capture(site);
  if (action == "replace") return Intervention::replace(site, decode_vector(j.at("vector").get<std::string>()));
  if (action == "restore_from") return Intervention::restore(site, RunId{j.at("run_id").get<std::string>()});
  throw ProtocolError(fmt::format("unknown action '{}'", action));
}

json plan_to_json(const Plan& plan) {
  json arr = json::array();
  for (const auto& iv : plan) arr.push_back(intervention_to_json(iv));
  return arr;
}

Plan plan_from_json(const json& j) {
  Plan plan;
  for (const auto& item : j) plan.push_back(intervention_from_json(item));
  return plan;
}

json capabilities_to_json(const Capabilities& caps) {
  const auto& m = caps.model;
  return {{"version", kProtocolVersion},
          {"arch", runtime::to_string(m.arch)},
          {"n_layers_enc", m.n_layers_enc},
          {"n_layers_dec", m.n_layers_dec},
          {"d_model", m.d_model},
          {"n_heads", m.n_heads},
          {"vocab_size", m.vocab_size},
          {"max_seq", m.max_seq},
          {"sentinel_ids", m.sentinel_ids},
          {"actions", std::vector<std::string>(caps.actions.begin(), caps.actions.end())}};
}

Capabilities capabilities_from_json(const json& j) {
  Capabilities caps;
  auto& m = caps.model;
  m.arch = runtime::parse_arch(j.at("arch").get<std::string>());
  m.n_layers_enc = j.value("n_layers_enc", 0);
  m.n_layers_dec = j.at("n_layers_dec").get<int>();
  m.d_model = j.at("d_model").get<int>();
  m.n_heads = j.value("n_heads", 1);
  m.vocab_size = j.at("vocab_size").get<int>();
  m.max_seq = j.value("max_seq", 1 << 20);
  m.sentinel_ids = j.value("sentinel_ids", std::vector<TokenId>{});
  for (const auto& a : j.at("actions")) caps.actions.insert(a.get<std::string>());
  return caps;
}

std::string_view to_string(runtime::KnockoutMode mode) {
  return mode == runtime::KnockoutMode::mask_logits ? "mask_logits" : "zero_weights";
}

runtime::KnockoutMode parse_knockout_mode(std::string_view text) {
  if (text == "mask_logits") return runtime::KnockoutMode::mask_logits;
  if (text == "zero_weights") return runtime::KnockoutMode::zero_weights;
  throw ProtocolError(fmt::format("unknown knockout mode '{}'", text));
}

json request_to_json(const RunRequest& r) {
  json inputs = {{"dec_ids", r.inputs.dec_tokens}};
  if (!r.inputs.enc_tokens.empty()) inputs["enc_ids"] = r.inputs.enc_tokens;
  json capture = json::array();
  for (const auto& s : r.capture) capture.push_back(site_to_json(s));
  return {{"version", kProtocolVersion},
          {"op", "run"},
          {"inputs", inputs},
          {"plan", plan_to_json(r.plan)},
          {"capture", capture},
          {"knockout_mode", to_string(r.knockout_mode)},
          {"return", {{"top_k", r.top_k}, {"distribution", r.distribution}}}};
}

RunRequest request_from_json(const json& j) {
  RunRequest r;
  const auto& in = j.at("inputs");
  r.inputs.dec_tokens = in.at("dec_ids").get<std::vector<TokenId>>();
  r.inputs.enc_tokens = in.value("enc_ids", std::vector<TokenId>{});
  if (j.contains("plan")) r.plan = plan_from_json(j.at("plan"));
  if (j.contains("capture")) {
    for (const auto& s : j.at("capture")) r.capture.push_back(site_from_json(s));
  }
  r.knockout_mode = parse_knockout_mode(j.value("knockout_mode", std::string("mask_logits")));
  if (j.contains("return")) {
    r.top_k = j["return"].value("top_k", 0);
    r.distribution = j["return"].value("distribution", true);
  }
  return r;
}

json run_response_to_json(const RunOutput& out, const RunRequest& request) {
  json captures = json::array();
  for (const auto& c : out.captures) {
    captures.push_back({{"site", site_to_json(c.site)}, {"vector", encode_vector(c.vector)}});
  }
  json j = {{"version", kProtocolVersion},
            {"predicted_token", out.predicted_token},
            {"captures", captures}};
  if (request.distribution) j["distribution"] = encode_vector(out.distribution);
  if (request.top_k > 0) {
    std::vector<std::size_t> idx(out.distribution.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(request.top_k), idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return out.distribution[a] > out.distribution[b] ||
                               (out.distribution[a] == out.distribution[b] && a < b);
                      });
    json top = json::array();
    for (std::size_t i = 0; i < k; ++i) top.push_back({idx[i], out.distribution[idx[i]]});
    j["top_k"] = top;
  }
  return j;
}

RunOutput run_response_from_json(const json& j) {
  if (j.contains("error")) {
    const auto& e = j.at("error");
    const auto code = e.value("code", std::string("internal"));
    const auto msg = fmt::format("remote backend error [{}]: {}", code, e.value("message", std::string()));
    if (code == "capability") throw CapabilityError(msg);
    if (code == "addressing") throw AddressingError(msg);
    if (code == "length") throw LengthError(msg);
    if (code == "plan") throw PlanError(msg);
    throw ProtocolError(msg);
  }
  RunOutput out;
  out.predicted_token = j.at("predicted_token").get<TokenId>();
  if (j.contains("distribution")) out.distribution = decode_vector(j.at("distribution").get<std::string>());
  for (const auto& c : j.at("captures")) {
    out.captures.push_back({site_from_json(c.at("site")), decode_vector(c.at("vector").get<std::string>())});
  }
  return out;
}

json error_response(std::string_view code, std::string_view message) {
  return {{"version", kProtocolVersion}, {"error", {{"code", code}, {"message", message}}}};
}

RunRequest request_from_hooks(const RunInputs& inputs, const runtime::Hooks& hooks) {
  RunRequest r;
  r.inputs = inputs;
  r.capture = hooks.captures;
  r.knockout_mode = hooks.knockout_mode;
  for (const auto& rep : hooks.replacements) r.plan.push_back(Intervention::replace(rep.site, rep.vector));
  for (const auto& b : hooks.blocks) r.plan.push_back(Intervention::block(b));
  return r;
}

runtime::Hooks hooks_from_request(const RunRequest& r) {
  runtime::Hooks hooks;
  hooks.knockout_mode = r.knockout_mode;
  hooks.captures = r.capture;
  for (const auto& iv : r.plan) {
    if (std::holds_alternative<Capture>(iv.action)) {
      hooks.captures.push_back(iv.site);
    } else if (const auto* rep = std::get_if<Replace>(&iv.action)) {
      hooks.replacements.push_back({iv.site, rep->vector});
    } else if (const auto* b = std::get_if<AttnBlock>(&iv.action)) {
      hooks.blocks.push_back(b->block);
    } else {
      throw CapabilityError("restore_from must be resolved by the client before sending");
    }
  }
  return hooks;
}

std::string handle_line(const Backend& backend, std::string_view line) {
  json response;
  try {
    const json request = json::parse(line);
    const int version = request.value("version", kProtocolVersion);
    if (version != kProtocolVersion) {
      response = error_response("version", fmt::format("unsupported protocol version {}", version));
    } else {
      const auto op = request.at("op").get<std::string>();
      if (op == "model_info") {
        response = capabilities_to_json(backend.capabilities());
      } else if (op == "run") {
        const RunRequest r = request_from_json(request);
        response = run_response_to_json(backend.execute(r.inputs, hooks_from_request(r)), r);
      } else if (op == "project") {
        const auto v = decode_vector(request.at("vector").get<std::string>());
        response = {{"version", kProtocolVersion}, {"logits", encode_vector(backend.project(v))}};
      } else {
        response = error_response("bad_request", fmt::format("unknown op '{}'", op));
      }
    }
  } catch (const std::exception& e) {
    response = error_response(error_code(e), e.what());
  }
  return response.dump();
}

}  // namespace rlab::engine::wire
