#pragma once

// Newline-delimited JSON protocol shared with remote backends.
//
// Request  {"version": 1, "op": "model_info"}
//          {"version": 1, "op": "run", "inputs": {"enc_ids": [...], "dec_ids": [...]},
//           "plan": [Intervention...], "capture": [HookSite...],
//           "knockout_mode": "mask_logits" | "zero_weights",
//           "return": {"top_k": k, "distribution": true}}
//          {"version": 1, "op": "project", "vector": "<b64>"}
// Response {"version": 1, ...op fields...} or {"version": 1, "error": {"code", "message"}}
//
// HookSite     {"stream": "enc"|"dec", "layer": l, "kind": "state_h"|..., "token": t}
// Intervention {"action": "capture", "site": HookSite}
//              {"action": "replace", "site": HookSite, "vector": "<b64>"}
//              {"action": "restore_from", "site": HookSite, "run_id": "..."}
//              {"action": "attn_block", "stream": "dec", "attention": "self"|"cross",
//               "layers": [...], "query_token": t, "key_tokens": [...]}
// Vectors are base64 (RFC 4648, padded) little-endian IEEE-754 float32 arrays.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlab/engine/backend.hpp"
#include "rlab/engine/intervention.hpp"

namespace rlab::engine::wire {

inline constexpr int kProtocolVersion = 1;

std::string encode_vector(std::span<const double> values);
std::vector<double> decode_vector(std::string_view base64);

nlohmann::json site_to_json(const HookSite& site);
HookSite site_from_json(const nlohmann::json& j);

nlohmann::json intervention_to_json(const Intervention& iv);
Intervention intervention_from_json(const nlohmann::json& j);

nlohmann::json plan_to_json(const Plan& plan);
Plan plan_from_json(const nlohmann::json& j);

nlohmann::json capabilities_to_json(const Capabilities& caps);
Capabilities capabilities_from_json(const nlohmann::json& j);

std::string_view to_string(runtime::KnockoutMode mode);
runtime::KnockoutMode parse_knockout_mode(std::string_view text);

struct RunRequest {
  RunInputs inputs;
  Plan plan;  // replace / attn_block (capture entries are also accepted)
  std::vector<HookSite> capture;
  runtime::KnockoutMode knockout_mode = runtime::KnockoutMode::mask_logits;
  int top_k = 0;
  bool distribution = true;
};

nlohmann::json request_to_json(const RunRequest& request);
RunRequest request_from_json(const nlohmann::json& j);

nlohmann::json run_response_to_json(const RunOutput& out, const RunRequest& request);
RunOutput run_response_from_json(const nlohmann::json& j);

nlohmann::json error_response(std::string_view code, std::string_view message);

// Converts low-level hooks into a run request and back.
RunRequest request_from_hooks(const RunInputs& inputs, const runtime::Hooks& hooks);
runtime::Hooks hooks_from_request(const RunRequest& request);

// Serves one request line against `backend`; never throws.
std::string handle_line(const Backend& backend, std::string_view line);

}  // namespace rlab::engine::wire
