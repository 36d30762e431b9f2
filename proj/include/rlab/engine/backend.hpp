#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlab/engine/intervention.hpp"
#include "rlab/runtime/model.hpp"

namespace rlab::engine {

using runtime::RunInputs;
using runtime::RunOutput;
using runtime::TokenId;

// What a backend can execute. Only arch, layer counts, d_model, vocab_size and
// max_seq of `model` are meaningful for remote backends.
struct Capabilities {
  runtime::ModelConfig model;
  std::set<std::string> actions;  // subset of capture, replace, restore_from, attn_block

  bool supports(const std::string& action) const { return actions.contains(action); }
};

// Executes single forward passes with low-level hooks. restore_from is
// resolved by the Engine into replacements before reaching a backend.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual const Capabilities& capabilities() const = 0;
  virtual RunOutput execute(const RunInputs& inputs, const runtime::Hooks& hooks) const = 0;
  // Vocabulary projection E*x.
  virtual std::vector<double> project(std::span<const double> vector) const = 0;
};

class NativeBackend final : public Backend {
 public:
  explicit NativeBackend(runtime::ModelPtr model);

  const Capabilities& capabilities() const override { return caps_; }
  RunOutput execute(const RunInputs& inputs, const runtime::Hooks& hooks) const override;
  std::vector<double> project(std::span<const double> vector) const override;

  const runtime::Model& model() const { return *model_; }

 private:
  runtime::ModelPtr model_;
  Capabilities caps_;
};

// Immutable snapshots of captured activations, keyed by run id.
struct StoredRun {
  runtime::StreamShape shape;
  std::map<HookSite, std::vector<double>> vectors;  // tokens normalised to non-negative

  const std::vector<double>* find(const HookSite& site) const;
};

class RunStore {
 public:
  RunId put(runtime::StreamShape shape, std::vector<runtime::ActivationRecord> records);
  std::shared_ptr<const StoredRun> get(const RunId& id) const;  // null when unknown
  void erase(const RunId& id);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const StoredRun>> runs_;
  std::uint64_t next_ = 0;
};

// Greedy decoding through any backend (same stopping rule as runtime::greedy_decode).
std::vector<TokenId> greedy_decode(const Backend& backend, const RunInputs& prompt, int max_new);

}  // namespace rlab::engine
