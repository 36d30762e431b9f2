#include "rlab/engine/backend.hpp"

#include "rlab/common/errors.hpp"
#include "rlab/runtime/tokenizer.hpp"

namespace rlab::engine {

NativeBackend::NativeBackend(runtime::ModelPtr model) : model_(std::move(model)) {
  if (!model_) throw ConfigError("native backend needs a model");
  caps_.model = model_->config();
  caps_.actions = {"capture", "replace", "restore_from", "attn_block"};
}

RunOutput NativeBackend::execute(const RunInputs& inputs, const runtime::Hooks& hooks) const {
  return model_->forward(inputs, hooks);
}

std::vector<double> NativeBackend::project(std::span<const double> vector) const {
  return model_->project(vector);
}

const std::vector<double>* StoredRun::find(const HookSite& site) const {
  HookSite key = site;
  key.token = runtime::resolve_token(site.token, shape.tokens(site.stream));
  auto it = vectors.find(key);
  return it == vectors.end() ? nullptr : &it->second;
}

RunId RunStore::put(runtime::StreamShape shape, std::vector<runtime::ActivationRecord> records) {
  auto run = std::make_shared<StoredRun>();
  run->shape = shape;
  for (auto& r : records) {
    r.site.token = runtime::resolve_token(r.site.token, shape.tokens(r.site.stream));
    run->vectors.insert_or_assign(r.site, std::move(r.vector));
  }
  std::lock_guard lock(mutex_);
  RunId id{"run-" + std::to_string(next_++)};
  runs_.emplace(id.value, std::move(run));
  return id;
}

std::shared_ptr<const StoredRun> RunStore::get(const RunId& id) const {
  std::lock_guard lock(mutex_);
  auto it = runs_.find(id.value);
  return it == runs_.end() ? nullptr : it->second;
}

void RunStore::erase(const RunId& id) {
  std::lock_guard lock(mutex_);
  runs_.erase(id.value);
}

std::size_t RunStore::size() const {
  std::lock_guard lock(mutex_);
  return runs_.size();
}

std::vector<TokenId> greedy_decode(const Backend& backend, const RunInputs& prompt, int max_new) {
  if (max_new < 1) throw ConfigError("greedy_decode needs max_new >= 1");
  const int max_seq = backend.capabilities().model.max_seq;
  RunInputs inputs = prompt;
  std::vector<TokenId> generated;
  for (int i = 0; i < max_new; ++i) {
    if (static_cast<int>(inputs.dec_tokens.size()) >= max_seq) break;
    const TokenId next = backend.execute(inputs, {}).predicted_token;
    generated.push_back(next);
    if (next == runtime::Vocabulary::kEos) break;
    inputs.dec_tokens.push_back(next);
  }
  return generated;
}

}  // namespace rlab::engine
