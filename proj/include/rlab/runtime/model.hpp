#pragma once

#include <memory>
#include <span>
#include <vector>

#include "rlab/runtime/config.hpp"
#include "rlab/runtime/hooks.hpp"
#include "rlab/runtime/weights.hpp"

namespace rlab::runtime {

struct RunInputs {
  std::vector<TokenId> enc_tokens;  // empty for decoder-only models
  std::vector<TokenId> dec_tokens;

  StreamShape shape() const {
    return {static_cast<int>(enc_tokens.size()), static_cast<int>(dec_tokens.size())};
  }
};

struct AttentionMap {
  Stream stream;
  AttentionKind attention;
  int layer;
  int head;
  Matrix weights;  // queries x keys
};

struct RunOutput {
  std::vector<double> distribution;  // next-token probabilities at the last decoder position
  std::vector<ActivationRecord> captures;  // in the order requested
  TokenId predicted_token = 0;
  std::vector<AttentionMap> attention;  // only when Hooks::record_attention
};

// Lowest index among the maxima.
TokenId argmax(std::span<const double> values);

// Index of the strict maximum, or -1 when the maximum is shared.
TokenId unique_argmax(std::span<const double> values);

// Architecture: learned token and position embeddings; pre-norm blocks with
// RMS-norm gains; multi-head softmax attention without biases; GELU (tanh)
// MLP with biases. The final residual is scaled by 1/rms (no gain) and the
// output head is the transposed embedding matrix, so the ranking of E*h^L
// is the model's ranking.
class Model {
 public:
  Model(ModelConfig config, Weights weights);

  const ModelConfig& config() const { return config_; }
  const Weights& weights() const { return weights_; }

  // One forward pass. Pure: identical arguments give bit-identical output.
  RunOutput forward(const RunInputs& inputs, const Hooks& hooks = {}) const;

  // Vocabulary projection E*x (unnormalised logits).
  std::vector<double> project(std::span<const double> vector) const;

  // Output distribution for a final residual vector h^L.
  std::vector<double> distribution_from_state(std::span<const double> state) const;

  void check_inputs(const RunInputs& inputs) const;

 private:
  ModelConfig config_;
  Weights weights_;
};

using ModelPtr = std::shared_ptr<const Model>;

}  // namespace rlab::runtime
