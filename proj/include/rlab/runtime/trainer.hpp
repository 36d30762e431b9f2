#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rlab/runtime/model.hpp"

namespace rlab::runtime {

// One training sequence. Loss is next-token cross-entropy on dec_tokens
// positions from `loss_from` onwards (position i predicts token i + 1).
struct TrainingSequence {
  std::vector<TokenId> enc_tokens;
  std::vector<TokenId> dec_tokens;
  int loss_from = 0;
};

struct TrainOptions {
  int steps = 1000;
  double lr = 3e-3;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double grad_clip = 1.0;
  int warmup_steps = 50;
  std::uint64_t seed = 0;
  // Stop early once the mean loss over an epoch drops below this value (0 = never).
  double target_loss = 0.0;
  std::function<void(int step, double loss)> on_step;
};

struct TrainReport {
  Weights weights;
  double final_loss = 0.0;
  int steps_run = 0;
  std::vector<double> loss_history;  // mean loss per step
};

// Adam on next-token cross-entropy, single-threaded. Throws TrainingError when
// the loss becomes non-finite.
TrainReport train(const ModelConfig& config, const std::vector<TrainingSequence>& data,
                  const TrainOptions& options);

// Summed loss and gradients for a set of sequences (exposed for gradient checks).
double loss_and_gradients(const ModelConfig& config, const Weights& weights,
                          const std::vector<TrainingSequence>& batch, Weights* grads);

}  // namespace rlab::runtime
