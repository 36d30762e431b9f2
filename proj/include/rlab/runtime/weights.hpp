#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rlab/runtime/config.hpp"

namespace rlab::runtime {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

// Projections are stored input-major: y = x * W.
struct AttentionParams {
  Matrix wq, wk, wv, wo;  // d_model x d_model
};

struct BlockParams {
  RowVector norm_self;  // RMS-norm gain before self-attention
  AttentionParams self;
  RowVector norm_cross;  // decoder blocks of encoder-decoder models only
  AttentionParams cross;
  RowVector norm_mlp;
  Matrix w_in;  // d_model x d_ff
  RowVector b_in;
  Matrix w_out;  // d_ff x d_model
  RowVector b_out;
};

struct Weights {
  Matrix embedding;  // vocab x d_model; also the output head (logits = E y)
  Matrix pos_dec;    // max_seq x d_model
  Matrix pos_enc;    // max_seq x d_model (encoder-decoder)
  std::vector<BlockParams> encoder;
  std::vector<BlockParams> decoder;
  RowVector enc_final_norm;  // gain applied to the encoder output before cross-attention

  // Zero-filled tensors with the shapes `config` requires.
  static Weights zeros(const ModelConfig& config);
  // Seeded random initialisation.
  static Weights init(const ModelConfig& config, std::uint64_t seed);

  bool all_finite() const;
};

// A view of one named parameter tensor (row-major storage).
struct ParamView {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::span<double> data;
};

// Visits every parameter tensor in a fixed order with a stable name such as
// "dec.1.self.wq". The order and names define the checkpoint layout.
void for_each_param(Weights& w, const std::function<void(const ParamView&)>& fn);
void for_each_param(const Weights& w,
                    const std::function<void(const std::string&, int, int,
                                             std::span<const double>)>& fn);

}  // namespace rlab::runtime
