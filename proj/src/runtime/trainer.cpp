#include "rlab/runtime/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "kernels.hpp"
#include "rlab/common/errors.hpp"

namespace rlab::runtime {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct LayerCache {
  Matrix x_in;
  Eigen::VectorXd inv_self;
  Matrix a;
  kernels::AttentionCache self;
  Matrix x_after_self;
  Eigen::VectorXd inv_cross;
  Matrix b;
  kernels::AttentionCache cross;
  Matrix x_before_mlp;
  Eigen::VectorXd inv_mlp;
  Matrix m;
  kernels::MlpCache mlp;
};

Matrix embed(const Weights& w, const Matrix& positions, const std::vector<TokenId>& ids) {
  Matrix x(static_cast<Eigen::Index>(ids.size()), w.embedding.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    x.row(t) = w.embedding.row(ids[t]) + positions.row(static_cast<Eigen::Index>(t));
  }
  return x;
}

void embed_backward(Weights& g, Matrix& dpositions, const std::vector<TokenId>& ids,
                    const Matrix& dx) {
  for (std::size_t t = 0; t < ids.size(); ++t) {
    g.embedding.row(ids[t]) += dx.row(t);
    dpositions.row(static_cast<Eigen::Index>(t)) += dx.row(t);
  }
}

Matrix block_forward(const BlockParams& p, int heads, Matrix x, bool causal,
                     const Matrix* enc_out, LayerCache& c) {
  c.x_in = x;
  c.a = kernels::rms_norm(x, &p.norm_self, &c.inv_self);
  x += kernels::attention(p.self, c.a, c.a, heads, causal, nullptr, KnockoutMode::mask_logits,
                          &c.self);
  c.x_after_self = x;
  if (enc_out) {
    c.b = kernels::rms_norm(x, &p.norm_cross, &c.inv_cross);
    x += kernels::attention(p.cross, c.b, *enc_out, heads, false, nullptr,
                            KnockoutMode::mask_logits, &c.cross);
  }
  c.x_before_mlp = x;
  c.m = kernels::rms_norm(x, &p.norm_mlp, &c.inv_mlp);
  x += kernels::mlp(p, c.m, &c.mlp);
  return x;
}

// dx: gradient w.r.t. the block output. Returns gradient w.r.t. the block input;
// adds the encoder-output gradient to *denc when the block has cross-attention.
Matrix block_backward(const BlockParams& p, int heads, const LayerCache& c, const Matrix& dx,
                      const Matrix* enc_out, Matrix* denc, BlockParams& g) {
  const Matrix dm = kernels::mlp_backward(p, c.m, c.mlp, dx, g);
  Matrix d = dx + kernels::rms_norm_backward(c.x_before_mlp, &p.norm_mlp, c.inv_mlp, dm, &g.norm_mlp);
  if (enc_out) {
    Matrix dq, dkv;
    kernels::attention_backward(p.cross, c.b, *enc_out, heads, c.cross, d, g.cross, dq, dkv);
    *denc += dkv;
    d += kernels::rms_norm_backward(c.x_after_self, &p.norm_cross, c.inv_cross, dq, &g.norm_cross);
  }
  Matrix dq, dkv;
  kernels::attention_backward(p.self, c.a, c.a, heads, c.self, d, g.self, dq, dkv);
  dq += dkv;
  d += kernels::rms_norm_backward(c.x_in, &p.norm_self, c.inv_self, dq, &g.norm_self);
  return d;
}

// Summed cross-entropy of one sequence; accumulates gradients when `g` is set.
double sequence_loss(const ModelConfig& cfg, const Weights& w, const TrainingSequence& seq,
                     Weights* g, int* n_targets) {
  const int heads = cfg.n_heads;
  const bool ed = cfg.is_encoder_decoder();
  const int T = static_cast<int>(seq.dec_tokens.size());
  if (T > cfg.max_seq || static_cast<int>(seq.enc_tokens.size()) > cfg.max_seq) {
    throw LengthError("training sequence exceeds max_seq");
  }

  std::vector<LayerCache> enc_caches(static_cast<std::size_t>(cfg.n_layers_enc));
  Matrix enc_state, enc_out;
  Eigen::VectorXd enc_inv;
  if (ed) {
    Matrix x = embed(w, w.pos_enc, seq.enc_tokens);
    for (int l = 0; l < cfg.n_layers_enc; ++l) {
      x = block_forward(w.encoder[l], heads, std::move(x), false, nullptr, enc_caches[l]);
    }
    enc_state = x;
    enc_out = kernels::rms_norm(x, &w.enc_final_norm, &enc_inv);
  }

  std::vector<LayerCache> dec_caches(static_cast<std::size_t>(cfg.n_layers_dec));
  Matrix x = embed(w, w.pos_dec, seq.dec_tokens);
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    x = block_forward(w.decoder[l], heads, std::move(x), true, ed ? &enc_out : nullptr,
                      dec_caches[l]);
  }
  Eigen::VectorXd final_inv;
  const Matrix y = kernels::rms_norm(x, nullptr, &final_inv);
  const Matrix logits = y * w.embedding.transpose();

  double loss = 0.0;
  Matrix dlogits = Matrix::Zero(logits.rows(), logits.cols());
  int targets = 0;
  for (int i = std::max(0, seq.loss_from); i + 1 < T; ++i) {
    const auto probs = kernels::softmax(logits.row(i));
    const TokenId target = seq.dec_tokens[static_cast<std::size_t>(i + 1)];
    loss -= std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-300));
    for (std::size_t v = 0; v < probs.size(); ++v) dlogits(i, static_cast<Eigen::Index>(v)) = probs[v];
    dlogits(i, target) -= 1.0;
    ++targets;
  }
  if (n_targets) *n_targets += targets;
  if (!g) return loss;

  g->embedding.noalias() += dlogits.transpose() * y;
  Matrix dx = kernels::rms_norm_backward(x, nullptr, final_inv, dlogits * w.embedding, nullptr);
  Matrix denc = ed ? Matrix::Zero(enc_out.rows(), enc_out.cols()) : Matrix();
  for (int l = cfg.n_layers_dec - 1; l >= 0; --l) {
    dx = block_backward(w.decoder[l], heads, dec_caches[l], dx, ed ? &enc_out : nullptr,
                        ed ? &denc : nullptr, g->decoder[l]);
  }
  embed_backward(*g, g->pos_dec, seq.dec_tokens, dx);
  if (ed) {
    Matrix de = kernels::rms_norm_backward(enc_state, &w.enc_final_norm, enc_inv, denc,
                                           &g->enc_final_norm);
    for (int l = cfg.n_layers_enc - 1; l >= 0; --l) {
      de = block_backward(w.encoder[l], heads, enc_caches[l], de, nullptr, nullptr, g->encoder[l]);
    }
    embed_backward(*g, g->pos_enc, seq.enc_tokens, de);
  }
  return loss;
}

std::vector<std::span<double>> flat_views(Weights& w) {
  std::vector<std::span<double>> out;
  for_each_param(w, [&](const ParamView& p) { out.push_back(p.data); });
  return out;
}

}  // namespace

double loss_and_gradients(const ModelConfig& config, const Weights& weights,
                          const std::vector<TrainingSequence>& batch, Weights* grads) {
  double loss = 0.0;
  for (const auto& seq : batch) loss += sequence_loss(config, weights, seq, grads, nullptr);
  return loss;
}

TrainReport train(const ModelConfig& config, const std::vector<TrainingSequence>& data,
                  const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw TrainingError("training corpus is empty");
  if (options.steps < 1) throw TrainingError("training needs at least one step");

  TrainReport report;
  report.weights = Weights::init(config, options.seed ^ config.seed);
  Weights& w = report.weights;
  Weights grad = Weights::zeros(config);
  Weights m1 = Weights::zeros(config);
  Weights m2 = Weights::zeros(config);
  auto params = flat_views(w);
  auto gviews = flat_views(grad);
  auto m1views = flat_views(m1);
  auto m2views = flat_views(m2);

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));

  double epoch_loss = 0.0;
  int epoch_targets = 0;
  for (int step = 1; step <= options.steps; ++step) {
    if (cursor >= order.size()) {
      if (epoch_targets > 0 && options.target_loss > 0 &&
          epoch_loss / epoch_targets < options.target_loss) {
        break;
      }
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
      epoch_loss = 0.0;
      epoch_targets = 0;
    }
    for (auto v : gviews) std::fill(v.begin(), v.end(), 0.0);
    double loss = 0.0;
    int targets = 0;
    const std::size_t end = std::min(order.size(), cursor + batch);
    for (; cursor < end; ++cursor) {
      loss += sequence_loss(config, w, data[order[cursor]], &grad, &targets);
    }
    if (!std::isfinite(loss)) {
      throw TrainingError(fmt::format("loss became non-finite at step {}", step));
    }
    epoch_loss += loss;
    epoch_targets += targets;
    const double mean_loss = targets > 0 ? loss / targets : 0.0;
    report.loss_history.push_back(mean_loss);
    report.final_loss = mean_loss;
    report.steps_run = step;
    if (options.on_step) options.on_step(step, mean_loss);
    if (targets == 0) continue;

    double norm2 = 0.0;
    for (auto v : gviews) {
      for (double& x : v) {
        x /= targets;
        norm2 += x * x;
      }
    }
    const double norm = std::sqrt(norm2);
    const double clip = options.grad_clip > 0 && norm > options.grad_clip ? options.grad_clip / norm : 1.0;

    double lr = options.lr;
    if (step <= options.warmup_steps) {
      lr *= static_cast<double>(step) / options.warmup_steps;
    } else if (options.steps > options.warmup_steps) {
      const double progress = static_cast<double>(step - options.warmup_steps) /
                              (options.steps - options.warmup_steps);
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(kPi * progress));
    }
    const double bc1 = 1.0 - std::pow(options.beta1, step);
    const double bc2 = 1.0 - std::pow(options.beta2, step);
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto p = params[t];
      auto gv = gviews[t];
      auto a = m1views[t];
      auto b = m2views[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = gv[i] * clip;
        a[i] = options.beta1 * a[i] + (1.0 - options.beta1) * gi;
        b[i] = options.beta2 * b[i] + (1.0 - options.beta2) * gi * gi;
        p[i] -= lr * (a[i] / bc1) / (std::sqrt(b[i] / bc2) + options.eps);
      }
    }
  }
  if (!w.all_finite()) throw TrainingError("training produced non-finite weights");
  return report;
}

}  // namespace rlab::runtime
