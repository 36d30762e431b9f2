#include "rlab/runtime/weights.hpp"

#include <cmath>
#include <random>

namespace rlab::runtime {
namespace {

BlockParams zero_block(const ModelConfig& c, bool with_cross) {
  const int d = c.d_model;
  BlockParams b;
  auto attn = [d] {
    return AttentionParams{Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d),
                           Matrix::Zero(d, d)};
  };
  b.norm_self = RowVector::Zero(d);
  b.self = attn();
  if (with_cross) {
    b.norm_cross = RowVector::Zero(d);
    b.cross = attn();
  }
  b.norm_mlp = RowVector::Zero(d);
  b.w_in = Matrix::Zero(d, c.d_ff);
  b.b_in = RowVector::Zero(c.d_ff);
  b.w_out = Matrix::Zero(c.d_ff, d);
  b.b_out = RowVector::Zero(d);
  return b;
}

template <typename W, typename Fn>
void visit(W& w, Fn&& fn) {
  auto mat = [&](const std::string& name, auto& m) {
    fn(name, static_cast<int>(m.rows()), static_cast<int>(m.cols()), m.data());
  };
  auto block = [&](const std::string& prefix, auto& b) {
    mat(prefix + ".norm_self", b.norm_self);
    mat(prefix + ".self.wq", b.self.wq);
    mat(prefix + ".self.wk", b.self.wk);
    mat(prefix + ".self.wv", b.self.wv);
    mat(prefix + ".self.wo", b.self.wo);
    if (b.norm_cross.size() > 0) {
      mat(prefix + ".norm_cross", b.norm_cross);
      mat(prefix + ".cross.wq", b.cross.wq);
      mat(prefix + ".cross.wk", b.cross.wk);
      mat(prefix + ".cross.wv", b.cross.wv);
      mat(prefix + ".cross.wo", b.cross.wo);
    }
    mat(prefix + ".norm_mlp", b.norm_mlp);
    mat(prefix + ".mlp.w_in", b.w_in);
    mat(prefix + ".mlp.b_in", b.b_in);
    mat(prefix + ".mlp.w_out", b.w_out);
    mat(prefix + ".mlp.b_out", b.b_out);
  };
  mat("embedding", w.embedding);
  mat("pos_dec", w.pos_dec);
  if (w.pos_enc.size() > 0) mat("pos_enc", w.pos_enc);
  for (std::size_t i = 0; i < w.encoder.size(); ++i) block("enc." + std::to_string(i), w.encoder[i]);
  if (w.enc_final_norm.size() > 0) mat("enc_final_norm", w.enc_final_norm);
  for (std::size_t i = 0; i < w.decoder.size(); ++i) block("dec." + std::to_string(i), w.decoder[i]);
}

}  // namespace

Weights Weights::zeros(const ModelConfig& c) {
  Weights w;
  w.embedding = Matrix::Zero(c.vocab_size, c.d_model);
  w.pos_dec = Matrix::Zero(c.max_seq, c.d_model);
  const bool ed = c.is_encoder_decoder();
  if (ed) {
    w.pos_enc = Matrix::Zero(c.max_seq, c.d_model);
    w.enc_final_norm = RowVector::Zero(c.d_model);
  }
  for (int l = 0; l < c.n_layers_enc; ++l) w.encoder.push_back(zero_block(c, false));
  for (int l = 0; l < c.n_layers_dec; ++l) w.decoder.push_back(zero_block(c, ed));
  return w;
}

Weights Weights::init(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Weights w = zeros(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](auto& m, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
  };
  const double d = c.d_model;
  const int depth = c.n_layers_dec + c.n_layers_enc;
  const double resid_scale = 1.0 / std::sqrt(2.0 * depth);
  fill(w.embedding, 1.0 / std::sqrt(d));
  fill(w.pos_dec, 0.5 / std::sqrt(d));
  if (c.is_encoder_decoder()) {
    fill(w.pos_enc, 0.5 / std::sqrt(d));
    w.enc_final_norm.setOnes();
  }
  auto init_attn = [&](AttentionParams& a) {
    fill(a.wq, 1.0 / std::sqrt(d));
    fill(a.wk, 1.0 / std::sqrt(d));
    fill(a.wv, 1.0 / std::sqrt(d));
    fill(a.wo, resid_scale / std::sqrt(d));
  };
  auto init_block = [&](BlockParams& b) {
    b.norm_self.setOnes();
    init_attn(b.self);
    if (b.norm_cross.size() > 0) {
      b.norm_cross.setOnes();
      init_attn(b.cross);
    }
    b.norm_mlp.setOnes();
    fill(b.w_in, 1.0 / std::sqrt(d));
    fill(b.w_out, resid_scale / std::sqrt(static_cast<double>(c.d_ff)));
  };
  for (auto& b : w.encoder) init_block(b);
  for (auto& b : w.decoder) init_block(b);
  return w;
}

bool Weights::all_finite() const {
  bool ok = true;
  for_each_param(*this, [&](const std::string&, int, int, std::span<const double> data) {
    for (double v : data) ok = ok && std::isfinite(v);
  });
  return ok;
}

void for_each_param(Weights& w, const std::function<void(const ParamView&)>& fn) {
  visit(w, [&](const std::string& name, int rows, int cols, double* data) {
    fn(ParamView{name, rows, cols, std::span<double>(data, static_cast<std::size_t>(rows) * cols)});
  });
}

void for_each_param(const Weights& w,
                    const std::function<void(const std::string&, int, int,
                                             std::span<const double>)>& fn) {
  visit(w, [&](const std::string& name, int rows, int cols, const double* data) {
    fn(name, rows, cols, std::span<const double>(data, static_cast<std::size_t>(rows) * cols));
  });
}

}  // namespace rlab::runtime
