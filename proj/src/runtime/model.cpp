#include "rlab/runtime/model.hpp"

#include <array>
#include <map>
#include <tuple>

#include <fmt/format.h>

#include "kernels.hpp"
#include "rlab/common/errors.hpp"

namespace rlab::runtime {
namespace {

constexpr int kKinds = 5;

// Replacement and capture lists bucketed by (stream, kind, layer).
class SiteTable {
 public:
  SiteTable(const ModelConfig& config, const RunInputs& inputs, const Hooks& hooks,
            RunOutput& out)
      : layers_(std::max(config.n_layers_enc, config.n_layers_dec) + 1),
        buckets_(static_cast<std::size_t>(2 * kKinds * layers_)),
        out_(out) {
    const StreamShape shape = inputs.shape();
    auto check = [&](const HookSite& site) {
      if (auto problem = site_problem(config, site, shape)) {
        throw AddressingError(fmt::format("invalid hook site {}: {}", describe(site), *problem));
      }
    };
    for (const auto& r : hooks.replacements) {
      check(r.site);
      if (static_cast<int>(r.vector.size()) != config.d_model) {
        throw AddressingError(fmt::format("replacement at {} has length {}, expected {}",
                                          describe(r.site), r.vector.size(), config.d_model));
      }
      const int t = resolve_token(r.site.token, shape.tokens(r.site.stream));
      bucket(r.site).replace.emplace_back(t, &r.vector);
    }
    out_.captures.resize(hooks.captures.size());
    for (std::size_t i = 0; i < hooks.captures.size(); ++i) {
      const HookSite& site = hooks.captures[i];
      check(site);
      const int t = resolve_token(site.token, shape.tokens(site.stream));
      out_.captures[i].site = site;
      bucket(site).capture.emplace_back(t, i);
    }
  }

  // Applies replacements to `x`, then records captures from it.
  void apply(Stream stream, SiteKind kind, int layer, Matrix& x) {
    Bucket& b = buckets_[index(stream, kind, layer)];
    for (const auto& [t, vec] : b.replace) {
      x.row(t) = Eigen::Map<const Eigen::RowVectorXd>(vec->data(), static_cast<Eigen::Index>(vec->size()));
    }
    for (const auto& [t, slot] : b.capture) {
      const auto row = x.row(t);
      out_.captures[slot].vector.assign(row.data(), row.data() + row.size());
    }
  }

 private:
  struct Bucket {
    std::vector<std::pair<int, const std::vector<double>*>> replace;
    std::vector<std::pair<int, std::size_t>> capture;
  };

  std::size_t index(Stream s, SiteKind k, int layer) const {
    return (static_cast<std::size_t>(s) * kKinds + static_cast<std::size_t>(k)) * layers_ +
           static_cast<std::size_t>(layer);
  }
  Bucket& bucket(const HookSite& site) { return buckets_[index(site.stream, site.kind, site.layer)]; }

  int layers_;
  std::vector<Bucket> buckets_;
  RunOutput& out_;
};

using MaskKey = std::tuple<Stream, AttentionKind, int>;

std::map<MaskKey, kernels::BlockMask> build_masks(const ModelConfig& config,
                                                  const RunInputs& inputs, const Hooks& hooks) {
  std::map<MaskKey, kernels::BlockMask> masks;
  const StreamShape shape = inputs.shape();
  for (const auto& block : hooks.blocks) {
    if (block.stream == Stream::enc && (block.attention == AttentionKind::cross ||
                                        !config.is_encoder_decoder())) {
      throw AddressingError("attention block addresses a module that does not exist");
    }
    if (block.attention == AttentionKind::cross && !config.is_encoder_decoder()) {
      throw AddressingError("cross-attention block on a decoder-only model");
    }
    const int nq = shape.tokens(block.stream);
    const int nk = block.attention == AttentionKind::cross ? shape.enc_tokens : nq;
    const int q = resolve_token(block.query_token, nq);
    const int layers = stream_layers(config, block.stream);
    for (int layer : block.layers) {
      if (layer < 0 || layer >= layers) {
        throw AddressingError(fmt::format("attention block layer {} outside [0, {})", layer, layers));
      }
      auto [it, inserted] = masks.try_emplace(MaskKey{block.stream, block.attention, layer});
      if (inserted) it->second = kernels::BlockMask::Constant(nq, nk, false);
      for (int key : block.key_tokens) it->second(q, resolve_token(key, nk)) = true;
    }
  }
  if (hooks.knockout_mode == KnockoutMode::mask_logits) {
    for (const auto& [key, mask] : masks) {
      const bool causal = std::get<0>(key) == Stream::dec && std::get<1>(key) == AttentionKind::self;
      for (Eigen::Index i = 0; i < mask.rows(); ++i) {
        const Eigen::Index visible = causal ? i + 1 : mask.cols();
        if (mask.row(i).head(visible).all()) {
          throw PlanError(fmt::format("attention block removes every key of query {} at layer {}",
                                      i, std::get<2>(key)));
        }
      }
    }
  }
  return masks;
}

}  // namespace

TokenId argmax(std::span<const double> values) {
  TokenId best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(i);
  }
  return best;
}

TokenId unique_argmax(std::span<const double> values) {
  if (values.empty()) return -1;
  const TokenId best = argmax(values);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (static_cast<TokenId>(i) != best && values[i] == values[static_cast<std::size_t>(best)]) {
      return -1;
    }
  }
  return best;
}

Model::Model(ModelConfig config, Weights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  if (weights_.embedding.rows() != config_.vocab_size ||
      weights_.embedding.cols() != config_.d_model ||
      static_cast<int>(weights_.decoder.size()) != config_.n_layers_dec ||
      static_cast<int>(weights_.encoder.size()) != config_.n_layers_enc) {
    throw ConfigError("weights do not match the model config");
  }
}

void Model::check_inputs(const RunInputs& inputs) const {
  auto check_ids = [&](const std::vector<TokenId>& ids, std::string_view what) {
    if (static_cast<int>(ids.size()) > config_.max_seq) {
      throw LengthError(fmt::format("{} sequence of length {} exceeds max_seq {}", what,
                                    ids.size(), config_.max_seq));
    }
    for (TokenId id : ids) {
      if (id < 0 || id >= config_.vocab_size) {
        throw AddressingError(fmt::format("{} token id {} outside vocabulary", what, id));
      }
    }
  };
  if (inputs.dec_tokens.empty()) throw LengthError("decoder input is empty");
  check_ids(inputs.dec_tokens, "decoder");
  if (config_.is_encoder_decoder()) {
    if (inputs.enc_tokens.empty()) throw LengthError("encoder input is required");
    check_ids(inputs.enc_tokens, "encoder");
  } else if (!inputs.enc_tokens.empty()) {
    throw AddressingError("decoder-only model received encoder tokens");
  }
}

RunOutput Model::forward(const RunInputs& inputs, const Hooks& hooks) const {
  check_inputs(inputs);
  RunOutput out;
  SiteTable sites(config_, inputs, hooks, out);
  const auto masks = build_masks(config_, inputs, hooks);
  const int heads = config_.n_heads;

  auto mask_for = [&](Stream s, AttentionKind a, int layer) -> const kernels::BlockMask* {
    auto it = masks.find(MaskKey{s, a, layer});
    return it == masks.end() ? nullptr : &it->second;
  };
  auto run_attention = [&](Stream s, AttentionKind a, int layer, const AttentionParams& p,
                           const Matrix& xq, const Matrix& xkv, bool causal) {
    if (!hooks.record_attention) {
      return kernels::attention(p, xq, xkv, heads, causal, mask_for(s, a, layer),
                                hooks.knockout_mode, nullptr);
    }
    kernels::AttentionCache cache;
    Matrix y = kernels::attention(p, xq, xkv, heads, causal, mask_for(s, a, layer),
                                  hooks.knockout_mode, &cache);
    for (int h = 0; h < heads; ++h) {
      out.attention.push_back({s, a, layer, h, std::move(cache.probs[static_cast<std::size_t>(h)])});
    }
    return y;
  };
  auto embed = [&](Stream s, const std::vector<TokenId>& ids, const Matrix& positions) {
    Matrix x(static_cast<Eigen::Index>(ids.size()), config_.d_model);
    for (std::size_t t = 0; t < ids.size(); ++t) x.row(t) = weights_.embedding.row(ids[t]);
    sites.apply(s, SiteKind::embed, 0, x);
    x += positions.topRows(x.rows());
    sites.apply(s, SiteKind::state_h, 0, x);
    return x;
  };

  Matrix enc_out;
  if (config_.is_encoder_decoder()) {
    Matrix x = embed(Stream::enc, inputs.enc_tokens, weights_.pos_enc);
    for (int l = 0; l < config_.n_layers_enc; ++l) {
      const BlockParams& b = weights_.encoder[static_cast<std::size_t>(l)];
      const Matrix a = kernels::rms_norm(x, &b.norm_self);
      Matrix s = run_attention(Stream::enc, AttentionKind::self, l, b.self, a, a, false);
      sites.apply(Stream::enc, SiteKind::self_attn_s, l, s);
      x += s;
      Matrix f = kernels::mlp(b, kernels::rms_norm(x, &b.norm_mlp), nullptr);
      sites.apply(Stream::enc, SiteKind::mlp_f, l, f);
      x += f;
      sites.apply(Stream::enc, SiteKind::state_h, l + 1, x);
    }
    enc_out = kernels::rms_norm(x, &weights_.enc_final_norm);
  }

  Matrix x = embed(Stream::dec, inputs.dec_tokens, weights_.pos_dec);
  for (int l = 0; l < config_.n_layers_dec; ++l) {
    const BlockParams& b = weights_.decoder[static_cast<std::size_t>(l)];
    const Matrix a = kernels::rms_norm(x, &b.norm_self);
    Matrix s = run_attention(Stream::dec, AttentionKind::self, l, b.self, a, a, true);
    sites.apply(Stream::dec, SiteKind::self_attn_s, l, s);
    x += s;
    if (config_.is_encoder_decoder()) {
      Matrix c = run_attention(Stream::dec, AttentionKind::cross, l, b.cross,
                               kernels::rms_norm(x, &b.norm_cross), enc_out, false);
      sites.apply(Stream::dec, SiteKind::cross_attn_c, l, c);
      x += c;
    }
    Matrix f = kernels::mlp(b, kernels::rms_norm(x, &b.norm_mlp), nullptr);
    sites.apply(Stream::dec, SiteKind::mlp_f, l, f);
    x += f;
    sites.apply(Stream::dec, SiteKind::state_h, l + 1, x);
  }

  const auto last = x.row(x.rows() - 1);
  out.distribution = distribution_from_state(std::span<const double>(last.data(), static_cast<std::size_t>(last.size())));
  out.predicted_token = argmax(out.distribution);
  return out;
}

std::vector<double> Model::project(std::span<const double> vector) const {
  if (static_cast<int>(vector.size()) != config_.d_model) {
    throw AddressingError("projected vector has the wrong length");
  }
  const Eigen::Map<const Eigen::VectorXd> v(vector.data(), config_.d_model);
  const Eigen::VectorXd logits = weights_.embedding * v;
  return {logits.data(), logits.data() + logits.size()};
}

std::vector<double> Model::distribution_from_state(std::span<const double> state) const {
  if (static_cast<int>(state.size()) != config_.d_model) {
    throw AddressingError("state vector has the wrong length");
  }
  const Eigen::Map<const Eigen::RowVectorXd> h(state.data(), config_.d_model);
  const Matrix y = kernels::rms_norm(Matrix(h), nullptr);
  const Eigen::RowVectorXd logits = y * weights_.embedding.transpose();
  return kernels::softmax(logits);
}

}  // namespace rlab::runtime
