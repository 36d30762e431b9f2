#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "oracle.hpp"
#include "rlab/corpus/synthetic.hpp"
#include "rlab/engine/backend.hpp"
#include "rlab/harvest/harvest.hpp"
#include "rlab/harvest/toy_training.hpp"
#include "rlab/runtime/model.hpp"

namespace fixtures {

using namespace rlab;

// The small random model used for oracle comparisons.
inline runtime::ModelConfig tiny_config(runtime::Arch arch = runtime::Arch::decoder_only, std::uint64_t seed = 11) {
  runtime::ModelConfig c;
  c.arch = arch;
  c.n_layers_dec = 2;
  c.n_layers_enc = arch == runtime::Arch::encoder_decoder ? 2 : 0;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 32;
  c.max_seq = 16;
  if (arch == runtime::Arch::encoder_decoder) c.sentinel_ids = {4};
  c.seed = seed;
  return c;
}

// Weights scaled up so attention and outputs are far from uniform.
inline runtime::ModelPtr tiny_model(runtime::Arch arch = runtime::Arch::decoder_only, std::uint64_t seed = 11) {
  const auto c = tiny_config(arch, seed);
  auto w = runtime::Weights::init(c, seed);
  runtime::for_each_param(w, [](const runtime::ParamView& p) {
    if (p.name.find("norm") != std::string::npos) return;
    for (double& v : p.data) v *= 3.0;
  });
  return std::make_shared<runtime::Model>(c, std::move(w));
}

inline std::vector<runtime::TokenId> random_tokens(std::mt19937_64& rng, int n, int vocab = 32, int lo = 5) {
  std::uniform_int_distribution<int> d(lo, vocab - 1);
  std::vector<runtime::TokenId> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = d(rng);
  return out;
}

inline oracle::Output oracle_run(const runtime::Model& m, const runtime::RunInputs& in, const oracle::Hooks& h = {}) {
  return oracle::forward(m.config(), m.weights(), in.enc_tokens, in.dec_tokens, h);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Random replacements and attention blocks expressed for both the runtime
// and the oracle.
struct HookPair {
  runtime::Hooks runtime;
  oracle::Hooks oracle;
};

inline HookPair random_hooks(std::mt19937_64& rng, const runtime::ModelConfig& c, const runtime::RunInputs& in,
                             runtime::KnockoutMode mode) {
  using runtime::AttentionKind;
  using runtime::SiteKind;
  using runtime::Stream;
  HookPair h;
  h.runtime.knockout_mode = mode;
  h.oracle.mode = mode;
  const bool ed = c.is_encoder_decoder();
  std::uniform_int_distribution<int> coin(0, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  const int n_repl = pick(3) + 1;
  for (int i = 0; i < n_repl; ++i) {
    const Stream s = ed && coin(rng) ? Stream::enc : Stream::dec;
    std::vector<SiteKind> kinds = {SiteKind::embed, SiteKind::state_h, SiteKind::self_attn_s, SiteKind::mlp_f};
    if (ed && s == Stream::dec) kinds.push_back(SiteKind::cross_attn_c);
    const SiteKind k = kinds[static_cast<std::size_t>(pick(static_cast<int>(kinds.size())))];
    const int layers = runtime::stream_layers(c, s);
    const int layer = k == SiteKind::embed ? 0 : pick(k == SiteKind::state_h ? layers + 1 : layers);
    const int n = static_cast<int>((s == Stream::enc ? in.enc_tokens : in.dec_tokens).size());
    const int token = pick(n);
    bool taken = false;
    for (const auto& [o, _] : h.oracle.replace) taken |= o.stream == s && o.kind == k && o.layer == layer && o.token == token;
    if (taken) continue;
    std::vector<double> v(static_cast<std::size_t>(c.d_model));
    for (double& x : v) x = normal(rng);
    h.runtime.replacements.push_back({{s, layer, k, token - (coin(rng) ? n : 0)}, v});
    h.oracle.replace.push_back({{s, k, layer, token}, v});
  }
  const int n_blocks = pick(3);
  for (int i = 0; i < n_blocks; ++i) {
    Stream s = Stream::dec;
    AttentionKind a = AttentionKind::self;
    if (ed) {
      const int which = pick(3);
      s = which == 0 ? Stream::enc : Stream::dec;
      a = which == 2 ? AttentionKind::cross : AttentionKind::self;
    }
    const int nq = static_cast<int>((s == Stream::enc ? in.enc_tokens : in.dec_tokens).size());
    const int nk = a == AttentionKind::cross ? static_cast<int>(in.enc_tokens.size()) : nq;
    const int q = pick(nq);
    // keep one visible key so masked rows stay well defined
    const int keep = (s == Stream::dec && a == AttentionKind::self) ? pick(q + 1) : pick(nk);
    std::vector<int> keys;
    for (int k = 0; k < nk; ++k) {
      if (k != keep && coin(rng)) keys.push_back(k);
    }
    if (keys.empty()) continue;
    const int layer = pick(runtime::stream_layers(c, s));
    h.runtime.blocks.push_back({s, a, {layer}, q, keys});
    h.oracle.blocks.push_back({s, a, layer, q, keys});
  }
  return h;
}

inline runtime::RunInputs random_inputs(std::mt19937_64& rng, const runtime::ModelConfig& c) {
  std::uniform_int_distribution<int> len(2, 7);
  runtime::RunInputs in;
  if (c.is_encoder_decoder()) in.enc_tokens = random_tokens(rng, len(rng), c.vocab_size);
  in.dec_tokens = random_tokens(rng, len(rng), c.vocab_size);
  return in;
}

// A trained toy with its corpus and harvest, built once per process.
struct Toy {
  corpus::Corpus corpus;
  harvest::ToyModel toy;
  std::shared_ptr<engine::NativeBackend> backend;
  std::map<std::string, std::vector<harvest::MemorizedExample>> harvests;
  std::map<std::string, harvest::HarvestStats> stats;
};

struct ToySpec {
  runtime::Arch arch = runtime::Arch::decoder_only;
  int n_subjects = 8;
  int n_relations = 3;
  int layers = 2;
  int d_model = 32;
  int steps = 3000;
  std::uint64_t seed = 0;
  double collisions = 0.0;
};

inline Toy build_toy(const ToySpec& spec) {
  Toy t;
  corpus::SyntheticOptions so;
  so.n_subjects = spec.n_subjects;
  so.n_relations = spec.n_relations;
  so.collision_fraction = spec.collisions;
  so.seed = spec.seed;
  t.corpus = corpus::filter_trivial(corpus::gen_synthetic(so).corpus);
  runtime::ModelConfig c;
  c.arch = spec.arch;
  c.n_layers_dec = spec.layers;
  c.n_layers_enc = spec.arch == runtime::Arch::encoder_decoder ? spec.layers : 0;
  c.d_model = spec.d_model;
  c.n_heads = 4;
  c.d_ff = 4 * spec.d_model;
  c.seed = spec.seed;
  runtime::TrainOptions to;
  to.steps = spec.steps;
  to.seed = spec.seed;
  to.target_loss = 0.01;
  t.toy = harvest::train_toy(t.corpus, c, to, {});
  t.backend = std::make_shared<engine::NativeBackend>(t.toy.model);
  for (const auto& lang : t.corpus.languages) {
    harvest::HarvestOptions ho;
    ho.seed = spec.seed;
    auto res = harvest::harvest(*t.backend, t.toy.vocab, t.corpus, lang, ho);
    t.harvests[lang] = std::move(res.examples);
    t.stats[lang] = res.stats;
  }
  return t;
}

inline const Toy& decoder_toy() {
  static const Toy toy = build_toy({});
  return toy;
}

inline const Toy& encdec_toy() {
  static const Toy toy = [] {
    ToySpec s;
    s.arch = runtime::Arch::encoder_decoder;
    return build_toy(s);
  }();
  return toy;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("rlab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixtures
