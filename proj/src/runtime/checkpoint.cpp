#include "rlab/runtime/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::runtime {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[4] = {'R', 'L', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) {
    throw LoadError(fmt::format("{}: truncated checkpoint", path.string()));
  }
  return v;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const Weights& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  std::uint32_t count = 0;
  for_each_param(weights, [&](const std::string&, int, int, std::span<const double>) { ++count; });
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, count);
  for_each_param(weights, [&](const std::string& name, int rows, int cols,
                              std::span<const double> data) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(rows));
    put_u32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size_bytes()));
  });
  if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

Weights load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(fmt::format("cannot open checkpoint {}", path.string()));
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw LoadError(fmt::format("{}: not a recall-lab checkpoint", path.string()));
  }
  if (const auto v = get_u32(in, path); v != kVersion) {
    throw LoadError(fmt::format("{}: unsupported checkpoint version {}", path.string(), v));
  }
  const std::uint32_t count = get_u32(in, path);
  Weights w = Weights::zeros(config);
  std::uint32_t seen = 0;
  for_each_param(w, [&](const ParamView& p) {
    if (seen++ >= count) throw LoadError(fmt::format("{}: missing tensor {}", path.string(), p.name));
    std::string name(get_u32(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const int rows = static_cast<int>(get_u32(in, path));
    const int cols = static_cast<int>(get_u32(in, path));
    if (name != p.name || rows != p.rows || cols != p.cols) {
      throw LoadError(fmt::format("{}: expected tensor {} [{}x{}], found {} [{}x{}]", path.string(),
                                  p.name, p.rows, p.cols, name, rows, cols));
    }
    if (!in.read(reinterpret_cast<char*>(p.data.data()), static_cast<std::streamsize>(p.data.size_bytes()))) {
      throw LoadError(fmt::format("{}: truncated tensor {}", path.string(), p.name));
    }
  });
  if (seen != count) throw LoadError(fmt::format("{}: unexpected extra tensors", path.string()));
  return w;
}

nlohmann::json architecture_description() {
  return {
      {"norm", "pre-norm RMSNorm with learned gain, eps 1e-6"},
      {"final_norm", "parameter-free RMS scaling of the final residual"},
      {"attention", "multi-head scaled dot-product, no biases, causal in the decoder"},
      {"cross_attention", "decoder layers attend to the RMS-normalised final encoder output"},
      {"mlp", "GELU (tanh approximation) with biases"},
      {"positions", "learned absolute embeddings, separate tables for encoder and decoder"},
      {"output_head", "tied: logits = E * rms_scaled(h^L)"},
      {"precision", "float64"},
  };
}

void save_model(const std::filesystem::path& dir, const Model& model, const Vocabulary& vocab,
                const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  save_weights(dir / "weights.bin", model.weights());
  vocab.save(dir / "vocab.txt");
  nlohmann::json card = {{"format", "recall-lab-model-card"},
                         {"version", 1},
                         {"config", model.config()},
                         {"weights", "weights.bin"},
                         {"vocab", "vocab.txt"},
                         {"architecture", architecture_description()}};
  if (!extra.is_null()) card["training"] = extra;
  std::ofstream out(dir / "card.json", std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", (dir / "card.json").string()));
  out << card.dump(2) << '\n';
}

LoadedModel load_model(const std::filesystem::path& card_path) {
  std::ifstream in(card_path);
  if (!in) throw LoadError(fmt::format("cannot open model card {}", card_path.string()));
  nlohmann::json card;
  try {
    card = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(fmt::format("{}: {}", card_path.string(), e.what()));
  }
  if (card.value("format", "") != "recall-lab-model-card") {
    throw LoadError(fmt::format("{}: not a model card", card_path.string()));
  }
  const auto dir = card_path.parent_path();
  ModelConfig config = card.at("config").get<ModelConfig>();
  Vocabulary vocab = Vocabulary::load(dir / card.at("vocab").get<std::string>());
  if (vocab.size() != config.vocab_size) {
    throw LoadError(fmt::format("{}: vocabulary has {} tokens, config says {}", card_path.string(),
                                vocab.size(), config.vocab_size));
  }
  Weights w = load_weights(dir / card.at("weights").get<std::string>(), config);
  return {std::make_shared<const Model>(std::move(config), std::move(w)), std::move(vocab)};
}

}  // namespace rlab::runtime
