#pragma once

#include <filesystem>

#include "rlab/runtime/model.hpp"
#include "rlab/runtime/tokenizer.hpp"

namespace rlab::runtime {

// Binary weight checkpoint, little-endian:
//   magic "RLWT", u32 version (1), u32 tensor count, then per tensor
//   u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64 row-major.
// Tensor order and names follow for_each_param.
void save_weights(const std::filesystem::path& path, const Weights& weights);
Weights load_weights(const std::filesystem::path& path, const ModelConfig& config);

// A model card is JSON: {"format": "recall-lab-model-card", "version": 1,
// "config": ModelConfig, "weights": <relative path>, "vocab": <relative path>,
// "architecture": {...}}.
struct LoadedModel {
  ModelPtr model;
  Vocabulary vocab;
};

void save_model(const std::filesystem::path& dir, const Model& model, const Vocabulary& vocab,
                const nlohmann::json& extra = {});
LoadedModel load_model(const std::filesystem::path& card_path);

// Description of the fixed architecture choices, written into every model card.
nlohmann::json architecture_description();

}  // namespace rlab::runtime
