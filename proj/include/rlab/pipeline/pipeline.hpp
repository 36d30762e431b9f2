#pragma once

// Config-driven runs. A pipeline config is JSON:
//
// {
//   "seed": 0,
//   "backend": "native",                       // or "remote:host:port"
//   "corpus": {"path": "dir"} | {"synthetic": {"n_relations": 4, "n_subjects": 16,
//              "languages": 2, "collision_fraction": 0.25, "paraphrases": 2}},
//   "model": {"card": "card.json"} | {"train": {"arch": "decoder_only", "n_layers": 4,
//              "n_layers_enc": 0, "d_model": 64, "n_heads": 4, "d_ff": 256, "steps": 3000,
//              "lr": 0.003, "batch_size": 32, "target_loss": 0.01}},
//   "harvest": {"languages": ["xa", "yb"], "max_prefix": 5, "max_new_tokens": 50},
//   "experiments": {
//     "trace": {"samples": 10, "noise_mult": 3.0, "window": 0, "max_examples": 0},
//     "knockout": {"partitions": ["subject", "non_subject", "last"], "window": 0,
//                  "mode": "mask_logits"},
//     "extract": {},
//     "patch": [{"condition": 1, "patch_lang": "xa", "context_lang": "yb", "max_pairs": 0}]
//   },
//   "plots": true
// }
//
// Every stage appends a manifest to <out>/manifests.jsonl. A stage whose
// complete manifest (same kind, same config snapshot) is already present and
// whose outputs exist is skipped, so an interrupted run resumes.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlab/corpus/corpus.hpp"
#include "rlab/engine/backend.hpp"
#include "rlab/harvest/example.hpp"
#include "rlab/knockout/knockout.hpp"
#include "rlab/patching/patching.hpp"
#include "rlab/report/manifest.hpp"
#include "rlab/tracing/causal_trace.hpp"

namespace rlab::pipeline {

namespace fs = std::filesystem;

// Each writer returns the files it produced, relative to `root`.
std::vector<std::string> write_trace(const engine::Backend& backend,
                                     const std::vector<harvest::MemorizedExample>& examples,
                                     const tracing::TraceConfig& config, const fs::path& root,
                                     const fs::path& dir);

std::vector<std::string> write_knockout(const engine::Backend& backend,
                                        const std::vector<harvest::MemorizedExample>& examples,
                                        const std::vector<knockout::Partition>& partitions, int window,
                                        runtime::KnockoutMode mode, const fs::path& root, const fs::path& dir);

std::vector<std::string> write_extraction(const engine::Backend& backend,
                                          const std::vector<harvest::MemorizedExample>& examples,
                                          const fs::path& root, const fs::path& dir);

std::vector<std::string> write_patch(const engine::Backend& backend,
                                     const std::map<std::string, std::vector<harvest::MemorizedExample>>& harvests,
                                     const corpus::Corpus& corpus, const runtime::Vocabulary& vocab,
                                     const patching::PairOptions& options, const fs::path& root, const fs::path& dir,
                                     patching::ConditionReport* report_out = nullptr);

// SVG plots for every known CSV under `root`, written to <root>/plots.
std::vector<std::string> write_plots(const fs::path& root);

std::unique_ptr<engine::Backend> make_backend(const std::string& spec, runtime::ModelPtr native_model);

nlohmann::json load_config(const fs::path& path);

struct PipelineResult {
  std::vector<report::ExperimentManifest> manifests;  // appended by this run
  std::vector<std::string> skipped;                   // stage names reused from earlier runs
};

PipelineResult run_pipeline(const nlohmann::json& config, const fs::path& out_dir);

}  // namespace rlab::pipeline
