#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rlab/engine/engine.hpp"
#include "rlab/harvest/example.hpp"
#include "rlab/report/csv.hpp"

namespace rlab::tracing {

using runtime::SiteKind;
using runtime::Stream;

struct TraceConfig {
  double noise_multiplier = 3.0;
  std::optional<double> sigma;  // computed from the examples when unset
  int n_samples = 10;
  int window_sublayer = 0;      // 0: default for the architecture and depth
  // Unset: state_h, mlp_f, self_attn_s (+ cross_attn_c for encoder-decoder).
  std::optional<std::vector<SiteKind>> kinds;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

std::vector<SiteKind> default_kinds(runtime::Arch arch);

// Population standard deviation over every component of every vector.
// Throws ConfigError on an empty set.
double sigma_of(const std::vector<std::vector<double>>& vectors);

// Sigma over the token embeddings of all subject tokens of all examples,
// read through embed-site captures.
double compute_sigma(const engine::Backend& backend, const std::vector<harvest::MemorizedExample>& examples);

// Stream holding the subject (encoder for encoder-decoder models).
Stream subject_stream(const harvest::MemorizedExample& example);

// Gaussian noise for one (example, repetition), keyed by the global seed.
std::vector<double> noise_sample(std::uint64_t seed, const std::string& example_id, int repetition,
                                 std::size_t count, double stddev);

struct Corruption {
  engine::Plan plan;  // replace actions on the subject embed sites
  double p = 0.0;     // probability of the traced token under corruption
};

// Adds N(0, (multiplier * sigma)^2) noise to every component of every
// subject-token embedding. `clean_embeds` holds the clean embed rows in span
// order (one per subject token).
Corruption corrupt_run(const engine::Engine& engine, const harvest::MemorizedExample& example,
                       const std::vector<std::vector<double>>& clean_embeds, runtime::TokenId traced_token,
                       double sigma, double multiplier, std::uint64_t seed, int repetition);

// Probability of `traced_token` with `corruption` applied and `restore`
// sites restored from `clean_run`.
double restored_probability(const engine::Engine& engine, const harvest::MemorizedExample& example,
                            const Corruption& corruption, const std::vector<engine::HookSite>& restore,
                            const engine::RunId& clean_run, runtime::TokenId traced_token);

struct TraceSite {
  Stream stream = Stream::dec;
  int token = 0;
  int layer = 0;
  SiteKind kind = SiteKind::state_h;
};

// Sites restored for one grid cell: the site itself for state_h, the
// resolved layer window at the same token for sublayer kinds.
std::vector<engine::HookSite> restore_sites(const runtime::ModelConfig& model, const TraceSite& site, int window);

struct TraceCell {
  TraceSite site;
  std::string role;
  double ie_mean = 0.0;
  std::vector<double> ie_samples;
};

struct TraceGrid {
  std::string example_id;
  runtime::TokenId traced_token = -1;
  double p_clean = 0.0;
  double p_corrupt = 0.0;  // mean over samples
  std::vector<double> p_corrupt_samples;
  std::vector<TraceCell> cells;
  bool partial = false;
  std::string error;
};

// Cells in order: kind, token, layer. state_h covers layers 0..L, the
// sublayer kinds 0..L-1.
std::vector<TraceSite> grid_sites(const runtime::ModelConfig& model, const harvest::MemorizedExample& example,
                                  const std::vector<SiteKind>& kinds);

std::string token_role(const harvest::MemorizedExample& example, Stream stream, int token);

// Mean IE over samples for one site.
double traced_ie(const engine::Engine& engine, const harvest::MemorizedExample& example, const TraceSite& site,
                 const TraceConfig& config, double sigma);

TraceGrid trace_example(const engine::Engine& engine, const harvest::MemorizedExample& example,
                        const TraceConfig& config, double sigma);

std::vector<TraceGrid> trace_grid(const engine::Backend& backend,
                                  const std::vector<harvest::MemorizedExample>& examples, const TraceConfig& config);

struct MeanCell {
  std::string role;
  int layer = 0;
  SiteKind kind = SiteKind::state_h;
  double ie_mean = 0.0;
  std::size_t n = 0;
};

// Dataset mean over complete grids, grouped by (kind, role, layer).
std::vector<MeanCell> mean_grid(const std::vector<TraceGrid>& grids);

// Columns: example_id, token_idx, token_role, layer, kind, ie_mean, p_clean, p_corrupt.
report::CsvTable grid_table(const std::vector<TraceGrid>& grids);
// Columns: token_role, layer, kind, ie_mean, n.
report::CsvTable mean_table(const std::vector<MeanCell>& cells);

}  // namespace rlab::tracing
