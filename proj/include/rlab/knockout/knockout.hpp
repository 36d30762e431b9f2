#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/engine/engine.hpp"
#include "rlab/harvest/example.hpp"
#include "rlab/report/csv.hpp"

namespace rlab::knockout {

enum class Partition { subject, non_subject, last, enc_sentinel };

std::string_view to_string(Partition p);
Partition parse_partition(std::string_view text);  // accepts '-' or '_'

// Key tokens of a partition and the attention they are blocked in.
// Decoder-only: self-attention of the decoder. Encoder-decoder: cross-attention
// for subject / non_subject / enc_sentinel (encoder positions), decoder
// self-attention for last. Query is always the last decoder token.
struct PartitionTokens {
  runtime::AttentionKind attention = runtime::AttentionKind::self;
  int query = 0;
  std::vector<int> keys;
};

PartitionTokens partition_tokens(const harvest::MemorizedExample& example, Partition partition);

// One (example, center layer) measurement.
struct KnockoutSample {
  std::string example_id;
  int center_layer = 0;
  double p_orig = 0.0;
  double p_knock = 0.0;
  bool included = false;  // false when skipped (empty partition, blocked row, tiny p_orig)
};

struct KnockoutCurve {
  Partition partition = Partition::subject;
  int window = 0;
  std::vector<double> mean_rel_diff;  // per center layer
  std::vector<std::size_t> n;         // examples averaged per center layer
  std::vector<KnockoutSample> samples;
  std::vector<std::string> diagnostics;
};

inline constexpr double kMinOriginalProbability = 1e-6;

// window 0 selects the default for the architecture and depth.
KnockoutCurve knockout_curve(const engine::Backend& backend, const std::vector<harvest::MemorizedExample>& examples,
                             Partition partition, int window = 0,
                             runtime::KnockoutMode mode = runtime::KnockoutMode::mask_logits);

// Mean relative difference per center layer recomputed from samples.
std::vector<double> aggregate_samples(const std::vector<KnockoutSample>& samples, int n_layers);

// Columns: partition, center_layer, mean_rel_diff, n.
report::CsvTable curve_table(const std::vector<KnockoutCurve>& curves);
// Columns: partition, example_id, center_layer, p_orig, p_knock, included.
report::CsvTable samples_table(const std::vector<KnockoutCurve>& curves);

}  // namespace rlab::knockout
