#include "rlab/knockout/knockout.hpp"

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/engine/window.hpp"
#include "rlab/report/aggregate.hpp"

namespace rlab::knockout {

using harvest::MemorizedExample;
using runtime::AttentionKind;

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::subject: return "subject";
    case Partition::non_subject: return "non_subject";
    case Partition::last: return "last";
    case Partition::enc_sentinel: return "enc_sentinel";
  }
  return "subject";
}

Partition parse_partition(std::string_view text) {
  std::string t(text);
  for (char& c : t) c = c == '-' ? '_' : c;
  for (Partition p : {Partition::subject, Partition::non_subject, Partition::last, Partition::enc_sentinel}) {
    if (t == to_string(p)) return p;
  }
  throw ConfigError(fmt::format("unknown partition '{}'", text));
}

PartitionTokens partition_tokens(const MemorizedExample& ex, Partition partition) {
  PartitionTokens out;
  const int t_dec = static_cast<int>(ex.input_ids.size());
  out.query = t_dec - 1;
  const auto in_subject = [&](int i) { return i >= ex.subject_first && i <= ex.subject_last; };
  if (partition == Partition::last) {
    out.keys = {t_dec - 1};
    return out;
  }
  if (!ex.encoder_decoder()) {
    if (partition == Partition::subject) {
      for (int i = ex.subject_first; i <= ex.subject_last; ++i) out.keys.push_back(i);
    } else if (partition == Partition::non_subject) {
      for (int i = 0; i < t_dec - 1; ++i) {
        if (!in_subject(i)) out.keys.push_back(i);
      }
    }
    return out;  // enc_sentinel is empty for decoder-only models
  }
  out.attention = AttentionKind::cross;
  const int t_enc = static_cast<int>(ex.enc_ids.size());
  for (int i = 0; i < t_enc; ++i) {
    const bool sentinel = ex.enc_ids[static_cast<std::size_t>(i)] == ex.sentinel;
    const bool take = (partition == Partition::subject && in_subject(i)) ||
                      (partition == Partition::non_subject && !in_subject(i) && !sentinel) ||
                      (partition == Partition::enc_sentinel && sentinel);
    if (take) out.keys.push_back(i);
  }
  return out;
}

KnockoutCurve knockout_curve(const engine::Backend& backend, const std::vector<MemorizedExample>& examples,
                             Partition partition, int window, runtime::KnockoutMode mode) {
  const auto& model = backend.capabilities().model;
  const int n_layers = model.n_layers_dec;
  if (window <= 0) window = engine::default_knockout_window(model.arch, n_layers);
  engine::RunStore store;
  const engine::Engine engine(backend, store, mode);

  KnockoutCurve curve;
  curve.partition = partition;
  curve.window = window;
  for (const auto& ex : examples) {
    const auto tokens = partition_tokens(ex, partition);
    const auto base = backend.execute(ex.inputs(), {});
    const auto target = static_cast<std::size_t>(base.predicted_token);
    const double p_orig = base.distribution.at(target);
    if (tokens.keys.empty()) {
      curve.diagnostics.push_back(fmt::format("{}: empty {} partition", ex.id(), to_string(partition)));
    } else if (p_orig < kMinOriginalProbability) {
      curve.diagnostics.push_back(fmt::format("{}: original probability {} below guard", ex.id(), p_orig));
    }
    for (int center = 0; center < n_layers; ++center) {
      KnockoutSample s{ex.id(), center, p_orig, p_orig, false};
      if (!tokens.keys.empty() && p_orig >= kMinOriginalProbability) {
        runtime::AttentionBlock block;
        block.stream = runtime::Stream::dec;
        block.attention = tokens.attention;
        block.layers = engine::resolve_window(center, window, n_layers).layers;
        block.query_token = tokens.query;
        block.key_tokens = tokens.keys;
        try {
          s.p_knock = engine.run_with_plan(ex.inputs(), {engine::Intervention::block(block)}).distribution.at(target);
          s.included = true;
        } catch (const PlanError& e) {
          curve.diagnostics.push_back(fmt::format("{} layer {}: {}", ex.id(), center, e.what()));
        }
      }
      curve.samples.push_back(std::move(s));
    }
  }
  curve.mean_rel_diff = aggregate_samples(curve.samples, n_layers);
  curve.n.assign(static_cast<std::size_t>(n_layers), 0);
  for (const auto& s : curve.samples) {
    if (s.included) ++curve.n[static_cast<std::size_t>(s.center_layer)];
  }
  return curve;
}

std::vector<double> aggregate_samples(const std::vector<KnockoutSample>& samples, int n_layers) {
  std::vector<report::MeanFold> folds(static_cast<std::size_t>(n_layers));
  for (const auto& s : samples) {
    if (!s.included) continue;
    folds.at(static_cast<std::size_t>(s.center_layer)).add(report::relative_difference(s.p_knock, s.p_orig));
  }
  std::vector<double> out;
  for (const auto& f : folds) out.push_back(f.mean());
  return out;
}

report::CsvTable curve_table(const std::vector<KnockoutCurve>& curves) {
  report::CsvTable t;
  t.columns = {"partition", "center_layer", "mean_rel_diff", "n"};
  for (const auto& c : curves) {
    for (std::size_t l = 0; l < c.mean_rel_diff.size(); ++l) {
      t.rows.push_back({std::string(to_string(c.partition)), std::to_string(l),
                        report::format_number(c.mean_rel_diff[l]), std::to_string(c.n[l])});
    }
  }
  return t;
}

report::CsvTable samples_table(const std::vector<KnockoutCurve>& curves) {
  report::CsvTable t;
  t.columns = {"partition", "example_id", "center_layer", "p_orig", "p_knock", "included"};
  for (const auto& c : curves) {
    for (const auto& s : c.samples) {
      t.rows.push_back({std::string(to_string(c.partition)), s.example_id, std::to_string(s.center_layer),
                        report::format_number(s.p_orig), report::format_number(s.p_knock),
                        s.included ? "1" : "0"});
    }
  }
  return t;
}

}  // namespace rlab::knockout
