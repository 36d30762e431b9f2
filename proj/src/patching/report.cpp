#include <algorithm>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/patching/patching.hpp"
#include "rlab/report/aggregate.hpp"

namespace rlab::patching {

using nlohmann::json;

std::string ProportionRow::formatted() const {
  if (enabled == 0) return fmt::format("- ({})", count);
  return fmt::format("{:.1f}% ({})", 100.0 * proportion(), count);
}

ConditionReport condition_report(const std::vector<PatchOutcome>& outcomes) {
  ConditionReport r;
  r.n_pairs = outcomes.size();
  for (const auto& o : outcomes) r.n_layers = std::max(r.n_layers, static_cast<int>(o.layers.size()));
  const auto n = static_cast<std::size_t>(r.n_layers);
  std::vector<report::MeanFold> lc(n), lp(n);
  r.histogram.assign(n, {});
  std::array<ProportionRow, kChannelCount> props{};
  for (std::size_t i = 0; i < kChannelCount; ++i) props[i].label = label_from_index(i);

  for (const auto& o : outcomes) {
    std::array<bool, kChannelCount> seen{};
    for (const auto& l : o.layers) {
      if (l.missing) continue;
      const auto li = static_cast<std::size_t>(l.layer);
      if (l.rel_lc_oc) lc[li].add(*l.rel_lc_oc);
      if (l.rel_lp_op) lp[li].add(*l.rel_lp_op);
      ++r.histogram[li][static_cast<std::size_t>(l.label)];
      if (l.label != Label::other) seen[static_cast<std::size_t>(l.label)] = true;
    }
    for (std::size_t i = 0; i < kChannelCount; ++i) {
      if (!o.enabled[i]) continue;
      ++props[i].enabled;
      if (seen[i]) ++props[i].count;
    }
  }
  for (std::size_t l = 0; l < n; ++l) {
    r.mean_rel_lc_oc.push_back(lc[l].mean());
    r.mean_rel_lp_op.push_back(lp[l].mean());
    r.n_rel_lc_oc.push_back(lc[l].n);
    r.n_rel_lp_op.push_back(lp[l].n);
  }
  r.proportions.assign(props.begin(), props.end());
  return r;
}

std::optional<Label> modal_label(const ConditionReport& report, int layer) {
  const auto& h = report.histogram.at(static_cast<std::size_t>(layer));
  const auto best = std::max_element(h.begin(), h.end());
  if (*best == 0 || std::count(h.begin(), h.end(), *best) > 1) return std::nullopt;
  return label_from_index(static_cast<std::size_t>(best - h.begin()));
}

bool cross_before_patch_object(const ConditionReport& report) {
  int first_op = report.n_layers;
  for (int l = 0; l < report.n_layers; ++l) {
    if (modal_label(report, l) == Label::Lp_op) {
      first_op = l;
      break;
    }
  }
  for (int l = 0; l < first_op; ++l) {
    if (modal_label(report, l) == Label::cross_rp_sc) return true;
  }
  return false;
}

json outcome_layer_json(const PatchOutcome& o, const LayerOutcome& l) {
  json enabled = json::array();
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    if (o.enabled[i]) enabled.push_back(to_string(label_from_index(i)));
  }
  json j = {{"pair", o.pair_id},
            {"condition", condition_number(o.condition)},
            {"patch_lang", o.patch_lang},
            {"context_lang", o.context_lang},
            {"layer", l.layer},
            {"base_lc_oc", o.base_lc_oc},
            {"base_lp_op", o.base_lp_op},
            {"context_prediction", o.context_prediction},
            {"patch_prediction", o.patch_prediction},
            {"enabled", enabled}};
  if (l.missing) {
    j["missing"] = true;
    j["error"] = l.error;
    return j;
  }
  j["predicted"] = l.predicted;
  j["label"] = to_string(l.label);
  j["p_lc_oc"] = l.p_lc_oc;
  j["p_lp_op"] = l.p_lp_op;
  j["rel_lc_oc"] = l.rel_lc_oc ? json(*l.rel_lc_oc) : json(nullptr);
  j["rel_lp_op"] = l.rel_lp_op ? json(*l.rel_lp_op) : json(nullptr);
  return j;
}

std::vector<std::string> raw_dump_lines(const std::vector<PatchOutcome>& outcomes) {
  std::vector<std::string> lines;
  for (const auto& o : outcomes) {
    for (const auto& l : o.layers) lines.push_back(outcome_layer_json(o, l).dump());
  }
  return lines;
}

std::vector<PatchOutcome> outcomes_from_dump(const std::vector<std::string>& lines) {
  std::vector<PatchOutcome> out;
  const auto label_of = [](const std::string& name) {
    for (std::size_t i = 0; i <= kChannelCount; ++i) {
      if (to_string(label_from_index(i)) == name) return label_from_index(i);
    }
    throw SchemaError(fmt::format("unknown label '{}'", name));
  };
  for (const auto& line : lines) {
    const json j = json::parse(line);
    const auto pair = j.at("pair").get<std::string>();
    if (out.empty() || out.back().pair_id != pair) {
      PatchOutcome o;
      o.pair_id = pair;
      o.condition = condition_from_number(j.at("condition").get<int>());
      o.patch_lang = j.at("patch_lang").get<std::string>();
      o.context_lang = j.at("context_lang").get<std::string>();
      o.base_lc_oc = j.at("base_lc_oc").get<double>();
      o.base_lp_op = j.at("base_lp_op").get<double>();
      o.context_prediction = j.at("context_prediction").get<TokenId>();
      o.patch_prediction = j.at("patch_prediction").get<TokenId>();
      for (const auto& name : j.at("enabled")) o.enabled[static_cast<std::size_t>(label_of(name.get<std::string>()))] = true;
      out.push_back(std::move(o));
    }
    LayerOutcome l;
    l.layer = j.at("layer").get<int>();
    if (j.value("missing", false)) {
      l.missing = true;
      l.error = j.value("error", "");
    } else {
      l.predicted = j.at("predicted").get<TokenId>();
      l.label = label_of(j.at("label").get<std::string>());
      l.p_lc_oc = j.at("p_lc_oc").get<double>();
      l.p_lp_op = j.at("p_lp_op").get<double>();
      if (!j.at("rel_lc_oc").is_null()) l.rel_lc_oc = j.at("rel_lc_oc").get<double>();
      if (!j.at("rel_lp_op").is_null()) l.rel_lp_op = j.at("rel_lp_op").get<double>();
    }
    out.back().layers.push_back(std::move(l));
  }
  return out;
}

report::CsvTable curves_table(const ConditionReport& r) {
  report::CsvTable t;
  t.columns = {"layer", "series", "mean_rel_diff", "n"};
  for (int l = 0; l < r.n_layers; ++l) {
    const auto i = static_cast<std::size_t>(l);
    t.rows.push_back({std::to_string(l), "Lc(oc)", report::format_number(r.mean_rel_lc_oc[i]),
                      std::to_string(r.n_rel_lc_oc[i])});
    t.rows.push_back({std::to_string(l), "Lp(op)", report::format_number(r.mean_rel_lp_op[i]),
                      std::to_string(r.n_rel_lp_op[i])});
  }
  return t;
}

report::CsvTable histogram_table(const ConditionReport& r) {
  report::CsvTable t;
  t.columns = {"layer", "label", "count"};
  for (int l = 0; l < r.n_layers; ++l) {
    for (std::size_t k = 0; k <= kChannelCount; ++k) {
      t.rows.push_back({std::to_string(l), std::string(to_string(label_from_index(k))),
                        std::to_string(r.histogram[static_cast<std::size_t>(l)][k])});
    }
  }
  return t;
}

report::CsvTable proportions_table(const ConditionReport& r) {
  report::CsvTable t;
  t.columns = {"label", "count", "enabled", "proportion", "formatted"};
  for (const auto& p : r.proportions) {
    t.rows.push_back({std::string(to_string(p.label)), std::to_string(p.count), std::to_string(p.enabled),
                      report::format_number(p.proportion()), p.formatted()});
  }
  return t;
}

}  // namespace rlab::patching
