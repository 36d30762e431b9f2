#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rlab/corpus/corpus.hpp"
#include "rlab/engine/backend.hpp"
#include "rlab/harvest/example.hpp"
#include "rlab/report/csv.hpp"
#include "rlab/runtime/tokenizer.hpp"

namespace rlab::patching {

using runtime::TokenId;

// 1: same language, different relation, different subject.
// 2: different language, same relation, different subject.
// 3: different language, different relation, same subject.
enum class Condition { same_lang_diff_rel_diff_subj = 1, diff_lang_same_rel_diff_subj = 2, diff_lang_diff_rel_same_subj = 3 };

Condition condition_from_number(int n);
int condition_number(Condition c);

// Prediction classes. Lp/Lc: patch/context language; op/oc: patch/context
// object; cross_rp_sc is the object of (s_c, r_p), cross_rc_sp of (s_p, r_c).
enum class Label { Lc_oc, Lp_op, Lp_oc, Lc_op, cross_rp_sc, cross_rc_sp, other };
inline constexpr std::size_t kChannelCount = 6;  // every label but other

std::string_view to_string(Label label);
Label label_from_index(std::size_t i);

struct Channel {
  std::set<TokenId> tokens;  // distinct first tokens of the target's aliases
  bool enabled = false;
};

struct PatchPair {
  Condition condition = Condition::same_lang_diff_rel_diff_subj;
  harvest::MemorizedExample patch;
  harvest::MemorizedExample context;
  std::array<Channel, kChannelCount> channels;

  std::string id() const { return patch.id() + "=>" + context.id(); }
  const Channel& channel(Label l) const { return channels.at(static_cast<std::size_t>(l)); }
};

// First tokens of every alias of `object_id` in `lang` (aliases containing
// unknown words are ignored).
std::set<TokenId> first_tokens(const corpus::Corpus& corpus, const runtime::Vocabulary& vocab,
                               const std::string& lang, const std::string& object_id);

struct PairOptions {
  Condition condition = Condition::diff_lang_same_rel_diff_subj;
  std::string patch_lang = "en";
  std::string context_lang;  // ignored for condition 1
  std::size_t max_pairs = 0;  // 0 = all; otherwise a seeded subsample
  std::uint64_t seed = 0;
};

// Pairs in (patch, context) harvest order. Pairs lacking the context object's
// alias in the patch language or the patch object's alias in the context
// language (conditions 2 and 3) are dropped.
std::vector<PatchPair> build_pairs(const std::map<std::string, std::vector<harvest::MemorizedExample>>& harvests,
                                   const corpus::Corpus& corpus, const runtime::Vocabulary& vocab,
                                   const PairOptions& options);

// Unique enabled channel containing the token, otherwise other.
Label classify_prediction(TokenId token, const PatchPair& pair);

// Last-token states of an example at layers 0..L plus its plain output.
struct CachedRun {
  std::vector<std::vector<double>> states;
  std::vector<double> distribution;
  TokenId predicted = -1;
};

class CaptureCache {
 public:
  const CachedRun& get(const engine::Backend& backend, const harvest::MemorizedExample& example);
  void populate(const engine::Backend& backend, const std::vector<PatchPair>& pairs);

 private:
  std::map<std::string, CachedRun> runs_;
};

CachedRun capture_last_states(const engine::Backend& backend, const harvest::MemorizedExample& example);

// Sum of probabilities of the set's tokens.
double set_probability(std::span<const double> distribution, const std::set<TokenId>& tokens);

struct LayerOutcome {
  int layer = 0;
  bool missing = false;
  std::string error;
  TokenId predicted = -1;
  Label label = Label::other;
  double p_lc_oc = 0.0;
  double p_lp_op = 0.0;
  std::optional<double> rel_lc_oc;  // unset when the baseline probability is 0
  std::optional<double> rel_lp_op;
};

struct PatchOutcome {
  std::string pair_id;
  Condition condition = Condition::same_lang_diff_rel_diff_subj;
  std::string patch_lang;
  std::string context_lang;
  double base_lc_oc = 0.0;  // unpatched context run
  double base_lp_op = 0.0;  // patch run
  TokenId context_prediction = -1;
  TokenId patch_prediction = -1;
  std::array<bool, kChannelCount> enabled{};
  std::vector<LayerOutcome> layers;
};

PatchOutcome patch_sweep(const engine::Backend& backend, const PatchPair& pair, CaptureCache* cache = nullptr);

std::vector<PatchOutcome> sweep_all(const engine::Backend& backend, const std::vector<PatchPair>& pairs);

struct ProportionRow {
  Label label = Label::other;
  std::size_t count = 0;    // pairs predicting the label at some layer
  std::size_t enabled = 0;  // pairs with the channel enabled
  double proportion() const { return enabled == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(enabled); }
  std::string formatted() const;  // "38.6% (54)"; "- (0)" without enabled pairs
};

struct ConditionReport {
  std::size_t n_pairs = 0;
  int n_layers = 0;  // patch layers 0..L, i.e. L + 1 entries
  std::vector<double> mean_rel_lc_oc;
  std::vector<double> mean_rel_lp_op;
  std::vector<std::size_t> n_rel_lc_oc;
  std::vector<std::size_t> n_rel_lp_op;
  // histogram[layer][label]
  std::vector<std::array<std::size_t, kChannelCount + 1>> histogram;
  std::vector<ProportionRow> proportions;  // every label but other
};

ConditionReport condition_report(const std::vector<PatchOutcome>& outcomes);

// Most frequent label at a layer; unset on ties or an empty layer.
std::optional<Label> modal_label(const ConditionReport& report, int layer);

// Condition-1 ordering: some layer has cross_rp_sc modal strictly before the
// first layer where Lp_op is modal.
bool cross_before_patch_object(const ConditionReport& report);

nlohmann::json outcome_layer_json(const PatchOutcome& outcome, const LayerOutcome& layer);
std::vector<std::string> raw_dump_lines(const std::vector<PatchOutcome>& outcomes);
// Rebuilds outcomes (layers, baselines, enabled flags) from raw dump lines.
std::vector<PatchOutcome> outcomes_from_dump(const std::vector<std::string>& lines);

// Columns: layer, series, mean_rel_diff, n.
report::CsvTable curves_table(const ConditionReport& report);
// Columns: layer, label, count.
report::CsvTable histogram_table(const ConditionReport& report);
// Columns: label, count, enabled, proportion, formatted.
report::CsvTable proportions_table(const ConditionReport& report);

}  // namespace rlab::patching
