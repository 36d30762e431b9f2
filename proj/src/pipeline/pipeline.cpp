#include "rlab/pipeline/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/corpus/synthetic.hpp"
#include "rlab/engine/remote.hpp"
#include "rlab/harvest/harvest.hpp"
#include "rlab/harvest/toy_training.hpp"
#include "rlab/knockout/extraction.hpp"
#include "rlab/report/csv.hpp"
#include "rlab/report/svg_plot.hpp"
#include "rlab/runtime/checkpoint.hpp"
#include "rlab/engine/wire.hpp"

namespace rlab::pipeline {
namespace {

using nlohmann::json;

std::string rel(const fs::path& root, const fs::path& p) { return fs::relative(p, root).generic_string(); }

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + '\n';
  report::write_text(path, text);
}

json trace_samples_json(const tracing::TraceGrid& g) {
  json cells = json::array();
  for (const auto& c : g.cells) {
    cells.push_back({{"stream", std::string(runtime::to_string(c.site.stream))},
                     {"token", c.site.token},
                     {"layer", c.site.layer},
                     {"kind", std::string(runtime::to_string(c.site.kind))},
                     {"role", c.role},
                     {"ie_samples", c.ie_samples}});
  }
  json j = {{"example_id", g.example_id},   {"traced_token", g.traced_token},
            {"p_clean", g.p_clean},         {"p_corrupt_samples", g.p_corrupt_samples},
            {"cells", cells}};
  if (g.partial) j["error"] = g.error;
  return j;
}

}  // namespace

std::vector<std::string> write_trace(const engine::Backend& backend,
                                     const std::vector<harvest::MemorizedExample>& examples,
                                     const tracing::TraceConfig& config, const fs::path& root, const fs::path& dir) {
  tracing::TraceConfig c = config;
  if (!c.sigma) c.sigma = tracing::compute_sigma(backend, examples);
  const auto grids = tracing::trace_grid(backend, examples, c);
  fs::create_directories(dir);
  report::write_csv(dir / "grid.csv", tracing::grid_table(grids));
  report::write_csv(dir / "mean.csv", tracing::mean_table(tracing::mean_grid(grids)));
  std::vector<std::string> lines;
  for (const auto& g : grids) lines.push_back(trace_samples_json(g).dump());
  write_lines(dir / "samples.jsonl", lines);
  report::write_text(dir / "sigma.json", json({{"sigma", *c.sigma}, {"noise_mult", c.noise_multiplier},
                                               {"samples", c.n_samples}}).dump(2) + "\n");
  return {rel(root, dir / "grid.csv"), rel(root, dir / "mean.csv"), rel(root, dir / "samples.jsonl"),
          rel(root, dir / "sigma.json")};
}

std::vector<std::string> write_knockout(const engine::Backend& backend,
                                        const std::vector<harvest::MemorizedExample>& examples,
                                        const std::vector<knockout::Partition>& partitions, int window,
                                        runtime::KnockoutMode mode, const fs::path& root, const fs::path& dir) {
  std::vector<knockout::KnockoutCurve> curves;
  for (auto p : partitions) curves.push_back(knockout::knockout_curve(backend, examples, p, window, mode));
  fs::create_directories(dir);
  report::write_csv(dir / "curves.csv", knockout::curve_table(curves));
  report::write_csv(dir / "samples.csv", knockout::samples_table(curves));
  return {rel(root, dir / "curves.csv"), rel(root, dir / "samples.csv")};
}

std::vector<std::string> write_extraction(const engine::Backend& backend,
                                          const std::vector<harvest::MemorizedExample>& examples,
                                          const fs::path& root, const fs::path& dir) {
  const auto profile = knockout::extraction_profile(backend, examples);
  fs::create_directories(dir);
  report::write_csv(dir / "profile.csv", knockout::profile_table(profile));
  std::vector<std::string> lines;
  for (const auto& e : profile.events) {
    lines.push_back(json({{"example_id", e.example_id},
                          {"target", e.target},
                          {"self_attn_s", e.self_attn},
                          {"cross_attn_c", e.cross_attn},
                          {"mlp_f", e.mlp},
                          {"state_h", e.state}})
                        .dump());
  }
  write_lines(dir / "events.jsonl", lines);
  return {rel(root, dir / "profile.csv"), rel(root, dir / "events.jsonl")};
}

std::vector<std::string> write_patch(const engine::Backend& backend,
                                     const std::map<std::string, std::vector<harvest::MemorizedExample>>& harvests,
                                     const corpus::Corpus& corpus, const runtime::Vocabulary& vocab,
                                     const patching::PairOptions& options, const fs::path& root, const fs::path& dir,
                                     patching::ConditionReport* report_out) {
  const auto pairs = patching::build_pairs(harvests, corpus, vocab, options);
  const auto outcomes = patching::sweep_all(backend, pairs);
  const auto rep = patching::condition_report(outcomes);
  fs::create_directories(dir);
  write_lines(dir / "raw.jsonl", patching::raw_dump_lines(outcomes));
  report::write_csv(dir / "curves.csv", patching::curves_table(rep));
  report::write_csv(dir / "histogram.csv", patching::histogram_table(rep));
  report::write_csv(dir / "proportions.csv", patching::proportions_table(rep));
  if (report_out) *report_out = rep;
  return {rel(root, dir / "raw.jsonl"), rel(root, dir / "curves.csv"), rel(root, dir / "histogram.csv"),
          rel(root, dir / "proportions.csv")};
}

std::vector<std::string> write_plots(const fs::path& root) {
  struct Known {
    std::string file;
    report::PlotSpec spec;
  };
  const std::vector<Known> known = {
      {"curves.csv", {report::PlotType::line, "Attention knockout", "center_layer", "mean_rel_diff", "partition", "", ""}},
      {"profile.csv", {report::PlotType::line, "Extraction rates", "layer", "rate", "kind", "", ""}},
      {"mean.csv", {report::PlotType::line, "Causal trace (state_h)", "layer", "ie_mean", "token_role", "kind", "state_h"}},
      {"histogram.csv", {report::PlotType::bars, "Patched predictions", "layer", "count", "label", "", ""}},
  };
  std::vector<fs::path> csvs;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
  }
  std::sort(csvs.begin(), csvs.end());
  std::vector<std::string> out;
  for (const auto& csv : csvs) {
    const auto table = report::read_csv(csv);
    for (const auto& k : known) {
      if (csv.filename() != k.file) continue;
      auto spec = k.spec;
      // knockout and patch curves share a file name; pick by columns
      if (k.file == "curves.csv" && table.has_column("series")) {
        spec = {report::PlotType::line, "Patch relative difference", "layer", "mean_rel_diff", "series", "", ""};
      }
      std::string name = rel(root, csv.parent_path());
      for (char& ch : name) ch = (ch == '/' || ch == ':') ? '_' : ch;
      const fs::path svg = root / "plots" / (name + "_" + csv.stem().string() + ".svg");
      spec.title += " (" + rel(root, csv.parent_path()) + ")";
      report::write_text(svg, report::render_svg(report::plot_from_csv(table, spec)));
      out.push_back(rel(root, svg));
    }
  }
  return out;
}

std::unique_ptr<engine::Backend> make_backend(const std::string& spec, runtime::ModelPtr native_model) {
  if (spec.empty() || spec == "native") {
    if (!native_model) throw ConfigError("the native backend needs a model");
    return std::make_unique<engine::NativeBackend>(std::move(native_model));
  }
  if (spec.starts_with("remote:")) return std::make_unique<engine::RemoteBackend>(engine::parse_address(spec));
  throw ConfigError(fmt::format("unknown backend '{}'", spec));
}

json load_config(const fs::path& path) {
  try {
    return json::parse(report::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

PipelineResult run_pipeline(const json& config, const fs::path& out_dir) {
  static const std::set<std::string> known = {"seed", "backend", "corpus", "model", "harvest", "experiments", "plots"};
  if (!config.is_object()) throw ConfigError("pipeline config must be a JSON object");
  for (const auto& [key, _] : config.items()) {
    if (!known.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", key));
  }
  fs::create_directories(out_dir);
  const fs::path manifest_path = out_dir / "manifests.jsonl";
  const std::uint64_t seed = config.value("seed", std::uint64_t{0});
  PipelineResult result;

  // Runs `body` unless an identical complete stage already exists.
  auto stage = [&](const std::string& kind, const std::string& name, json snapshot, const std::string& model_card,
                   const std::string& corpus_ref, const std::function<std::vector<std::string>()>& body) {
    snapshot["stage"] = name;
    for (const auto& m : report::read_manifests(manifest_path)) {
      if (m.kind != kind || m.status != "complete" || m.config != snapshot) continue;
      const bool present = std::all_of(m.outputs.begin(), m.outputs.end(),
                                       [&](const std::string& o) { return fs::exists(out_dir / o); });
      if (present) {
        result.skipped.push_back(name);
        return;
      }
    }
    // Refuse before touching files another manifest already owns.
    for (const auto& m : report::read_manifests(manifest_path)) {
      if (m.status != "complete" || m.config.value("stage", "") != name) continue;
      throw ConfigError(fmt::format("stage '{}' already has {} in {}; use a fresh output directory", name,
                                    m.config == snapshot ? "outputs that are now missing" : "a different config",
                                    out_dir.string()));
    }
    report::ExperimentManifest m;
    m.kind = kind;
    m.model_card = model_card;
    m.corpus = corpus_ref;
    m.seed = seed;
    m.config = snapshot;
    try {
      m.outputs = body();
    } catch (const std::exception& e) {
      m.outputs.clear();
      m.status = "partial";
      m.error = e.what();
      report::append_manifest(manifest_path, m);
      result.manifests.push_back(m);
      throw;
    }
    report::append_manifest(manifest_path, m);
    result.manifests.push_back(m);
  };

  // Corpus.
  const json corpus_cfg = config.value("corpus", json{{"synthetic", json::object()}});
  fs::path corpus_dir;
  if (corpus_cfg.contains("path")) {
    corpus_dir = corpus_cfg.at("path").get<std::string>();
  } else {
    corpus_dir = out_dir / "corpus";
    const json syn = corpus_cfg.value("synthetic", json::object());
    stage("corpus", "corpus", json{{"synthetic", syn}}, "", "corpus", [&] {
      corpus::SyntheticOptions so;
      so.n_relations = syn.value("n_relations", so.n_relations);
      so.n_subjects = syn.value("n_subjects", so.n_subjects);
      so.languages = corpus::default_languages(syn.value("languages", 2));
      so.collision_fraction = syn.value("collision_fraction", so.collision_fraction);
      so.paraphrases = syn.value("paraphrases", so.paraphrases);
      so.seed = syn.value("seed", seed);
      fs::remove_all(corpus_dir);
      corpus::save_corpus(corpus::gen_synthetic(so).corpus, corpus_dir);
      std::vector<std::string> files;
      for (const auto& e : fs::recursive_directory_iterator(corpus_dir)) {
        if (e.is_regular_file()) files.push_back(rel(out_dir, e.path()));
      }
      std::sort(files.begin(), files.end());
      return files;
    });
  }
  const corpus::Corpus corpus = corpus::filter_trivial(corpus::load_corpus(corpus_dir));
  const std::string corpus_ref = corpus_cfg.contains("path") ? corpus_dir.string() : "corpus";

  // Model.
  const json model_cfg = config.value("model", json{{"train", json::object()}});
  fs::path card;
  if (model_cfg.contains("card")) {
    card = model_cfg.at("card").get<std::string>();
  } else {
    card = out_dir / "model" / "card.json";
    const json tr = model_cfg.value("train", json::object());
    stage("train-toy", "model", json{{"train", tr}}, "model/card.json", corpus_ref, [&] {
      runtime::ModelConfig mc;
      mc.arch = runtime::parse_arch(tr.value("arch", "decoder_only"));
      mc.n_layers_dec = tr.value("n_layers", 4);
      mc.n_layers_enc = mc.is_encoder_decoder() ? tr.value("n_layers_enc", mc.n_layers_dec) : 0;
      mc.d_model = tr.value("d_model", 64);
      mc.n_heads = tr.value("n_heads", 4);
      mc.d_ff = tr.value("d_ff", 4 * mc.d_model);
      mc.seed = tr.value("seed", seed);
      runtime::TrainOptions to;
      to.steps = tr.value("steps", 3000);
      to.lr = tr.value("lr", to.lr);
      to.batch_size = tr.value("batch_size", to.batch_size);
      to.target_loss = tr.value("target_loss", 0.01);
      to.seed = mc.seed;
      const auto toy = harvest::train_toy(corpus, mc, to, {});
      json extra = {{"steps_run", toy.report.steps_run},
                    {"final_loss", toy.report.final_loss},
                    {"memorization", harvest::memorization_to_json(toy.memorization)}};
      runtime::save_model(card.parent_path(), *toy.model, toy.vocab, extra);
      return std::vector<std::string>{"model/card.json", "model/weights.bin", "model/vocab.txt"};
    });
  }
  const auto loaded = runtime::load_model(card);
  const auto backend = make_backend(config.value("backend", "native"), loaded.model);
  const std::string card_ref = model_cfg.contains("card") ? card.string() : "model/card.json";

  // Harvest.
  const json hv = config.value("harvest", json::object());
  const auto languages = hv.value("languages", corpus.languages);
  std::map<std::string, std::vector<harvest::MemorizedExample>> harvests;
  for (const auto& lang : languages) {
    const fs::path file = out_dir / "harvest" / (lang + ".jsonl");
    stage("harvest", "harvest:" + lang, hv, card_ref, corpus_ref, [&] {
      harvest::HarvestOptions ho;
      ho.seed = seed;
      ho.max_prefix = hv.value("max_prefix", ho.max_prefix);
      ho.max_new_tokens = hv.value("max_new_tokens", ho.max_new_tokens);
      const auto res = harvest::harvest(*backend, loaded.vocab, corpus, lang, ho);
      fs::create_directories(file.parent_path());
      harvest::write_examples(file, res.examples);
      const fs::path stats = out_dir / "harvest" / (lang + ".stats.json");
      report::write_text(stats, json({{"lang", lang},
                                      {"triplets", res.stats.triplets},
                                      {"matched", res.stats.matched},
                                      {"emitted", res.stats.emitted},
                                      {"dropped_span", res.stats.dropped_span},
                                      {"dropped_verify", res.stats.dropped_verify},
                                      {"diagnostics", res.stats.diagnostics}})
                                        .dump(2) + "\n");
      return std::vector<std::string>{rel(out_dir, file), rel(out_dir, stats)};
    });
    harvests[lang] = harvest::read_examples(file);
  }

  // Experiments.
  const json ex = config.value("experiments", json::object());
  if (ex.contains("trace")) {
    const json t = ex["trace"];
    for (const auto& lang : languages) {
      stage("trace", "trace:" + lang, t, card_ref, corpus_ref, [&] {
        tracing::TraceConfig tc;
        tc.n_samples = t.value("samples", tc.n_samples);
        tc.noise_multiplier = t.value("noise_mult", tc.noise_multiplier);
        tc.window_sublayer = t.value("window", 0);
        tc.seed = seed;
        auto examples = harvests[lang];
        const auto cap = t.value("max_examples", std::size_t{0});
        if (cap > 0 && examples.size() > cap) examples.resize(cap);
        return write_trace(*backend, examples, tc, out_dir, out_dir / "trace" / lang);
      });
    }
  }
  if (ex.contains("knockout")) {
    const json k = ex["knockout"];
    std::vector<knockout::Partition> parts;
    for (const auto& p : k.value("partitions", std::vector<std::string>{"subject", "non_subject", "last"})) {
      parts.push_back(knockout::parse_partition(p));
    }
    const auto mode = engine::wire::parse_knockout_mode(k.value("mode", "mask_logits"));
    for (const auto& lang : languages) {
      stage("knockout", "knockout:" + lang, k, card_ref, corpus_ref, [&] {
        return write_knockout(*backend, harvests[lang], parts, k.value("window", 0), mode, out_dir,
                              out_dir / "knockout" / lang);
      });
    }
  }
  if (ex.contains("extract")) {
    for (const auto& lang : languages) {
      stage("extract", "extract:" + lang, ex["extract"], card_ref, corpus_ref,
            [&] { return write_extraction(*backend, harvests[lang], out_dir, out_dir / "extract" / lang); });
    }
  }
  if (ex.contains("patch")) {
    for (const auto& p : ex["patch"]) {
      patching::PairOptions po;
      po.condition = patching::condition_from_number(p.value("condition", 2));
      po.patch_lang = p.value("patch_lang", languages.empty() ? std::string() : languages.front());
      po.context_lang = p.value("context_lang", languages.size() > 1 ? languages[1] : po.patch_lang);
      po.max_pairs = p.value("max_pairs", std::size_t{0});
      po.seed = seed;
      const std::string name = fmt::format("cond{}_{}_{}", patching::condition_number(po.condition), po.patch_lang,
                                           po.condition == patching::Condition::same_lang_diff_rel_diff_subj
                                               ? po.patch_lang
                                               : po.context_lang);
      stage("patch", "patch:" + name, p, card_ref, corpus_ref, [&] {
        return write_patch(*backend, harvests, corpus, loaded.vocab, po, out_dir, out_dir / "patch" / name);
      });
    }
  }
  if (config.value("plots", !ex.empty())) {
    stage("report", "report", json::object(), card_ref, corpus_ref, [&] {
      fs::remove_all(out_dir / "plots");
      return write_plots(out_dir);
    });
  }
  return result;
}

}  // namespace rlab::pipeline
