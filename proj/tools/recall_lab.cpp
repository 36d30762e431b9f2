#include <csignal>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/corpus/aliases.hpp"
#include "rlab/corpus/synthetic.hpp"
#include "rlab/engine/conformance.hpp"
#include "rlab/engine/remote.hpp"
#include "rlab/engine/wire.hpp"
#include "rlab/harvest/harvest.hpp"
#include "rlab/harvest/toy_training.hpp"
#include "rlab/pipeline/pipeline.hpp"
#include "rlab/report/csv.hpp"
#include "rlab/report/svg_plot.hpp"
#include "rlab/runtime/checkpoint.hpp"

using namespace rlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string backend = "native";
  std::string model;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

// Model card is needed for the vocabulary even when the backend is remote.
struct Session {
  runtime::LoadedModel loaded;
  std::unique_ptr<engine::Backend> backend;
};

Session open_session(const Common& c) {
  if (c.model.empty()) throw ConfigError("--model <card.json> is required");
  Session s;
  s.loaded = runtime::load_model(c.model);
  s.backend = pipeline::make_backend(c.backend, s.loaded.model);
  return s;
}

void add_common(CLI::App* app, Common& c, bool need_model = true) {
  app->add_option("--backend", c.backend, "native | remote:<host>:<port>");
  auto* m = app->add_option("--model", c.model, "model card (card.json)");
  if (need_model) m->required();
  app->add_option("--seed", c.seed, "seed");
  app->add_option("--threads", c.threads, "worker threads");
}

std::map<std::string, std::vector<harvest::MemorizedExample>> read_harvest_dir(const fs::path& dir) {
  std::map<std::string, std::vector<harvest::MemorizedExample>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".jsonl") out[e.path().stem().string()] = harvest::read_examples(e.path());
  }
  if (out.empty()) throw LoadError(fmt::format("{}: no <lang>.jsonl harvest files", dir.string()));
  return out;
}

void print_files(const std::vector<std::string>& files, const fs::path& root) {
  for (const auto& f : files) std::cout << (root / f).string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recall-lab: factual recall interpretability toolkit"};
  app.require_subcommand(1);

  // corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "build, inspect and filter corpora");
  corpus_cmd->require_subcommand(1);
  corpus::SyntheticOptions syn;
  int syn_languages = 2;
  std::string syn_out;
  auto* synth = corpus_cmd->add_subcommand("synth", "generate a synthetic pseudo-language corpus");
  synth->add_option("--relations", syn.n_relations);
  synth->add_option("--subjects", syn.n_subjects);
  synth->add_option("--languages", syn_languages)->check(CLI::Range(1, 3));
  synth->add_option("--collisions", syn.collision_fraction)->check(CLI::Range(0.0, 1.0));
  synth->add_option("--paraphrases", syn.paraphrases);
  synth->add_option("--seed", syn.seed);
  synth->add_option("--out", syn_out)->required();

  std::string stats_dir;
  auto* stats = corpus_cmd->add_subcommand("stats", "per-language counts");
  stats->add_option("--corpus", stats_dir)->required();

  std::string filter_in, filter_out;
  auto* filter = corpus_cmd->add_subcommand("filter", "drop (triplet, template) pairs whose query contains an alias");
  filter->add_option("--corpus", filter_in)->required();
  filter->add_option("--out", filter_out)->required();

  std::string fetch_dir;
  corpus::FetchOptions fetch;
  auto* fetch_cmd = corpus_cmd->add_subcommand("fetch-aliases", "merge object aliases from a wbgetentities endpoint");
  fetch_cmd->add_option("--corpus", fetch_dir)->required();
  fetch_cmd->add_option("--endpoint", fetch.endpoint);
  fetch_cmd->add_option("--timeout-ms", fetch.timeout_ms);
  fetch_cmd->add_option("--retries", fetch.retries);
  fetch_cmd->add_option("--concurrency", fetch.max_concurrency);

  // train-toy
  std::string train_corpus, train_out, train_arch = "decoder_only";
  runtime::ModelConfig train_cfg;
  train_cfg.n_layers_dec = 4;
  train_cfg.d_model = 64;
  train_cfg.n_heads = 4;
  train_cfg.d_ff = 256;
  runtime::TrainOptions train_opts;
  train_opts.steps = 3000;
  train_opts.target_loss = 0.01;
  int train_enc_layers = -1;
  auto* train = app.add_subcommand("train-toy", "train a toy model on a corpus");
  train->add_option("--corpus", train_corpus)->required();
  train->add_option("--out", train_out, "output directory for the model card")->required();
  train->add_option("--arch", train_arch, "decoder_only | encoder_decoder");
  train->add_option("--layers", train_cfg.n_layers_dec);
  train->add_option("--enc-layers", train_enc_layers);
  train->add_option("--d-model", train_cfg.d_model);
  train->add_option("--heads", train_cfg.n_heads);
  train->add_option("--d-ff", train_cfg.d_ff);
  train->add_option("--steps", train_opts.steps);
  train->add_option("--lr", train_opts.lr);
  train->add_option("--batch", train_opts.batch_size);
  train->add_option("--target-loss", train_opts.target_loss);
  train->add_option("--seed", train_cfg.seed);

  // harvest
  Common hv_common;
  std::string hv_corpus, hv_lang, hv_out;
  harvest::HarvestOptions hv_opts;
  auto* hv = app.add_subcommand("harvest", "collect memorized examples for one language");
  add_common(hv, hv_common);
  hv->add_option("--corpus", hv_corpus)->required();
  hv->add_option("--lang", hv_lang)->required();
  hv->add_option("--max-prefix", hv_opts.max_prefix);
  hv->add_option("--out", hv_out)->required();

  // trace
  Common tr_common;
  std::string tr_examples, tr_out;
  tracing::TraceConfig tr_cfg;
  std::size_t tr_max = 0;
  auto* tr = app.add_subcommand("trace", "causal tracing grid");
  add_common(tr, tr_common);
  tr->add_option("--examples", tr_examples)->required();
  tr->add_option("--window", tr_cfg.window_sublayer);
  tr->add_option("--samples", tr_cfg.n_samples);
  tr->add_option("--noise-mult", tr_cfg.noise_multiplier);
  tr->add_option("--max-examples", tr_max);
  tr->add_option("--out", tr_out)->required();

  // knockout
  Common ko_common;
  std::string ko_examples, ko_out, ko_mode = "mask_logits";
  std::vector<std::string> ko_parts;
  int ko_window = 0;
  auto* ko = app.add_subcommand("knockout", "attention knockout curves");
  add_common(ko, ko_common);
  ko->add_option("--examples", ko_examples)->required();
  ko->add_option("--partition", ko_parts, "subject | non-subject | last | enc-sentinel (repeatable)");
  ko->add_option("--window", ko_window);
  ko->add_option("--mode", ko_mode, "mask_logits | zero_weights");
  ko->add_option("--out", ko_out)->required();

  // extract
  Common ex_common;
  std::string ex_examples, ex_out;
  auto* ex = app.add_subcommand("extract", "extraction rates from vocabulary projections");
  add_common(ex, ex_common);
  ex->add_option("--examples", ex_examples)->required();
  ex->add_option("--out", ex_out)->required();

  // patch
  Common pa_common;
  std::string pa_harvest, pa_corpus, pa_out;
  int pa_condition = 2;
  patching::PairOptions pa_opts;
  auto* pa = app.add_subcommand("patch", "cross-example activation patching sweep");
  add_common(pa, pa_common);
  pa->add_option("--harvest-dir", pa_harvest, "directory of <lang>.jsonl harvest files")->required();
  pa->add_option("--corpus", pa_corpus)->required();
  pa->add_option("--condition", pa_condition)->check(CLI::Range(1, 3));
  pa->add_option("--patch-lang", pa_opts.patch_lang);
  pa->add_option("--context-lang", pa_opts.context_lang);
  pa->add_option("--max-pairs", pa_opts.max_pairs);
  pa->add_option("--out", pa_out)->required();

  // report
  std::string rp_root, rp_csv, rp_svg, rp_type = "line";
  report::PlotSpec rp_spec;
  auto* rp = app.add_subcommand("report", "emit SVG plots from result CSVs");
  rp->add_option("--root", rp_root, "plot every known CSV under this directory");
  rp->add_option("--csv", rp_csv, "single CSV input");
  rp->add_option("--svg", rp_svg, "single SVG output");
  rp->add_option("--type", rp_type, "line | bars");
  rp->add_option("--title", rp_spec.title);
  rp->add_option("--x", rp_spec.x_column);
  rp->add_option("--y", rp_spec.y_column);
  rp->add_option("--series", rp_spec.series_column);
  rp->add_option("--filter-column", rp_spec.filter_column);
  rp->add_option("--filter-value", rp_spec.filter_value);

  // run
  std::string run_config, run_out;
  auto* run = app.add_subcommand("run", "run a JSON-configured pipeline (resumable)");
  run->add_option("--config", run_config)->required();
  run->add_option("--out", run_out)->required();

  // serve-check
  Common sc_common;
  engine::ConformanceOptions sc_opts;
  auto* sc = app.add_subcommand("serve-check", "identity battery against a backend");
  add_common(sc, sc_common, false);
  sc->add_option("--tolerance", sc_opts.tolerance);

  // serve
  std::string sv_model;
  int sv_port = 0;
  auto* sv = app.add_subcommand("serve", "serve a model card over the wire protocol");
  sv->add_option("--model", sv_model)->required();
  sv->add_option("--port", sv_port);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      syn.languages = corpus::default_languages(syn_languages);
      const auto generated = corpus::gen_synthetic(syn);
      corpus::save_corpus(generated.corpus, syn_out);
      for (const auto& lang : generated.corpus.languages) {
        const auto c = generated.corpus.counts(lang);
        std::cout << fmt::format("{}: {} triplets, {} templates\n", lang, c.triplets, c.templates);
      }
    } else if (stats->parsed()) {
      const auto c = corpus::load_corpus(stats_dir);
      for (const auto& lang : c.languages) {
        const auto n = c.counts(lang);
        std::cout << fmt::format("{}\t{}\t{}\n", lang, n.triplets, n.templates);
      }
    } else if (filter->parsed()) {
      const auto before = corpus::load_corpus(filter_in);
      const auto after = corpus::filter_trivial(before);
      corpus::save_corpus(after, filter_out);
      std::cout << fmt::format("excluded {} (triplet, template) pairs\n", after.excluded.size());
    } else if (fetch_cmd->parsed()) {
      auto c = corpus::load_corpus(fetch_dir);
      std::set<std::string> ids;
      for (const auto& t : c.triplets) ids.insert(t.object_id);
      fetch.languages = c.languages;
      const auto fetched = corpus::fetch_aliases({ids.begin(), ids.end()}, fetch);
      corpus::merge_aliases(c, fetched);
      corpus::save_corpus(c, fetch_dir);
      for (const auto& f : fetched.failures) std::cerr << "failed " << f.id << ": " << f.reason << '\n';
      std::cout << fmt::format("fetched {} alias sets, {} failures\n", fetched.aliases.size(), fetched.failures.size());
    } else if (train->parsed()) {
      const auto c = corpus::filter_trivial(corpus::load_corpus(train_corpus));
      train_cfg.arch = runtime::parse_arch(train_arch);
      train_cfg.n_layers_enc = train_cfg.is_encoder_decoder()
                                   ? (train_enc_layers < 0 ? train_cfg.n_layers_dec : train_enc_layers)
                                   : 0;
      train_opts.seed = train_cfg.seed;
      train_opts.on_step = [](int step, double loss) {
        if (step % 100 == 0) std::cerr << fmt::format("step {} loss {:.5f}\n", step, loss);
      };
      const auto toy = harvest::train_toy(c, train_cfg, train_opts, {});
      json extra = {{"steps_run", toy.report.steps_run},
                    {"final_loss", toy.report.final_loss},
                    {"memorization", harvest::memorization_to_json(toy.memorization)}};
      runtime::save_model(train_out, *toy.model, toy.vocab, extra);
      for (const auto& m : toy.memorization) {
        std::cout << fmt::format("{}: memorized {}/{} ({:.1f}%)\n", m.lang, m.memorized, m.pairs, 100 * m.rate());
      }
    } else if (hv->parsed()) {
      const auto s = open_session(hv_common);
      const auto c = corpus::filter_trivial(corpus::load_corpus(hv_corpus));
      hv_opts.seed = hv_common.seed;
      hv_opts.threads = hv_common.threads;
      const auto res = harvest::harvest(*s.backend, s.loaded.vocab, c, hv_lang, hv_opts);
      harvest::write_examples(hv_out, res.examples);
      for (const auto& d : res.stats.diagnostics) std::cerr << d << '\n';
      std::cout << fmt::format("{}: {} of {} triplets harvested\n", hv_lang, res.stats.emitted, res.stats.triplets);
    } else if (tr->parsed()) {
      const auto s = open_session(tr_common);
      auto examples = harvest::read_examples(tr_examples);
      if (tr_max > 0 && examples.size() > tr_max) examples.resize(tr_max);
      tr_cfg.seed = tr_common.seed;
      tr_cfg.threads = tr_common.threads;
      print_files(pipeline::write_trace(*s.backend, examples, tr_cfg, tr_out, tr_out), tr_out);
    } else if (ko->parsed()) {
      const auto s = open_session(ko_common);
      std::vector<knockout::Partition> parts;
      if (ko_parts.empty()) ko_parts = {"subject", "non-subject", "last"};
      for (const auto& p : ko_parts) parts.push_back(knockout::parse_partition(p));
      print_files(pipeline::write_knockout(*s.backend, harvest::read_examples(ko_examples), parts, ko_window,
                                           engine::wire::parse_knockout_mode(ko_mode), ko_out, ko_out),
                  ko_out);
    } else if (ex->parsed()) {
      const auto s = open_session(ex_common);
      print_files(pipeline::write_extraction(*s.backend, harvest::read_examples(ex_examples), ex_out, ex_out), ex_out);
    } else if (pa->parsed()) {
      const auto s = open_session(pa_common);
      const auto c = corpus::filter_trivial(corpus::load_corpus(pa_corpus));
      pa_opts.condition = patching::condition_from_number(pa_condition);
      pa_opts.seed = pa_common.seed;
      patching::ConditionReport rep;
      print_files(pipeline::write_patch(*s.backend, read_harvest_dir(pa_harvest), c, s.loaded.vocab, pa_opts,
                                        pa_out, pa_out, &rep),
                  pa_out);
      for (const auto& row : rep.proportions) {
        std::cout << fmt::format("{}\t{}\n", patching::to_string(row.label), row.formatted());
      }
    } else if (rp->parsed()) {
      if (!rp_root.empty()) {
        print_files(pipeline::write_plots(rp_root), rp_root);
      } else {
        if (rp_csv.empty() || rp_svg.empty()) throw ConfigError("report needs --root or both --csv and --svg");
        if (rp_type != "line" && rp_type != "bars") throw ConfigError("--type must be line or bars");
        rp_spec.type = rp_type == "line" ? report::PlotType::line : report::PlotType::bars;
        report::emit_plot(rp_csv, rp_spec, rp_svg);
        std::cout << rp_svg << '\n';
      }
    } else if (run->parsed()) {
      const auto result = pipeline::run_pipeline(pipeline::load_config(run_config), run_out);
      for (const auto& name : result.skipped) std::cout << "skipped " << name << '\n';
      for (const auto& m : result.manifests) {
        std::cout << fmt::format("{} {} ({} files)\n", m.kind, m.status, m.outputs.size());
      }
    } else if (sc->parsed()) {
      runtime::ModelPtr model;
      if (sc_common.backend == "native") {
        if (sc_common.model.empty()) throw ConfigError("--model is required with the native backend");
        model = runtime::load_model(sc_common.model).model;
      }
      const auto backend = pipeline::make_backend(sc_common.backend, model);
      sc_opts.seed = sc_common.seed == 0 ? sc_opts.seed : sc_common.seed;
      bool ok = true;
      for (const auto& r : engine::conformance_suite(*backend, sc_opts)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
        std::cout << '\n';
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    } else if (sv->parsed()) {
      const auto loaded = runtime::load_model(sv_model);
      engine::NativeBackend backend(loaded.model);
      engine::ProtocolServer server(backend, sv_port);
      std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
      server.serve_forever();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
