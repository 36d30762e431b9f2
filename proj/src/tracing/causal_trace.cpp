#include "rlab/tracing/causal_trace.hpp"

#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/common/hash.hpp"
#include "rlab/common/parallel.hpp"
#include "rlab/engine/window.hpp"
#include "rlab/report/aggregate.hpp"

namespace rlab::tracing {
namespace {

using engine::HookSite;
using engine::Intervention;
using harvest::MemorizedExample;

std::vector<HookSite> subject_embed_sites(const MemorizedExample& ex) {
  std::vector<HookSite> sites;
  for (int t = ex.subject_first; t <= ex.subject_last; ++t) sites.push_back({subject_stream(ex), 0, SiteKind::embed, t});
  return sites;
}

int stream_length(const MemorizedExample& ex, Stream s) {
  return static_cast<int>(s == Stream::enc ? ex.enc_ids.size() : ex.input_ids.size());
}

int window_for(const TraceConfig& c, const runtime::ModelConfig& m) {
  if (c.window_sublayer > 0) return c.window_sublayer;
  const int depth = m.is_encoder_decoder() ? m.n_layers_enc : m.n_layers_dec;
  return engine::default_trace_window(m.arch, depth);
}

std::vector<std::vector<double>> clean_embeds(const engine::Engine& engine, const engine::RunId& run,
                                              const MemorizedExample& ex) {
  const auto stored = engine.store().get(run);
  std::vector<std::vector<double>> out;
  for (const auto& s : subject_embed_sites(ex)) out.push_back(*stored->find(s));
  return out;
}

void check_config(const TraceConfig& c) {
  if (c.n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (!(c.noise_multiplier >= 0.0)) throw ConfigError("noise multiplier must be >= 0");
}

}  // namespace

std::vector<SiteKind> default_kinds(runtime::Arch arch) {
  std::vector<SiteKind> k = {SiteKind::state_h, SiteKind::mlp_f, SiteKind::self_attn_s};
  if (arch == runtime::Arch::encoder_decoder) k.push_back(SiteKind::cross_attn_c);
  return k;
}

double sigma_of(const std::vector<std::vector<double>>& vectors) {
  report::MeanFold mean;
  for (const auto& v : vectors) {
    for (double x : v) mean.add(x);
  }
  if (mean.n == 0) throw ConfigError("no subject embeddings to compute sigma from");
  const double mu = mean.mean();
  report::MeanFold sq;
  for (const auto& v : vectors) {
    for (double x : v) sq.add((x - mu) * (x - mu));
  }
  return std::sqrt(sq.mean());
}

Stream subject_stream(const MemorizedExample& example) {
  return example.encoder_decoder() ? Stream::enc : Stream::dec;
}

double compute_sigma(const engine::Backend& backend, const std::vector<MemorizedExample>& examples) {
  std::vector<std::vector<double>> vectors;
  for (const auto& ex : examples) {
    runtime::Hooks hooks;
    hooks.captures = subject_embed_sites(ex);
    for (auto& rec : backend.execute(ex.inputs(), hooks).captures) vectors.push_back(std::move(rec.vector));
  }
  return sigma_of(vectors);
}

std::vector<double> noise_sample(std::uint64_t seed, const std::string& example_id, int repetition,
                                 std::size_t count, double stddev) {
  std::mt19937_64 rng(mix_seed(mix_seed(seed, fnv1a(example_id)), static_cast<std::uint64_t>(repetition)));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(count);
  for (auto& v : out) v = stddev * normal(rng);
  return out;
}

Corruption corrupt_run(const engine::Engine& engine, const MemorizedExample& example,
                       const std::vector<std::vector<double>>& embeds, runtime::TokenId traced_token, double sigma,
                       double multiplier, std::uint64_t seed, int repetition) {
  const auto sites = subject_embed_sites(example);
  if (sites.size() != embeds.size()) throw SpanError("clean embeddings do not match the subject span");
  std::size_t total = 0;
  for (const auto& e : embeds) total += e.size();
  const auto noise = noise_sample(seed, example.id(), repetition, total, multiplier * sigma);
  Corruption c;
  std::size_t k = 0;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    std::vector<double> v = embeds[i];
    for (double& x : v) x += noise[k++];
    c.plan.push_back(Intervention::replace(sites[i], std::move(v)));
  }
  c.p = engine.run_with_plan(example.inputs(), c.plan).distribution.at(static_cast<std::size_t>(traced_token));
  return c;
}

double restored_probability(const engine::Engine& engine, const MemorizedExample& example,
                            const Corruption& corruption, const std::vector<HookSite>& restore,
                            const engine::RunId& clean_run, runtime::TokenId traced_token) {
  engine::Plan plan = corruption.plan;
  for (const auto& s : restore) plan.push_back(Intervention::restore(s, clean_run));
  return engine.run_with_plan(example.inputs(), plan).distribution.at(static_cast<std::size_t>(traced_token));
}

std::vector<HookSite> restore_sites(const runtime::ModelConfig& model, const TraceSite& site, int window) {
  if (site.kind == SiteKind::state_h) return {{site.stream, site.layer, site.kind, site.token}};
  if (site.kind == SiteKind::embed) throw ConfigError("embed sites are corrupted, not traced");
  std::vector<HookSite> out;
  for (int l : engine::resolve_window(site.layer, window, runtime::stream_layers(model, site.stream)).layers) {
    out.push_back({site.stream, l, site.kind, site.token});
  }
  return out;
}

std::vector<TraceSite> grid_sites(const runtime::ModelConfig& model, const MemorizedExample& ex,
                                  const std::vector<SiteKind>& kinds) {
  std::vector<TraceSite> out;
  const bool ed = model.is_encoder_decoder();
  for (SiteKind kind : kinds) {
    if (kind == SiteKind::embed) throw ConfigError("embed is not a traceable kind");
    if (kind == SiteKind::cross_attn_c && !ed) {
      throw CapabilityError("cross_attn_c tracing needs an encoder-decoder model");
    }
    const Stream stream = (ed && kind != SiteKind::cross_attn_c) ? Stream::enc : Stream::dec;
    const int layers = runtime::stream_layers(model, stream);
    const int top = kind == SiteKind::state_h ? layers : layers - 1;
    for (int t = 0; t < stream_length(ex, stream); ++t) {
      for (int l = 0; l <= top; ++l) out.push_back({stream, t, l, kind});
    }
  }
  return out;
}

std::string token_role(const MemorizedExample& ex, Stream stream, int token) {
  if (stream != subject_stream(ex)) {
    return token == stream_length(ex, stream) - 1 ? "dec_last" : "dec_other";
  }
  if (stream == Stream::dec && token == stream_length(ex, stream) - 1) return "last";
  if (ex.encoder_decoder() && ex.enc_ids[static_cast<std::size_t>(token)] == ex.sentinel) return "sentinel";
  if (token < ex.subject_first) return "before_subject";
  if (token == ex.subject_last) return "subject_last";
  if (token == ex.subject_first) return "subject_first";
  if (token < ex.subject_last) return "subject_middle";
  if (token == ex.subject_last + 1) return "first_subsequent";
  return "further";
}

double traced_ie(const engine::Engine& engine, const MemorizedExample& example, const TraceSite& site,
                 const TraceConfig& config, double sigma) {
  check_config(config);
  const auto& model = engine.backend().capabilities().model;
  const auto restore = restore_sites(model, site, window_for(config, model));
  auto capture = subject_embed_sites(example);
  capture.insert(capture.end(), restore.begin(), restore.end());
  runtime::RunOutput clean;
  const auto run = engine.record(example.inputs(), capture, &clean);
  const auto embeds = clean_embeds(engine, run, example);
  report::MeanFold ie;
  for (int rep = 0; rep < config.n_samples; ++rep) {
    const auto c = corrupt_run(engine, example, embeds, clean.predicted_token, sigma, config.noise_multiplier,
                               config.seed, rep);
    ie.add(restored_probability(engine, example, c, restore, run, clean.predicted_token) - c.p);
  }
  engine.store().erase(run);
  return ie.mean();
}

TraceGrid trace_example(const engine::Engine& engine, const MemorizedExample& example, const TraceConfig& config,
                        double sigma) {
  check_config(config);
  const auto& model = engine.backend().capabilities().model;
  const auto kinds = config.kinds.value_or(default_kinds(model.arch));
  const int window = window_for(config, model);
  TraceGrid grid;
  grid.example_id = example.id();

  const auto sites = grid_sites(model, example, kinds);
  std::vector<std::vector<HookSite>> restores;
  auto capture = subject_embed_sites(example);
  for (const auto& s : sites) {
    restores.push_back(restore_sites(model, s, window));
    capture.push_back({s.stream, s.layer, s.kind, s.token});
  }
  runtime::RunOutput clean;
  const auto run = engine.record(example.inputs(), capture, &clean);
  grid.traced_token = clean.predicted_token;
  grid.p_clean = clean.distribution.at(static_cast<std::size_t>(clean.predicted_token));
  const auto embeds = clean_embeds(engine, run, example);

  for (const auto& s : sites) grid.cells.push_back({s, token_role(example, s.stream, s.token), 0.0, {}});
  report::MeanFold p_corrupt;
  for (int rep = 0; rep < config.n_samples; ++rep) {
    const auto c = corrupt_run(engine, example, embeds, grid.traced_token, sigma, config.noise_multiplier,
                               config.seed, rep);
    grid.p_corrupt_samples.push_back(c.p);
    p_corrupt.add(c.p);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      grid.cells[i].ie_samples.push_back(
          restored_probability(engine, example, c, restores[i], run, grid.traced_token) - c.p);
    }
  }
  grid.p_corrupt = p_corrupt.mean();
  for (auto& cell : grid.cells) cell.ie_mean = report::mean_of(cell.ie_samples);
  engine.store().erase(run);
  return grid;
}

std::vector<TraceGrid> trace_grid(const engine::Backend& backend, const std::vector<MemorizedExample>& examples,
                                  const TraceConfig& config) {
  check_config(config);
  const double sigma = config.sigma ? *config.sigma : compute_sigma(backend, examples);
  if (!(sigma > 0.0) && config.noise_multiplier > 0.0) throw ConfigError("sigma must be positive");
  engine::RunStore store;
  const engine::Engine engine(backend, store);
  std::vector<TraceGrid> grids(examples.size());
  parallel_for(
      examples.size(),
      [&](std::size_t i) {
        try {
          grids[i] = trace_example(engine, examples[i], config, sigma);
        } catch (const CapabilityError&) {
          throw;
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          grids[i].example_id = examples[i].id();
          grids[i].partial = true;
          grids[i].error = e.what();
        }
      },
      config.threads);
  return grids;
}

std::vector<MeanCell> mean_grid(const std::vector<TraceGrid>& grids) {
  std::vector<std::tuple<int, std::string, int>> order;
  std::map<std::tuple<int, std::string, int>, report::MeanFold> folds;
  for (const auto& g : grids) {
    if (g.partial) continue;
    for (const auto& c : g.cells) {
      const auto key = std::make_tuple(static_cast<int>(c.site.kind), c.role, c.site.layer);
      if (!folds.contains(key)) order.push_back(key);
      folds[key].add(c.ie_mean);
    }
  }
  std::sort(order.begin(), order.end());
  std::vector<MeanCell> out;
  for (const auto& key : order) {
    const auto& f = folds[key];
    out.push_back({std::get<1>(key), std::get<2>(key), static_cast<SiteKind>(std::get<0>(key)), f.mean(), f.n});
  }
  return out;
}

report::CsvTable grid_table(const std::vector<TraceGrid>& grids) {
  report::CsvTable t;
  t.columns = {"example_id", "token_idx", "token_role", "layer", "kind", "ie_mean", "p_clean", "p_corrupt"};
  for (const auto& g : grids) {
    for (const auto& c : g.cells) {
      t.rows.push_back({g.example_id, std::to_string(c.site.token), c.role, std::to_string(c.site.layer),
                        std::string(runtime::to_string(c.site.kind)), report::format_number(c.ie_mean),
                        report::format_number(g.p_clean), report::format_number(g.p_corrupt)});
    }
  }
  return t;
}

report::CsvTable mean_table(const std::vector<MeanCell>& cells) {
  report::CsvTable t;
  t.columns = {"token_role", "layer", "kind", "ie_mean", "n"};
  for (const auto& c : cells) {
    t.rows.push_back({c.role, std::to_string(c.layer), std::string(runtime::to_string(c.kind)),
                      report::format_number(c.ie_mean), std::to_string(c.n)});
  }
  return t;
}

}  // namespace rlab::tracing
