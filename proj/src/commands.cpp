// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "morekit/checkpoint.hpp"
#include "morekit/embeddings_io.hpp"
#include "morekit/fewshot.hpp"

namespace morekit {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + p.string() + "'");
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
}

std::vector<std::string> task_names(const RunConfig& c) {
  std::vector<std::string> names;
  for (const auto& t : c.tasks) names.push_back(t.name);
  return names;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

}  // namespace

ordered_json audit_json(const AuditReport& r) {
  ordered_json j;
  j["mode"] = r.mode;
  j["inputs"] = {{"L", r.inputs.layers},  {"r", r.inputs.rank}, {"m", r.inputs.m},
                 {"d", r.inputs.d},       {"T", r.inputs.tasks}, {"h", r.inputs.embed_dim}};
  ordered_json budgets;
  for (const auto& [name, value] : r.budgets) budgets[name] = value;
  j["budgets"] = budgets;
  j["expected"] = r.expected;
  j["live_counted"] = r.live_counted;
  j["live_trainable"] = r.live_trainable;
  j["gate_bias_unaccounted"] = r.gate_bias_unaccounted;
  j["effective_inference"] = r.effective_inference;
  j["status"] = r.status();
  j["mismatches"] = r.mismatches;
  ordered_json sites = ordered_json::array();
  for (const auto& s : r.sites) {
    sites.push_back({{"site", s.site},
                     {"live_lora", s.live_lora},
                     {"expected_lora", s.expected_lora},
                     {"live_routing", s.live_routing},
                     {"expected_routing", s.expected_routing},
                     {"gate_bias", s.gate_bias}});
  }
  j["sites"] = sites;
  return j;
}

ordered_json allocation_json(const Backbone& model, const std::vector<std::string>& names) {
  auto layers = model.more_layers();
  const AllocationHistogram h = allocation_histogram(layers);
  ordered_json j;
  j["tasks"] = names;
  j["max_rank"] = h.max_rank;
  j["counts"] = h.counts;
  j["mean_rank"] = h.mean_rank();
  ordered_json per_site = ordered_json::array();
  ordered_json training = ordered_json::array();
  std::vector<std::vector<std::size_t>> total(h.num_tasks, std::vector<std::size_t>(h.max_rank, 0));
  for (const auto& s : model.sites()) {
    const MoreLayer* m = s.more();
    if (m == nullptr) continue;
    std::vector<std::size_t> ranks;
    for (std::size_t t = 0; t < m->num_tasks(); ++t) ranks.push_back(m->current_rank(t));
    per_site.push_back({{"site", s.name()}, {"ranks", ranks}});
    for (std::size_t t = 0; t < h.num_tasks; ++t)
      for (std::size_t k = 0; k < m->max_rank(); ++k) total[t][k] += m->selection_counts()[t][k];
  }
  j["per_site"] = per_site;
  j["training_selections"] = total;
  return j;
}

ordered_json eval_json(const std::vector<std::string>& names, const std::vector<double>& accuracy) {
  ordered_json j;
  ordered_json tasks = ordered_json::array();
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    tasks.push_back({{"task", i < names.size() ? names[i] : std::to_string(i)}, {"accuracy", accuracy[i]}});
  }
  j["tasks"] = tasks;
  j["mean_accuracy"] =
      accuracy.empty() ? 0.0
                       : std::accumulate(accuracy.begin(), accuracy.end(), 0.0) /
                             static_cast<double>(accuracy.size());
  return j;
}

TrainOutcome run_training(const RunConfig& config, const fs::path& out_dir) {
  config.validate();
  TaskRegistry registry = build_registry(config);
  Backbone model = build_model(config);
  RunMetrics metrics = train(registry, model, config.train_options());

  make_dir(out_dir);
  write_text(out_dir / kMetricsFile, join_lines(metrics.lines));
  save_checkpoint(out_dir / kCheckpointDir, model, config, metrics.sampler_state);
  if (model.mode() == AdapterMode::more) {
    write_text(out_dir / kAllocationFile, allocation_json(model, task_names(config)).dump(2) + "\n");
    export_embeddings(model, out_dir / kEmbeddingsFile);
  }
  return {std::move(metrics), out_dir};
}

std::vector<double> evaluate_checkpoint(const fs::path& checkpoint) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  TaskRegistry registry = build_registry(ck.config);
  if (registry.size() != ck.model.num_tasks()) {
    throw CheckpointError("checkpoint carries tasks that its config does not describe");
  }
  return evaluate(registry, ck.model, ck.config.suite.label_tokens);
}

namespace {

struct RunFlags {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::vector<std::string> ablations;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const RunFlags& f) {
  RunConfig c = load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.output_dir = f.out;
  for (const auto& name : f.ablations) {
    const Ablation a = parse_ablation(name);
    if (!c.has(a)) c.ablations.push_back(a);
  }
  c.validate();
  return c;
}

int cmd_train(const RunFlags& f, std::ostream& out) {
  const RunConfig c = resolve_config(f);
  TrainOutcome r = run_training(c, c.output_dir);
  ordered_json j;
  j["status"] = "ok";
  j["metrics"] = (r.out_dir / kMetricsFile).string();
  j["checkpoint"] = (r.out_dir / kCheckpointDir).string();
  if (c.adapter.mode == AdapterMode::more) {
    j["allocation"] = (r.out_dir / kAllocationFile).string();
    j["embeddings"] = (r.out_dir / kEmbeddingsFile).string();
  }
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_eval(const RunFlags& f, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  TaskRegistry registry = build_registry(ck.config);
  const auto acc = evaluate(registry, ck.model, ck.config.suite.label_tokens);
  out << eval_json(task_names(ck.config), acc).dump() << '\n';
  return kExitOk;
}

int cmd_audit(const RunFlags& f, std::ostream& out) {
  if (f.checkpoint.empty() == f.config.empty()) {
    throw ConfigError("audit: pass exactly one of --config or --checkpoint");
  }
  AuditReport rep;
  if (!f.checkpoint.empty()) {
    rep = audit(load_checkpoint(f.checkpoint).model);
  } else {
    rep = audit(build_model(resolve_config(f)));
  }
  out << audit_json(rep).dump() << '\n';
  return kExitOk;
}

int cmd_freeze(const RunFlags& f, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  if (ck.model.mode() != AdapterMode::more) throw ConfigError("freeze: checkpoint has no MoRE layers");
  ck.model.freeze_mapping();
  const fs::path dest = f.out.empty() ? fs::path(f.checkpoint) : fs::path(f.out);
  save_checkpoint(dest, ck.model, ck.config, ck.sampler_state);
  ordered_json j;
  j["checkpoint"] = dest.string();
  ordered_json sites = ordered_json::array();
  for (const auto& s : ck.model.sites())
    if (const MoreLayer* m = s.more()) sites.push_back({{"site", s.name()}, {"mapping", m->frozen_map()}});
  j["mapping"] = sites;
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_export(const RunFlags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("export-embeddings: --out FILE is required");
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  export_embeddings(ck.model, f.out);
  ordered_json j;
  j["embeddings"] = f.out;
  j["rows"] = collect_embeddings(ck.model).size();
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_fewshot(const RunFlags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("fewshot: --out DIR is required");
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  if (!ck.config.fewshot) throw ConfigError("fewshot: checkpoint config has no fewshot section");
  RunConfig cfg = ck.config;
  if (f.seed) cfg.seed = *f.seed;
  const FewShotConfig& fsc = *cfg.fewshot;
  const auto results = few_shot_sweep(ck.model, cfg, fsc);
  make_dir(f.out);
  ordered_json summary = ordered_json::array();
  for (std::size_t j = 0; j < fsc.shots.size(); ++j) {
    std::vector<std::string> lines;
    double before = 0.0, after = 0.0;
    for (std::size_t s = 0; s < fsc.seeds; ++s) {
      const FewShotResult& r = results[j * fsc.seeds + s];
      ordered_json rec;
      rec["type"] = "fewshot_run";
      rec["shots"] = r.shots;
      rec["seed"] = r.seed;
      rec["init_policy"] = init_policy_name(r.init);
      rec["copied_from"] = r.copied_from ? json(*r.copied_from) : json(nullptr);
      rec["similarities"] = r.similarities;
      rec["accuracy_before"] = r.accuracy_before;
      rec["accuracy_after"] = r.accuracy_after;
      lines.push_back(rec.dump());
      before += r.accuracy_before;
      after += r.accuracy_after;
    }
    const double n = static_cast<double>(fsc.seeds);
    ordered_json mean{{"type", "fewshot_mean"},
                      {"shots", fsc.shots[j]},
                      {"seeds", fsc.seeds},
                      {"accuracy_before", before / n},
                      {"accuracy_after", after / n}};
    lines.push_back(mean.dump());
    const fs::path file = fs::path(f.out) / ("fewshot_k" + std::to_string(fsc.shots[j]) + ".jsonl");
    write_text(file, join_lines(lines));
    summary.push_back(file.string());
  }
  out << ordered_json{{"files", summary}}.dump() << '\n';
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, std::ostream& out) {
  if (dirs.empty()) throw ConfigError("report: pass at least one run directory");
  ordered_json runs = ordered_json::array();
  double total = 0.0;
  for (const auto& d : dirs) {
    const std::string text = read_text(fs::path(d) / kMetricsFile);
    std::istringstream in(text);
    std::string line;
    json last_eval;
    std::uint64_t seed = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      seed = rec.value("seed", seed);
      if (rec.value("type", "") == "eval") last_eval = rec;
    }
    if (last_eval.is_null()) throw IoError("report: no eval record in '" + d + "'");
    ordered_json r{{"run", d},
                   {"seed", seed},
                   {"step", last_eval["step"]},
                   {"accuracy", last_eval["accuracy"]},
                   {"mean_accuracy", last_eval["mean_accuracy"]}};
    const fs::path alloc = fs::path(d) / kAllocationFile;
    if (fs::exists(alloc)) r["mean_rank"] = json::parse(read_text(alloc))["mean_rank"];
    total += last_eval["mean_accuracy"].get<double>();
    runs.push_back(std::move(r));
  }
  ordered_json j{{"runs", runs}, {"mean_accuracy", total / static_cast<double>(dirs.size())}};
  out << j.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task low-rank adaptation with a mixture of rank experts", "more_kit"};
  app.require_subcommand(1);
  RunFlags f;
  std::uint64_t seed = 0;
  std::vector<std::string> report_dirs;

  auto add_seed = [&](CLI::App* sub) {
    return sub->add_option("--seed", seed, "Run seed (overrides the config)");
  };
  auto* train = app.add_subcommand("train", "Train a model and write metrics, checkpoint, allocation");
  train->add_option("--config", f.config, "Run config JSON")->required();
  add_seed(train);
  train->add_option("--out", f.out, "Output directory (overrides the config)");
  train->add_option("--ablation", f.ablations, "Ablation flag (repeatable)");

  auto* eval = app.add_subcommand("eval", "Print per-task held-out accuracy of a checkpoint");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint directory")->required();

  auto* aud = app.add_subcommand("audit", "Print the trainable-parameter audit");
  aud->add_option("--config", f.config, "Run config JSON");
  aud->add_option("--checkpoint", f.checkpoint, "Checkpoint directory");
  add_seed(aud);
  aud->add_option("--ablation", f.ablations, "Ablation flag (repeatable)");

  auto* freeze = app.add_subcommand("freeze", "Replace gates by a fixed task -> rank mapping");
  freeze->add_option("--checkpoint", f.checkpoint, "Checkpoint directory")->required();
  freeze->add_option("--out", f.out, "Destination (default: rewrite in place)");

  auto* exp = app.add_subcommand("export-embeddings", "Write task embeddings as CSV");
  exp->add_option("--checkpoint", f.checkpoint, "Checkpoint directory")->required();
  exp->add_option("--out", f.out, "CSV path")->required();

  auto* few = app.add_subcommand("fewshot", "Run the few-shot transfer sweep from a checkpoint");
  few->add_option("--checkpoint", f.checkpoint, "Source checkpoint directory")->required();
  few->add_option("--out", f.out, "Output directory")->required();
  add_seed(few);

  auto* rep = app.add_subcommand("report", "Summarize one or more run directories");
  rep->add_option("runs", report_dirs, "Run directories")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) {
    if (auto* opt = sub->get_option_no_throw("--seed"); opt != nullptr && opt->count() > 0) f.seed = seed;
  }

  try {
    if (train->parsed()) return cmd_train(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (aud->parsed()) return cmd_audit(f, out);
    if (freeze->parsed()) return cmd_freeze(f, out);
    if (exp->parsed()) return cmd_export(f, out);
    if (few->parsed()) return cmd_fewshot(f, out);
    if (rep->parsed()) return cmd_report(report_dirs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitIo;
  } catch (const json::exception& e) {
    err << "malformed json: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace morekit
