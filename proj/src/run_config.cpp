// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>

#include "morekit/embeddings_io.hpp"

namespace morekit {

using nlohmann::json;
using nlohmann::ordered_json;

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::disable_linear_scaling: return "disable_linear_scaling";
    case Ablation::soft_selection: return "soft_selection";
    case Ablation::disable_ste: return "disable_ste";
    case Ablation::random_sample: return "random_sample";
    case Ablation::literal_contrastive_sign: return "literal_contrastive_sign";
    case Ablation::no_task_embeddings: return "no_task_embeddings";
    case Ablation::no_contrastive: return "no_contrastive";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::disable_linear_scaling, Ablation::soft_selection,
                     Ablation::disable_ste, Ablation::random_sample, Ablation::literal_contrastive_sign,
                     Ablation::no_task_embeddings, Ablation::no_contrastive}) {
    if (s == ablation_name(a)) return a;
  }
  throw ConfigError("ablations: unknown ablation '" + s + "'");
}

const char* init_policy_name(InitPolicy p) {
  return p == InitPolicy::kaiming ? "kaiming" : "copy_nearest";
}

InitPolicy parse_init_policy(const std::string& s) {
  if (s == "kaiming") return InitPolicy::kaiming;
  if (s == "copy_nearest") return InitPolicy::copy_nearest;
  throw ConfigError("fewshot.init_policy: expected 'kaiming' or 'copy_nearest', got '" + s + "'");
}

namespace {

const char* scheme_name(SamplingScheme s) {
  switch (s) {
    case SamplingScheme::balanced: return "balanced";
    case SamplingScheme::proportional: return "proportional";
    case SamplingScheme::inverse_size: return "inverse_size";
  }
  return "?";
}

SamplingScheme parse_scheme(const std::string& s) {
  if (s == "balanced") return SamplingScheme::balanced;
  if (s == "proportional") return SamplingScheme::proportional;
  if (s == "inverse_size") return SamplingScheme::inverse_size;
  throw ConfigError("sampling: unknown scheme '" + s + "'");
}

// Typed access to one JSON object with unknown-key rejection.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!ok.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& at(const char* key) const {
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing required field");
    return j_.at(key);
  }

  template <class T>
  void get(const char* key, T& out) const {
    if (j_.contains(key)) out = convert<T>(j_.at(key), field(key));
  }

  template <class T>
  T require(const char* key) const {
    return convert<T>(at(key), field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  template <class T>
  static T convert(const json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(name + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(name + ": expected a number");
      return v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(name + ": expected a string");
      return v.get<T>();
    }
  }

 private:
  const json& j_;
  std::string path_;
};

BackboneConfig parse_backbone(const json& j) {
  Reader r(j, "backbone");
  r.allow({"num_layers", "width", "ffn_width", "num_heads", "vocab_size", "max_seq_len"});
  BackboneConfig b;
  r.get("num_layers", b.num_layers);
  r.get("width", b.width);
  b.ffn_width = b.width;
  r.get("ffn_width", b.ffn_width);
  r.get("num_heads", b.num_heads);
  r.get("vocab_size", b.vocab_size);
  r.get("max_seq_len", b.max_seq_len);
  return b;
}

TaskSpec parse_task(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow({"name", "intrinsic_rank", "train_size", "heldout_size", "teacher_seed", "vocab",
           "duplicate_of"});
  TaskSpec t;
  t.name = r.require<std::string>("name");
  t.intrinsic_rank = r.require<std::size_t>("intrinsic_rank");
  r.get("train_size", t.train_size);
  r.get("heldout_size", t.heldout_size);
  r.get("teacher_seed", t.teacher_seed);
  if (r.has("vocab")) {
    const json& v = r.at("vocab");
    if (!v.is_array() || v.size() != 2) throw ConfigError(r.field("vocab") + ": expected [lo, hi]");
    t.vocab = std::pair{Reader::convert<std::size_t>(v[0], r.field("vocab")),
                        Reader::convert<std::size_t>(v[1], r.field("vocab"))};
  }
  if (r.has("duplicate_of")) t.duplicate_of = r.require<std::string>("duplicate_of");
  return t;
}

}  // namespace

bool RunConfig::has(Ablation a) const {
  return std::find(ablations.begin(), ablations.end(), a) != ablations.end();
}

AdapterSettings RunConfig::effective_adapter() const {
  AdapterSettings a = adapter;
  a.num_tasks = tasks.size();
  if (has(Ablation::disable_linear_scaling)) a.more.linear_scaling = false;
  if (has(Ablation::soft_selection)) a.more.soft_selection = true;
  if (has(Ablation::disable_ste)) a.more.ste = false;
  if (has(Ablation::no_task_embeddings)) a.more.task_embeddings = false;
  return a;
}

LossConfig RunConfig::effective_loss() const {
  LossConfig l = loss;
  if (has(Ablation::literal_contrastive_sign)) l.sign = ContrastiveSign::literal;
  if (has(Ablation::no_contrastive)) l.lambda = 0.0;
  return l;
}

SamplingScheme RunConfig::effective_sampling() const {
  return has(Ablation::random_sample) ? SamplingScheme::proportional : sampling;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.optim = optim;
  o.loss = effective_loss();
  o.sampling_seed = seeds().sampling;
  o.run_seed = seed;
  o.eval_every = eval_every;
  o.log_every = log_every;
  o.label_tokens = suite.label_tokens;
  return o;
}

void RunConfig::validate() const {
  try {
    backbone.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (adapter.mode != AdapterMode::none) {
    if (adapter.rank == 0) throw ConfigError("adapter.rank: must be >= 1");
    if (adapter.rank > std::min(backbone.width, backbone.ffn_width)) {
      throw ConfigError("adapter.rank: exceeds the smallest projection dimension");
    }
  }
  if (adapter.mode == AdapterMode::more) {
    if (adapter.embed_dim != 0 && adapter.embed_dim != backbone.width) {
      throw ConfigError("adapter.embed_dim: must equal backbone.width");
    }
    if (backbone.ffn_width != backbone.width) {
      throw ConfigError("backbone.ffn_width: must equal backbone.width in more mode");
    }
  }
  if (!(adapter.alpha > 0.0)) throw ConfigError("adapter.alpha: must be positive");
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr: must be positive");
  if (optim.weight_decay < 0.0) throw ConfigError("optim.weight_decay: must be >= 0");
  if (optim.warmup_fraction < 0.0 || optim.warmup_fraction > 1.0) {
    throw ConfigError("optim.warmup_fraction: must lie in [0, 1]");
  }
  if (optim.batch_size == 0) throw ConfigError("optim.batch_size: must be >= 1");
  if (loss.lambda < 0.0) throw ConfigError("loss.lambda: must be >= 0");
  if (!(loss.tau > 0.0)) throw ConfigError("loss.tau: must be positive");
  if (eval_every == 0) throw ConfigError("eval_every: must be >= 1");
  if (log_every == 0) throw ConfigError("log_every: must be >= 1");
  if (suite.label_tokens < 2) throw ConfigError("suite.label_tokens: must be >= 2");
  if (tasks.empty()) throw ConfigError("tasks: at least one task is required");
  const std::size_t max_rank = adapter.mode == AdapterMode::none ? backbone.width : adapter.rank;
  std::set<std::string> names;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string p = "tasks[" + std::to_string(i) + "]";
    if (tasks[i].name.empty()) throw ConfigError(p + ".name: must not be empty");
    if (!names.insert(tasks[i].name).second) throw ConfigError(p + ".name: duplicate task name");
    if (tasks[i].intrinsic_rank > max_rank) {
      throw ConfigError(p + ".intrinsic_rank: exceeds adapter.rank");
    }
  }
  if (fewshot) {
    if (fewshot->shots.empty()) throw ConfigError("fewshot.shots: must not be empty");
    for (std::size_t k : fewshot->shots)
      if (k == 0) throw ConfigError("fewshot.shots: every entry must be >= 1");
    if (fewshot->seeds == 0) throw ConfigError("fewshot.seeds: must be >= 1");
    if (names.count(fewshot->task.name)) throw ConfigError("fewshot.task.name: clashes with a source task");
  }
  if (has(Ablation::soft_selection) && adapter.mode != AdapterMode::more) {
    throw ConfigError("ablations: soft_selection requires adapter.mode 'more'");
  }
}

RunConfig parse_run_config(const json& j) {
  Reader r(j, "");
  r.allow({"seed", "output_dir", "backbone", "adapter", "optim", "loss", "sampling", "ablations",
           "suite", "tasks", "eval_every", "log_every", "fewshot"});
  RunConfig c;
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  c.backbone = parse_backbone(r.at("backbone"));

  if (r.has("adapter")) {
    Reader a(r.at("adapter"), "adapter");
    a.allow({"mode", "rank", "embed_dim", "alpha", "gate_init_std"});
    if (a.has("mode")) {
      try {
        c.adapter.mode = parse_adapter_mode(a.require<std::string>("mode"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("adapter.mode: ") + e.what());
      }
    } else {
      c.adapter.mode = AdapterMode::more;
    }
    a.get("rank", c.adapter.rank);
    a.get("embed_dim", c.adapter.embed_dim);
    a.get("alpha", c.adapter.alpha);
    a.get("gate_init_std", c.adapter.more.gate_init_std);
    if (c.adapter.more.gate_init_std < 0.0) throw ConfigError("adapter.gate_init_std: must be >= 0");
  } else {
    c.adapter.mode = AdapterMode::more;
  }

  if (r.has("optim")) {
    Reader o(r.at("optim"), "optim");
    o.allow({"lr", "weight_decay", "warmup_fraction", "batch_size", "steps"});
    o.get("lr", c.optim.lr);
    o.get("weight_decay", c.optim.weight_decay);
    o.get("warmup_fraction", c.optim.warmup_fraction);
    o.get("batch_size", c.optim.batch_size);
    o.get("steps", c.optim.steps);
  }
  if (r.has("loss")) {
    Reader l(r.at("loss"), "loss");
    l.allow({"lambda", "tau"});
    l.get("lambda", c.loss.lambda);
    l.get("tau", c.loss.tau);
  }
  if (r.has("sampling")) c.sampling = parse_scheme(r.require<std::string>("sampling"));
  if (r.has("ablations")) {
    const json& a = r.at("ablations");
    if (!a.is_array()) throw ConfigError("ablations: expected an array of names");
    for (const auto& v : a) {
      const auto name = Reader::convert<std::string>(v, "ablations");
      const Ablation ab = parse_ablation(name);
      if (!c.has(ab)) c.ablations.push_back(ab);
    }
  }
  if (r.has("suite")) {
    Reader s(r.at("suite"), "suite");
    s.allow({"label_tokens", "perturbation_scale", "perturbed_sites", "basis"});
    s.get("label_tokens", c.suite.label_tokens);
    s.get("perturbation_scale", c.suite.perturbation_scale);
    if (s.has("perturbed_sites")) {
      const json& ps = s.at("perturbed_sites");
      if (!ps.is_array()) throw ConfigError("suite.perturbed_sites: expected an array");
      c.suite.perturbed_sites.clear();
      for (const auto& v : ps) {
        try {
          c.suite.perturbed_sites.push_back(
              parse_site(Reader::convert<std::string>(v, "suite.perturbed_sites")));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("suite.perturbed_sites: ") + e.what());
        }
      }
    }
    if (s.has("basis")) {
      const auto b = s.require<std::string>("basis");
      if (b == "independent") c.suite.basis = PerturbationBasis::independent;
      else if (b == "shared") c.suite.basis = PerturbationBasis::shared;
      else throw ConfigError("suite.basis: expected 'independent' or 'shared'");
    }
  }
  const json& tasks = r.at("tasks");
  if (!tasks.is_array()) throw ConfigError("tasks: expected an array");
  for (std::size_t i = 0; i < tasks.size(); ++i)
    c.tasks.push_back(parse_task(tasks[i], "tasks[" + std::to_string(i) + "]"));
  r.get("eval_every", c.eval_every);
  r.get("log_every", c.log_every);

  if (r.has("fewshot")) {
    Reader f(r.at("fewshot"), "fewshot");
    f.allow({"task", "shots", "seeds", "steps", "lr", "init_policy"});
    FewShotConfig fs;
    fs.task = parse_task(f.at("task"), "fewshot.task");
    if (f.has("shots")) {
      const json& s = f.at("shots");
      if (!s.is_array()) throw ConfigError("fewshot.shots: expected an array");
      fs.shots.clear();
      for (const auto& v : s) fs.shots.push_back(Reader::convert<std::size_t>(v, "fewshot.shots"));
    }
    f.get("seeds", fs.seeds);
    f.get("steps", fs.steps);
    f.get("lr", fs.lr);
    if (f.has("init_policy")) fs.init = parse_init_policy(f.require<std::string>("init_policy"));
    c.fewshot = fs;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_run_config(j);
}

namespace {

ordered_json task_json(const TaskSpec& t) {
  ordered_json j;
  j["name"] = t.name;
  j["intrinsic_rank"] = t.intrinsic_rank;
  j["train_size"] = t.train_size;
  j["heldout_size"] = t.heldout_size;
  j["teacher_seed"] = t.teacher_seed;
  if (t.vocab) j["vocab"] = {t.vocab->first, t.vocab->second};
  if (t.duplicate_of) j["duplicate_of"] = *t.duplicate_of;
  return j;
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["backbone"] = {{"num_layers", c.backbone.num_layers}, {"width", c.backbone.width},
                   {"ffn_width", c.backbone.ffn_width},   {"num_heads", c.backbone.num_heads},
                   {"vocab_size", c.backbone.vocab_size}, {"max_seq_len", c.backbone.max_seq_len}};
  j["adapter"] = {{"mode", adapter_mode_name(c.adapter.mode)},
                  {"rank", c.adapter.rank},
                  {"embed_dim", c.adapter.embed_dim},
                  {"alpha", c.adapter.alpha},
                  {"gate_init_std", c.adapter.more.gate_init_std}};
  j["optim"] = {{"lr", c.optim.lr},
                {"weight_decay", c.optim.weight_decay},
                {"warmup_fraction", c.optim.warmup_fraction},
                {"batch_size", c.optim.batch_size},
                {"steps", c.optim.steps}};
  j["loss"] = {{"lambda", c.loss.lambda}, {"tau", c.loss.tau}};
  j["sampling"] = scheme_name(c.sampling);
  j["ablations"] = ordered_json::array();
  for (Ablation a : c.ablations) j["ablations"].push_back(ablation_name(a));
  ordered_json sites = ordered_json::array();
  for (SiteKind k : c.suite.perturbed_sites) sites.push_back(site_name(k));
  j["suite"] = {{"label_tokens", c.suite.label_tokens},
                {"perturbation_scale", c.suite.perturbation_scale},
                {"perturbed_sites", sites},
                {"basis", c.suite.basis == PerturbationBasis::shared ? "shared" : "independent"}};
  j["tasks"] = ordered_json::array();
  for (const auto& t : c.tasks) j["tasks"].push_back(task_json(t));
  j["eval_every"] = c.eval_every;
  j["log_every"] = c.log_every;
  if (c.fewshot) {
    const auto& f = *c.fewshot;
    j["fewshot"] = {{"task", task_json(f.task)}, {"shots", f.shots}, {"seeds", f.seeds},
                    {"steps", f.steps},          {"lr", f.lr},       {"init_policy", init_policy_name(f.init)}};
  }
  return j;
}

TaskRegistry build_registry(const RunConfig& c) {
  const std::size_t max_rank = c.adapter.mode == AdapterMode::none ? c.backbone.width : c.adapter.rank;
  try {
    return generate_tasks(c.tasks, c.suite, c.backbone, max_rank, c.seeds(), c.effective_sampling(),
                          c.fewshot ? 1 : 0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Backbone build_model(const RunConfig& c) {
  const SeedPlan s = c.seeds();
  try {
    return Backbone::build(c.backbone, c.effective_adapter(), s.backbone, s.adapters);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace morekit
