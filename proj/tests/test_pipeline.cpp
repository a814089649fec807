// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <filesystem>
#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "morekit/checkpoint.hpp"
#include "morekit/commands.hpp"
#include "morekit/embeddings_io.hpp"
#include "morekit/fewshot.hpp"
#include "morekit/param_audit.hpp"
#include "morekit/run_config.hpp"
#include "morekit/trainer.hpp"
#include "test_util.hpp"

namespace morekit {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig tiny_config(std::uint64_t seed = 1) {
  RunConfig c;
  c.seed = seed;
  c.adapter.mode = AdapterMode::more;
  c.adapter.rank = 4;
  c.adapter.more.gate_init_std = 0.1;
  c.optim.lr = 1e-2;
  c.optim.batch_size = 8;
  c.optim.steps = 20;
  c.eval_every = 10;
  c.log_every = 5;
  c.suite.basis = PerturbationBasis::shared;
  c.suite.perturbation_scale = 2.0;
  const std::size_t ranks[] = {1, 2, 4};
  const std::size_t sizes[] = {96, 48, 24};
  for (std::size_t i = 0; i < 3; ++i) {
    TaskSpec t;
    t.name = "task" + std::to_string(i);
    t.intrinsic_rank = ranks[i];
    t.train_size = sizes[i];
    t.heldout_size = 32;
    t.teacher_seed = i;
    c.tasks.push_back(t);
  }
  c.adapter.num_tasks = c.tasks.size();
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

fs::path write_config(const RunConfig& c, const fs::path& dir) {
  const fs::path p = dir / "config.json";
  write_file(p, to_json(c).dump(2));
  return p;
}

Tensor outputs(Backbone& m, const TaskRegistry& reg, std::size_t task) {
  std::vector<std::vector<std::size_t>> tokens;
  for (const auto& ex : reg.task(task).data.heldout) tokens.push_back(ex.tokens);
  ag::Graph g(false);
  return m.forward(g, tokens, task).probs.value();
}

// ---- trainer ----

TEST(Trainer, ZeroStepsOnlyEvaluates) {
  RunConfig c = tiny_config();
  c.optim.steps = 0;
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  Backbone before = m;
  const RunMetrics r = train(reg, m, c.train_options());
  EXPECT_EQ(r.evals.size(), 1u);
  EXPECT_TRUE(r.steps.empty());
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    EXPECT_EQ(m.parameters()[i]->value, before.parameters()[i]->value);
}

TEST(Trainer, ReplayIsIdentical) {
  const RunConfig c = tiny_config(4);
  TaskRegistry reg = build_registry(c);
  Backbone a = build_model(c), b = build_model(c);
  const RunMetrics ra = train(reg, a, c.train_options());
  const RunMetrics rb = train(reg, b, c.train_options());
  EXPECT_EQ(ra.lines, rb.lines);
  EXPECT_EQ(ra.sampler_state, rb.sampler_state);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i]->value, b.parameters()[i]->value);
}

TEST(Trainer, MetricsLinesCarryLogicalTime) {
  const RunConfig c = tiny_config();
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  const RunMetrics r = train(reg, m, c.train_options());
  std::size_t steps = 0, evals = 0;
  for (const auto& line : r.lines) {
    const json j = json::parse(line);
    EXPECT_EQ(j["t"], j["step"]);
    EXPECT_EQ(j["seed"], c.seed);
    if (j["type"] == "step") {
      ++steps;
      EXPECT_EQ(j["ranks"].size(), 12u);
      EXPECT_NEAR(j["total"].get<double>(),
                  j["gen_loss"].get<double>() + 0.1 * j["con_loss"].get<double>(), 1e-12);
    } else {
      ++evals;
      for (double a : j["accuracy"]) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
      }
    }
  }
  EXPECT_EQ(steps, 4u);  // steps 5, 10, 15, 20
  EXPECT_EQ(evals, 3u);  // steps 0, 10, 20
}

TEST(Trainer, TeacherScoresPerfectlyOnItsOwnLabels) {
  const RunConfig c = tiny_config();
  const TaskRegistry reg = build_registry(c);
  for (std::size_t t = 0; t < reg.size(); ++t) {
    Backbone teacher = build_teacher(c.backbone, c.suite, c.tasks[t], c.adapter.rank, c.seeds());
    EXPECT_EQ(evaluate_task(reg.task(t), teacher, c.suite.label_tokens), 1.0);
  }
}

TEST(Trainer, UntrainedAccuracyIsBackboneAgreement) {
  const RunConfig c = tiny_config();
  const TaskRegistry reg = build_registry(c);
  Backbone model = build_model(c);
  Backbone bare = Backbone::build(c.backbone, AdapterSettings{}, c.seeds().backbone, 0);
  for (std::size_t t = 0; t < reg.size(); ++t) {
    const Tensor p = outputs(bare, reg, t);
    const auto& held = reg.task(t).data.heldout;
    const std::size_t S = held[0].tokens.size();
    std::size_t agree = 0;
    for (std::size_t i = 0; i < held.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c.suite.label_tokens; ++k)
        if (p(k, i * S + S - 1) > p(best, i * S + S - 1)) best = k;
      agree += best == held[i].label;
    }
    EXPECT_DOUBLE_EQ(evaluate_task(reg.task(t), model, c.suite.label_tokens),
                     static_cast<double>(agree) / held.size());
  }
}

TEST(Trainer, LossDecreasesOnOneTask) {
  RunConfig c = tiny_config();
  c.tasks.resize(1);
  c.tasks[0].train_size = 200;
  c.adapter.num_tasks = 1;
  c.optim.steps = 150;
  c.log_every = 1;
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  const RunMetrics r = train(reg, m, c.train_options());
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += r.steps[i].loss.gen_loss;
    last += r.steps[r.steps.size() - 1 - i].loss.gen_loss;
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, DivergenceIsReported) {
  RunConfig c = tiny_config();
  c.optim.lr = 1e12;
  c.optim.warmup_fraction = 0.0;
  c.optim.steps = 50;
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  EXPECT_THROW(train(reg, m, c.train_options()), DivergenceError);
}

TEST(Trainer, RejectsBadOptions) {
  RunConfig c = tiny_config();
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  TrainOptions o = c.train_options();
  o.optim.batch_size = 0;
  EXPECT_THROW(train(reg, m, o), std::invalid_argument);
  o = c.train_options();
  o.eval_every = 0;
  EXPECT_THROW(train(reg, m, o), std::invalid_argument);
  TaskDataset empty;
  empty.train.push_back({{0}, 0, 0});
  TaskRegistry bad;
  bad.add("x", empty);
  EXPECT_THROW(evaluate_task(bad.task(0), m, 4), std::invalid_argument);
}

// ---- config ----

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = tiny_config(9);
  c.ablations = {Ablation::soft_selection, Ablation::random_sample};
  FewShotConfig f;
  f.task.name = "new";
  f.task.intrinsic_rank = 2;
  f.task.duplicate_of = "task1";
  c.fewshot = f;
  const auto j = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(json::parse(j.dump()))).dump(), j.dump());
}

TEST(RunConfig, ErrorsNameTheField) {
  json j = json::parse(to_json(tiny_config()).dump());
  auto message = [](const json& x) {
    try {
      parse_run_config(x);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  json unknown = j;
  unknown["optim"]["learning_rate"] = 1.0;
  EXPECT_NE(message(unknown).find("optim.learning_rate"), std::string::npos) << message(unknown);
  json missing = j;
  missing["tasks"][2].erase("intrinsic_rank");
  EXPECT_NE(message(missing).find("tasks[2].intrinsic_rank"), std::string::npos) << message(missing);
  json wrong = j;
  wrong["optim"]["steps"] = "many";
  EXPECT_NE(message(wrong).find("optim.steps"), std::string::npos) << message(wrong);
  json no_backbone = j;
  no_backbone.erase("backbone");
  EXPECT_NE(message(no_backbone).find("backbone"), std::string::npos);
  json bad_ablation = j;
  bad_ablation["ablations"] = {"no_such_thing"};
  EXPECT_NE(message(bad_ablation), "no error");
}

TEST(RunConfig, AblationsChangeEffectiveSettings) {
  RunConfig c = tiny_config();
  c.ablations = {Ablation::no_contrastive, Ablation::disable_ste, Ablation::soft_selection,
                 Ablation::random_sample, Ablation::no_task_embeddings,
                 Ablation::disable_linear_scaling, Ablation::literal_contrastive_sign};
  EXPECT_EQ(c.effective_loss().lambda, 0.0);
  EXPECT_EQ(c.effective_loss().sign, ContrastiveSign::literal);
  const AdapterSettings a = c.effective_adapter();
  EXPECT_FALSE(a.more.ste);
  EXPECT_TRUE(a.more.soft_selection);
  EXPECT_FALSE(a.more.task_embeddings);
  EXPECT_FALSE(a.more.linear_scaling);
  EXPECT_EQ(c.effective_sampling(), SamplingScheme::proportional);
  EXPECT_EQ(tiny_config().effective_sampling(), SamplingScheme::balanced);
}

// ---- checkpoint ----

TEST(Checkpoint, RoundTripPreservesOutputs) {
  const RunConfig c = tiny_config();
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  const RunMetrics r = train(reg, m, c.train_options());
  const fs::path dir = testing::scratch_dir("ckpt_roundtrip");
  save_checkpoint(dir, m, c, r.sampler_state);
  LoadedCheckpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.sampler_state, r.sampler_state);
  EXPECT_EQ(to_json(ck.config)["tasks"], to_json(c)["tasks"]);
  for (std::size_t t = 0; t < reg.size(); ++t) EXPECT_EQ(outputs(ck.model, reg, t), outputs(m, reg, t));
  EXPECT_EQ(ck.model.frozen_hash(), m.frozen_hash());
}

TEST(Checkpoint, FrozenMappingSurvivesReload) {
  const RunConfig c = tiny_config();
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  train(reg, m, c.train_options());
  m.freeze_mapping();
  const fs::path dir = testing::scratch_dir("ckpt_frozen");
  save_checkpoint(dir, m, c, "");
  LoadedCheckpoint ck = load_checkpoint(dir);
  for (std::size_t i = 0; i < m.more_layers().size(); ++i) {
    EXPECT_EQ(ck.model.more_layers()[i]->mode(), RankMode::frozen_mapping);
    EXPECT_EQ(ck.model.more_layers()[i]->frozen_map(), m.more_layers()[i]->frozen_map());
  }
  for (std::size_t t = 0; t < reg.size(); ++t) EXPECT_EQ(outputs(ck.model, reg, t), outputs(m, reg, t));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const RunConfig c = tiny_config();
  Backbone m = build_model(c);
  const fs::path dir = testing::scratch_dir("ckpt_corrupt");
  save_checkpoint(dir, m, c, "");
  const std::string blob = read_file(dir / kWeightsFile);
  const std::string manifest = read_file(dir / kManifestFile);

  std::string flipped = blob;
  flipped[flipped.size() / 2] ^= 0x01;
  write_file(dir / kWeightsFile, flipped);
  EXPECT_THROW(load_checkpoint(dir), CheckpointError);
  write_file(dir / kWeightsFile, blob.substr(0, blob.size() - 8));
  EXPECT_THROW(load_checkpoint(dir), CheckpointError);
  write_file(dir / kWeightsFile, blob);

  json j = json::parse(manifest);
  j["params"][0]["shape"][0] = 999;
  write_file(dir / kManifestFile, j.dump());
  EXPECT_THROW(load_checkpoint(dir), CheckpointError);
  write_file(dir / kManifestFile, "{ not json");
  EXPECT_ANY_THROW(load_checkpoint(dir));
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);

  write_file(dir / kManifestFile, manifest);
  EXPECT_NO_THROW(load_checkpoint(dir));
}

// ---- embeddings CSV ----

TEST(EmbeddingsCsv, RoundTripIsExact) {
  const RunConfig c = tiny_config();
  Backbone m = build_model(c);
  const auto rows = collect_embeddings(m);
  ASSERT_EQ(rows.size(), 12u * 3);
  const fs::path p = testing::scratch_dir("csv") / "e.csv";
  export_embeddings(m, p);
  const std::string text = read_file(p);
  EXPECT_EQ(text.substr(0, text.find('\n')).substr(0, 20), "task_id,layer,site,e");
  const auto back = import_embeddings(p);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].task, rows[i].task);
    EXPECT_EQ(back[i].layer, rows[i].layer);
    EXPECT_EQ(back[i].site, rows[i].site);
    EXPECT_EQ(back[i].values, rows[i].values);
  }
  AdapterSettings none;
  Backbone bare = Backbone::build(c.backbone, none, 1, 1);
  EXPECT_THROW(embeddings_csv(bare), std::invalid_argument);
  EXPECT_THROW(export_embeddings(m, "/nonexistent_dir/x/e.csv"), IoError);
}

// ---- CLI ----

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Cli r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

TEST(Cli, TrainWritesArtifactsAndEvalMatches) {
  const fs::path dir = testing::scratch_dir("cli_train");
  const fs::path cfg = write_config(tiny_config(), dir);
  const Cli t = cli({"train", "--config", cfg.string(), "--out", (dir / "run").string()});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  for (const char* f : {kMetricsFile, kAllocationFile, kEmbeddingsFile})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  const json alloc = json::parse(read_file(dir / "run" / kAllocationFile));
  EXPECT_EQ(alloc["counts"].size(), 3u);

  const Cli e = cli({"eval", "--checkpoint", (dir / "run" / kCheckpointDir).string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  const json acc = json::parse(e.out);
  std::string last_eval;
  std::istringstream lines(read_file(dir / "run" / kMetricsFile));
  for (std::string l; std::getline(lines, l);)
    if (json::parse(l)["type"] == "eval") last_eval = l;
  const json logged = json::parse(last_eval)["accuracy"];
  ASSERT_EQ(acc["tasks"].size(), logged.size());
  for (std::size_t t = 0; t < logged.size(); ++t) EXPECT_EQ(acc["tasks"][t]["accuracy"], logged[t]);

  const Cli rep = cli({"report", (dir / "run").string()});
  ASSERT_EQ(rep.code, kExitOk) << rep.err;
  EXPECT_EQ(json::parse(rep.out)["runs"].size(), 1u);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = testing::scratch_dir("cli_codes");
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"train"}).code, kExitConfig);
  EXPECT_EQ(cli({"train", "--config", (dir / "missing.json").string()}).code, kExitIo);
  write_file(dir / "broken.json", "{\"seed\": ");
  EXPECT_EQ(cli({"train", "--config", (dir / "broken.json").string()}).code, kExitConfig);
  json j = json::parse(to_json(tiny_config()).dump());
  j["surprise"] = 1;
  write_file(dir / "unknown.json", j.dump());
  const Cli u = cli({"train", "--config", (dir / "unknown.json").string()});
  EXPECT_EQ(u.code, kExitConfig);
  EXPECT_NE(u.err.find("surprise"), std::string::npos);
  const fs::path cfg = write_config(tiny_config(), dir);
  EXPECT_EQ(cli({"train", "--config", cfg.string(), "--ablation", "bogus"}).code, kExitConfig);
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "nope").string()}).code, kExitIo);

  RunConfig hot = tiny_config();
  hot.optim.lr = 1e12;
  hot.optim.warmup_fraction = 0.0;
  hot.optim.steps = 50;
  hot.output_dir = (dir / "hot").string();
  const fs::path hot_cfg = dir / "hot.json";
  write_file(hot_cfg, to_json(hot).dump());
  EXPECT_EQ(cli({"train", "--config", hot_cfg.string()}).code, kExitNumerical);
}

TEST(Cli, AuditReportsExactBudget) {
  const fs::path dir = testing::scratch_dir("cli_audit");
  const fs::path cfg = write_config(tiny_config(), dir);
  const Cli a = cli({"audit", "--config", cfg.string()});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  const json j = json::parse(a.out);
  EXPECT_EQ(j["status"], "exact");
  EXPECT_EQ(j["expected"], 6 * 2 * 4 * 32 + 6 * 2 * 16 * (4 + 3));
  EXPECT_EQ(cli({"audit"}).code, kExitConfig);
}

TEST(Cli, FreezeKeepsOutputsAndDropsParameters) {
  const fs::path dir = testing::scratch_dir("cli_freeze");
  const RunConfig c = tiny_config();
  const fs::path cfg = write_config(c, dir);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out", (dir / "run").string()}).code, kExitOk);
  const fs::path ck = dir / "run" / kCheckpointDir;
  const Cli before = cli({"eval", "--checkpoint", ck.string()});
  LoadedCheckpoint gated = load_checkpoint(ck);
  const Cli f = cli({"freeze", "--checkpoint", ck.string(), "--out", (dir / "frozen").string()});
  ASSERT_EQ(f.code, kExitOk) << f.err;
  const Cli after = cli({"eval", "--checkpoint", (dir / "frozen").string()});
  EXPECT_EQ(before.out, after.out);
  LoadedCheckpoint frozen = load_checkpoint(dir / "frozen");
  const TaskRegistry reg = build_registry(c);
  for (std::size_t t = 0; t < reg.size(); ++t)
    EXPECT_EQ(outputs(frozen.model, reg, t), outputs(gated.model, reg, t));
  const json a = json::parse(cli({"audit", "--checkpoint", (dir / "frozen").string()}).out);
  EXPECT_EQ(a["effective_inference"], 6 * 2 * 4 * 32);
}

TEST(Cli, ExportEmbeddings) {
  const fs::path dir = testing::scratch_dir("cli_export");
  const fs::path cfg = write_config(tiny_config(), dir);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out", (dir / "run").string()}).code, kExitOk);
  const Cli e = cli({"export-embeddings", "--checkpoint", (dir / "run" / kCheckpointDir).string(),
                     "--out", (dir / "e.csv").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_EQ(json::parse(e.out)["rows"], 36);
  EXPECT_EQ(read_file(dir / "e.csv"), read_file(dir / "run" / kEmbeddingsFile));
}

TEST(Cli, SeedFlagOverridesConfig) {
  const fs::path dir = testing::scratch_dir("cli_seed");
  const fs::path cfg = write_config(tiny_config(1), dir);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--seed", "2", "--out", (dir / "a").string()}).code, 0);
  std::istringstream lines(read_file(dir / "a" / kMetricsFile));
  std::string first;
  std::getline(lines, first);
  EXPECT_EQ(json::parse(first)["seed"], 2);
}

// ---- few-shot ----

RunConfig fewshot_config(InitPolicy init, std::size_t steps) {
  RunConfig c = tiny_config();
  FewShotConfig f;
  f.task.name = "copy_of_task1";
  f.task.duplicate_of = "task1";
  f.task.intrinsic_rank = 2;
  f.shots = {4, 8};
  f.seeds = 2;
  f.steps = steps;
  f.init = init;
  c.fewshot = f;
  return c;
}

TEST(FewShot, CopiesRowsOfMostSimilarTask) {
  const RunConfig c = fewshot_config(InitPolicy::copy_nearest, 5);
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  train(reg, m, c.train_options());
  const FewShotResult r = few_shot_transfer(m, c, *c.fewshot, 4, 11);
  ASSERT_TRUE(r.copied_from.has_value());
  EXPECT_EQ(r.new_task, 3u);
  ASSERT_EQ(r.similarities.size(), 3u);
  EXPECT_EQ(*r.copied_from, static_cast<std::size_t>(std::max_element(r.similarities.begin(),
                                                                      r.similarities.end()) -
                                                     r.similarities.begin()));
  const FewShotResult k = few_shot_transfer(m, fewshot_config(InitPolicy::kaiming, 5), 
                                            *fewshot_config(InitPolicy::kaiming, 5).fewshot, 4, 11);
  EXPECT_FALSE(k.copied_from.has_value());
}

TEST(FewShot, ZeroStepsLeavesSourceBehaviour) {
  RunConfig c = fewshot_config(InitPolicy::copy_nearest, 0);
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  train(reg, m, c.train_options());
  const FewShotResult r = few_shot_transfer(m, c, *c.fewshot, 4, 3);
  EXPECT_EQ(r.accuracy_before, r.accuracy_after);
  // The new task is a copy of task1; with its embedding copied from task j it
  // behaves exactly like task j on the same inputs.
  Backbone grown = m;
  std::vector<std::optional<Tensor>> rows;
  for (MoreLayer* l : grown.more_layers()) {
    Tensor row({1, l->embeddings().value.cols()});
    for (std::size_t j = 0; j < row.cols(); ++j) row(0, j) = l->embeddings().value(*r.copied_from, j);
    rows.push_back(row);
  }
  Rng rng(0);
  grown.add_task(rows, rng);
  std::vector<std::vector<std::size_t>> tokens;
  for (const auto& ex : reg.task(1).data.heldout) tokens.push_back(ex.tokens);
  ag::Graph g1(false), g2(false);
  EXPECT_EQ(grown.forward(g1, tokens, 3).probs.value(),
            m.forward(g2, tokens, *r.copied_from).probs.value());
}

TEST(FewShot, CliWritesOneFilePerShotSetting) {
  const fs::path dir = testing::scratch_dir("cli_fewshot");
  const fs::path cfg = write_config(fewshot_config(InitPolicy::copy_nearest, 3), dir);
  ASSERT_EQ(cli({"train", "--config", cfg.string(), "--out", (dir / "run").string()}).code, kExitOk);
  const Cli f = cli({"fewshot", "--checkpoint", (dir / "run" / kCheckpointDir).string(), "--out",
                     (dir / "fs").string()});
  ASSERT_EQ(f.code, kExitOk) << f.err;
  for (int k : {4, 8}) {
    const fs::path p = dir / "fs" / ("fewshot_k" + std::to_string(k) + ".jsonl");
    ASSERT_TRUE(fs::exists(p));
    std::istringstream lines(read_file(p));
    std::size_t runs = 0;
    json mean;
    for (std::string l; std::getline(lines, l);) {
      json j = json::parse(l);
      if (j["type"] == "fewshot_run") ++runs;
      else mean = j;
    }
    EXPECT_EQ(runs, 2u);
    EXPECT_EQ(mean["shots"], k);
  }
}

TEST(Retrieval, MatchesDirectRecount) {
  const RunConfig c = tiny_config();
  TaskRegistry reg = build_registry(c);
  Backbone m = build_model(c);
  train(reg, m, c.train_options());
  std::size_t own_hits = 0, cand_hits = 0, total = 0;
  for (const auto& task : reg.tasks()) {
    const auto cand = sample_similarities(m, reg.size(), task.data.heldout);
    for (std::size_t i = 0; i < task.data.heldout.size(); ++i) {
      std::vector<std::vector<std::size_t>> one{task.data.heldout[i].tokens};
      ag::Graph g(false);
      auto out = m.forward(g, one, task.id);
      Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(reg.size()));
      for (std::size_t s = 0; s < m.sites().size(); ++s) {
        const Tensor& e = m.sites()[s].more()->embeddings().value;
        const Tensor& x = out.pooled_inputs[s].value();
        Eigen::VectorXd xv(static_cast<Eigen::Index>(x.rows()));
        for (std::size_t j = 0; j < x.rows(); ++j) xv(static_cast<Eigen::Index>(j)) = x(j, 0);
        for (std::size_t t = 0; t < reg.size(); ++t) {
          Eigen::VectorXd ev(static_cast<Eigen::Index>(e.cols()));
          for (std::size_t j = 0; j < e.cols(); ++j) ev(static_cast<Eigen::Index>(j)) = e(t, j);
          score(static_cast<Eigen::Index>(t)) += ev.dot(xv) / (ev.norm() * xv.norm());
        }
      }
      Eigen::Index best;
      score.maxCoeff(&best);
      own_hits += static_cast<std::size_t>(best) == task.id;
      const auto& row = cand[i];
      cand_hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == task.id;
      ++total;
    }
  }
  EXPECT_DOUBLE_EQ(retrieval_accuracy(m, reg), static_cast<double>(own_hits) / total);
  EXPECT_DOUBLE_EQ(retrieval_accuracy(m, reg, RetrievalRouting::candidate),
                   static_cast<double>(cand_hits) / total);
}

TEST(Retrieval, DuplicateRowsHaveUnitCosine) {
  const RunConfig c = tiny_config();
  Backbone m = build_model(c);
  for (MoreLayer* l : m.more_layers())
    for (std::size_t j = 0; j < l->embeddings().value.cols(); ++j)
      l->embeddings().value(2, j) = 3.0 * l->embeddings().value(0, j);
  EXPECT_NEAR(embedding_cosine(m, 0, 2), 1.0, 1e-12);
  EXPECT_LT(embedding_cosine(m, 0, 1), 0.9);
}

TEST(FewShot, Errors) {
  const RunConfig plain = tiny_config();
  Backbone m = build_model(plain);
  const RunConfig c = fewshot_config(InitPolicy::kaiming, 1);
  EXPECT_THROW(few_shot_transfer(m, plain, *c.fewshot, 4, 0), ConfigError);
  Backbone mc = build_model(c);
  EXPECT_THROW(few_shot_transfer(mc, c, *c.fewshot, 0, 0), std::invalid_argument);
  mc.freeze_mapping();
  EXPECT_THROW(few_shot_transfer(mc, c, *c.fewshot, 4, 0), std::invalid_argument);
}

}  // namespace
}  // namespace morekit
