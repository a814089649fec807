// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "morekit/ops.hpp"
#include "morekit/optimizer.hpp"

namespace morekit {

using ordered_json = nlohmann::ordered_json;

double EvalRecord::mean() const {
  if (accuracy.empty()) return 0.0;
  return std::accumulate(accuracy.begin(), accuracy.end(), 0.0) /
         static_cast<double>(accuracy.size());
}

double evaluate_task(const TaskEntry& task, Backbone& model, std::size_t label_tokens) {
  const auto& held = task.data.heldout;
  if (held.empty()) throw std::invalid_argument("evaluate: task '" + task.name + "' has no held-out split");
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::vector<std::size_t>> tokens;
  for (std::size_t start = 0; start < held.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, held.size() - start);
    tokens.clear();
    for (std::size_t i = 0; i < n; ++i) tokens.push_back(held[start + i].tokens);
    ag::Graph g(false);
    auto out = model.forward(g, tokens, task.id);
    const Tensor& p = out.probs.value();
    const std::size_t S = out.seq_len;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t col = b * S + (S - 1);
      std::size_t best = 0;
      for (std::size_t t = 1; t < label_tokens; ++t)
        if (p(t, col) > p(best, col)) best = t;
      if (best == held[start + b].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(held.size());
}

std::vector<double> evaluate(const TaskRegistry& registry, Backbone& model,
                             std::size_t label_tokens) {
  std::vector<double> acc;
  acc.reserve(registry.size());
  for (const auto& t : registry.tasks()) acc.push_back(evaluate_task(t, model, label_tokens));
  return acc;
}

BatchLoss batch_loss(ag::Graph& g, Backbone& model, const Batch& batch, const LossConfig& loss) {
  if (batch.examples.empty()) throw std::invalid_argument("batch_loss: empty batch");
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> labels;
  tokens.reserve(batch.examples.size());
  for (const Example* ex : batch.examples) {
    if (ex->task != batch.task) throw std::logic_error("batch_loss: batch is not task-homogeneous");
    tokens.push_back(ex->tokens);
    labels.push_back(ex->label);
  }
  auto out = model.forward(g, tokens, batch.task);
  const std::size_t S = out.seq_len;
  std::vector<std::size_t> cols(tokens.size());
  for (std::size_t b = 0; b < cols.size(); ++b) cols[b] = b * S + (S - 1);
  ag::Var gen = generation_loss(ag::gather_cols(out.probs, cols), labels);

  BatchLoss res;
  res.total = gen;
  double con_value = 0.0;
  if (loss.lambda != 0.0) {
    std::vector<ag::Var> terms;
    auto& sites = model.sites();
    for (std::size_t i = 0; i < sites.size(); ++i) {
      MoreLayer* m = sites[i].more();
      if (m == nullptr || !m->has_embeddings() || !out.pooled_inputs[i].valid()) continue;
      terms.push_back(contrastive_loss(out.pooled_inputs[i], batch.task, g.param(m->embeddings()),
                                       loss.tau, loss.sign));
    }
    if (!terms.empty()) {
      ag::Var acc = terms.front();
      for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
      ag::Var con = ag::scale(acc, 1.0 / static_cast<double>(terms.size()));
      con_value = con.value().item();
      res.total = total_loss(gen, con, loss.lambda);
    }
  }
  res.report = LossReport{gen.value().item(), con_value, res.total.value().item(), loss.lambda};
  return res;
}

namespace {

ordered_json eval_line(std::uint64_t seed, const EvalRecord& e) {
  ordered_json j;
  j["type"] = "eval";
  j["t"] = e.step;
  j["seed"] = seed;
  j["step"] = e.step;
  j["accuracy"] = e.accuracy;
  j["mean_accuracy"] = e.mean();
  return j;
}

}  // namespace

RunMetrics train(const TaskRegistry& registry, Backbone& model, const TrainOptions& options) {
  const auto& opt = options.optim;
  if (opt.batch_size == 0) throw std::invalid_argument("optim.batch_size: must be >= 1");
  if (!(opt.lr > 0.0)) throw std::invalid_argument("optim.lr: must be positive");
  if (options.eval_every == 0 || options.log_every == 0) {
    throw std::invalid_argument("eval_every/log_every: must be >= 1");
  }
  if (registry.size() != model.num_tasks() && model.mode() == AdapterMode::more) {
    throw std::invalid_argument("train: registry has " + std::to_string(registry.size()) +
                                " tasks but the model was built for " +
                                std::to_string(model.num_tasks()));
  }

  RunMetrics metrics;
  metrics.frozen_hash_before = model.frozen_hash();

  auto run_eval = [&](std::size_t step) {
    EvalRecord e{step, evaluate(registry, model, options.label_tokens)};
    metrics.lines.push_back(eval_line(options.run_seed, e).dump());
    metrics.evals.push_back(std::move(e));
  };
  run_eval(0);

  BalancedSampler sampler(registry, options.sampling_seed, options.task_weights);
  AdamW optimizer(model.trainable_parameters(), AdamWConfig{0.9, 0.999, 1e-8, opt.weight_decay});
  LinearSchedule schedule{opt.lr,
                          static_cast<std::size_t>(opt.warmup_fraction * static_cast<double>(opt.steps)),
                          opt.steps};

  for (std::size_t step = 0; step < opt.steps; ++step) {
    Batch batch = sampler.next_batch(opt.batch_size);
    StepRecord rec;
    rec.step = step + 1;
    rec.task = batch.task;
    rec.lr = schedule.at(step);
    try {
      ag::Graph g;
      BatchLoss bl = batch_loss(g, model, batch, options.loss);
      g.backward(bl.total);
      rec.loss = bl.report;
    } catch (const NumericalError& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step + 1) + ": " + e.what());
    }
    optimizer.step(rec.lr);

    if (rec.step % options.log_every == 0 || rec.step == opt.steps) {
      ordered_json j;
      j["type"] = "step";
      j["t"] = rec.step;
      j["seed"] = options.run_seed;
      j["step"] = rec.step;
      j["task"] = rec.task;
      j["gen_loss"] = rec.loss.gen_loss;
      j["con_loss"] = rec.loss.con_loss;
      j["total"] = rec.loss.total;
      j["lambda"] = rec.loss.lambda;
      j["lr"] = rec.lr;
      std::vector<std::size_t> ranks;
      for (const MoreLayer* m : model.more_layers()) ranks.push_back(m->last_selection()[batch.task]);
      if (!ranks.empty()) j["ranks"] = ranks;
      metrics.lines.push_back(j.dump());
    }
    metrics.steps.push_back(rec);
    if (rec.step % options.eval_every == 0 || rec.step == opt.steps) run_eval(rec.step);
  }

  metrics.sampler_state = sampler.rng_state();
  metrics.frozen_hash_after = model.frozen_hash();
  if (metrics.frozen_hash_after != metrics.frozen_hash_before) {
    throw std::logic_error("train: frozen backbone weights changed");
  }
  return metrics;
}

}  // namespace morekit
