// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "morekit/checkpoint.hpp"
#include "morekit/ops.hpp"

namespace morekit {

namespace {

double cosine(const Tensor& E, std::size_t row, const Tensor& x, std::size_t col) {
  double dot = 0.0, ne = 0.0, nx = 0.0;
  for (std::size_t j = 0; j < E.cols(); ++j) {
    dot += E(row, j) * x(j, col);
    ne += E(row, j) * E(row, j);
    nx += x(j, col) * x(j, col);
  }
  if (ne == 0.0 || nx == 0.0) throw NumericalError("similarity: zero vector");
  return dot / std::sqrt(ne * nx);
}

}  // namespace

std::vector<std::vector<double>> sample_similarities(Backbone& model, std::size_t num_tasks,
                                                     const std::vector<Example>& examples) {
  std::vector<std::vector<double>> sims(examples.size(), std::vector<double>(num_tasks, 0.0));
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, examples.size() - start);
    std::vector<std::vector<std::size_t>> tokens;
    for (std::size_t i = 0; i < n; ++i) tokens.push_back(examples[start + i].tokens);
    for (std::size_t c = 0; c < num_tasks; ++c) {
      ag::Graph g(false);
      auto out = model.forward(g, tokens, c);
      std::size_t used = 0;
      for (std::size_t s = 0; s < model.sites().size(); ++s) {
        MoreLayer* m = model.sites()[s].more();
        if (m == nullptr || !out.pooled_inputs[s].valid()) continue;
        const Tensor& pooled = out.pooled_inputs[s].value();
        for (std::size_t i = 0; i < n; ++i) sims[start + i][c] += cosine(m->embeddings().value, c, pooled, i);
        ++used;
      }
      if (used == 0) throw std::invalid_argument("similarity: model has no task embeddings");
      for (std::size_t i = 0; i < n; ++i) sims[start + i][c] /= static_cast<double>(used);
    }
  }
  return sims;
}

double retrieval_accuracy(Backbone& model, const TaskRegistry& registry, RetrievalRouting routing) {
  std::size_t hits = 0, total = 0;
  const std::size_t T = registry.size();
  for (const auto& task : registry.tasks()) {
    const auto& held = task.data.heldout;
    std::vector<std::vector<double>> sims;
    if (routing == RetrievalRouting::candidate) {
      sims = sample_similarities(model, T, held);
    } else {
      sims.assign(held.size(), std::vector<double>(T, 0.0));
      std::vector<std::vector<std::size_t>> tokens;
      for (const auto& ex : held) tokens.push_back(ex.tokens);
      ag::Graph g(false);
      auto out = model.forward(g, tokens, task.id);
      std::size_t used = 0;
      for (std::size_t s = 0; s < model.sites().size(); ++s) {
        MoreLayer* m = model.sites()[s].more();
        if (m == nullptr || !out.pooled_inputs[s].valid()) continue;
        for (std::size_t i = 0; i < held.size(); ++i)
          for (std::size_t c = 0; c < T; ++c)
            sims[i][c] += cosine(m->embeddings().value, c, out.pooled_inputs[s].value(), i);
        ++used;
      }
      if (used == 0) throw std::invalid_argument("retrieval_accuracy: model has no task embeddings");
    }
    for (const auto& row : sims) {
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hits += best == task.id;
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("retrieval_accuracy: no held-out examples");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double embedding_cosine(const Backbone& model, std::size_t a, std::size_t b) {
  double total = 0.0;
  std::size_t used = 0;
  for (const MoreLayer* m : model.more_layers()) {
    if (!m->has_embeddings()) continue;
    const Tensor& E = m->embeddings().value;
    if (a >= E.rows() || b >= E.rows()) throw std::out_of_range("embedding_cosine: task out of range");
    Tensor col({E.cols(), 1});
    for (std::size_t j = 0; j < E.cols(); ++j) col(j, 0) = E(b, j);
    total += cosine(E, a, col, 0);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("embedding_cosine: model has no task embeddings");
  return total / static_cast<double>(used);
}

std::vector<double> task_similarities(Backbone& model, std::size_t num_source_tasks,
                                      const std::vector<Example>& examples) {
  if (examples.empty()) throw std::invalid_argument("task_similarities: no examples");
  std::vector<std::vector<std::size_t>> tokens;
  for (const auto& ex : examples) tokens.push_back(ex.tokens);
  std::vector<double> sims(num_source_tasks, 0.0);
  for (std::size_t c = 0; c < num_source_tasks; ++c) {
    ag::Graph g(false);
    auto out = model.forward(g, tokens, c);
    std::size_t used = 0;
    for (std::size_t i = 0; i < model.sites().size(); ++i) {
      MoreLayer* m = model.sites()[i].more();
      if (m == nullptr || !out.pooled_inputs[i].valid()) continue;
      const Tensor rep = ag::mean(out.pooled_inputs[i], 1).value();  // h × 1
      const Tensor& E = m->embeddings().value;
      double dot = 0.0, ne = 0.0, nr = 0.0;
      for (std::size_t j = 0; j < E.cols(); ++j) {
        dot += E(c, j) * rep(j, 0);
        ne += E(c, j) * E(c, j);
        nr += rep(j, 0) * rep(j, 0);
      }
      if (ne == 0.0 || nr == 0.0) throw NumericalError("task_similarities: zero vector");
      sims[c] += dot / std::sqrt(ne * nr);
      ++used;
    }
    if (used == 0) throw std::invalid_argument("task_similarities: model has no MoRE layers");
    sims[c] /= static_cast<double>(used);
  }
  return sims;
}

FewShotResult few_shot_transfer(const Backbone& source, const RunConfig& config,
                                const FewShotConfig& fewshot, std::size_t k_shots,
                                std::uint64_t seed) {
  if (k_shots == 0) throw std::invalid_argument("fewshot: k_shots must be >= 1");
  if (source.mode() != AdapterMode::more) throw std::invalid_argument("fewshot: model has no MoRE layers");
  if (!config.fewshot) {
    throw ConfigError("fewshot: the source run's config has no fewshot section, so no prefix token "
                      "was reserved for the new task");
  }
  if (source.num_tasks() != config.tasks.size()) {
    throw CheckpointError("fewshot: model has " + std::to_string(source.num_tasks()) +
                          " tasks, config lists " + std::to_string(config.tasks.size()));
  }
  for (const MoreLayer* m : source.more_layers()) {
    if (m->mode() != RankMode::train_gated) {
      throw std::invalid_argument("fewshot: source model is frozen; transfer needs the gate");
    }
  }

  FewShotResult res;
  res.shots = k_shots;
  res.seed = seed;
  res.init = fewshot.init;

  // Source tasks are regenerated from the stored config; the new task takes
  // the reserved prefix slot right after them.
  RunConfig cfg = config;
  cfg.fewshot = fewshot;
  TaskRegistry registry = build_registry(cfg);
  const std::size_t T = registry.size();
  TaskSpec spec = fewshot.task;
  TaskDataset full;
  if (spec.duplicate_of) {
    std::size_t src = T;
    for (const auto& t : registry.tasks())
      if (t.name == *spec.duplicate_of) src = t.id;
    if (src == T) throw std::invalid_argument("fewshot.task.duplicate_of: unknown task");
    full = registry.task(src).data;
  } else {
    const std::size_t max_rank = config.adapter.rank;
    full = generate_task_data(spec, T, T + 1, cfg.suite, cfg.backbone, max_rank, cfg.seeds());
  }
  if (k_shots > full.train.size()) throw std::invalid_argument("fewshot: k_shots exceeds the task's training set");
  Rng shot_rng(derive_seed(seed, "shots"));
  std::shuffle(full.train.begin(), full.train.end(), shot_rng);
  full.train.resize(k_shots);
  for (auto& ex : full.train) ex.task = T;
  for (auto& ex : full.heldout) ex.task = T;

  Backbone model = source;
  const std::size_t sites = model.more_layers().size();
  std::vector<std::optional<Tensor>> rows(sites);
  if (fewshot.init == InitPolicy::copy_nearest) {
    res.similarities = task_similarities(model, T, full.train);
    const std::size_t best = static_cast<std::size_t>(
        std::max_element(res.similarities.begin(), res.similarities.end()) - res.similarities.begin());
    res.copied_from = best;
    auto layers = model.more_layers();
    for (std::size_t i = 0; i < sites; ++i) {
      const Tensor& E = layers[i]->embeddings().value;
      Tensor row({1, E.cols()});
      for (std::size_t j = 0; j < E.cols(); ++j) row(0, j) = E(best, j);
      rows[i] = std::move(row);
    }
  } else {
    rows.clear();
  }
  Rng init_rng(derive_seed(seed, "init"));
  model.add_task(rows, init_rng);
  registry.add(spec.name, std::move(full));
  res.new_task = T;

  TrainOptions opts = cfg.train_options();
  opts.optim.lr = fewshot.lr;
  opts.optim.steps = fewshot.steps;
  opts.optim.batch_size = std::min(opts.optim.batch_size, k_shots);
  opts.sampling_seed = derive_seed(seed, "sampling");
  opts.run_seed = seed;
  opts.eval_every = std::max<std::size_t>(1, fewshot.steps);
  opts.task_weights.assign(T + 1, 0.0);
  opts.task_weights[T] = 1.0;
  res.metrics = train(registry, model, opts);
  res.accuracy_before = res.metrics.evals.front().accuracy[T];
  res.accuracy_after = res.metrics.final_eval().accuracy[T];
  return res;
}

std::vector<FewShotResult> few_shot_sweep(const Backbone& source, const RunConfig& config,
                                          const FewShotConfig& fewshot) {
  std::vector<FewShotResult> out;
  for (std::size_t k : fewshot.shots)
    for (std::size_t s = 0; s < fewshot.seeds; ++s)
      out.push_back(few_shot_transfer(source, config, fewshot, k,
                                      derive_seed(derive_seed(config.seed, "fewshot", k), "seed", s)));
  return out;
}

}  // namespace morekit
