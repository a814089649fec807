// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Training and evaluation loops over a task registry.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "morekit/backbone.hpp"
#include "morekit/balanced_sampler.hpp"
#include "morekit/objectives.hpp"

namespace morekit {

struct OptimConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  std::size_t batch_size = 32;
  std::size_t steps = 1000;
};

struct LossConfig {
  double lambda = kDefaultLambda;
  double tau = kDefaultTau;
  ContrastiveSign sign = ContrastiveSign::info_nce;
};

struct TrainOptions {
  OptimConfig optim;
  LossConfig loss;
  std::uint64_t sampling_seed = 0;
  /// Stamped into every metrics record.
  std::uint64_t run_seed = 0;
  std::size_t eval_every = 100;
  std::size_t log_every = 10;
  std::size_t label_tokens = 4;
  /// Replaces the registry's sampling weights when non-empty.
  std::vector<double> task_weights;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t task = 0;
  LossReport loss;
  double lr = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  std::vector<double> accuracy;
  double mean() const;
};

/// Append-only record of one run. `lines` is the JSON-lines metrics stream;
/// records carry a logical timestamp (the step) so replays are byte-identical.
struct RunMetrics {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<std::string> lines;
  std::string frozen_hash_before;
  std::string frozen_hash_after;
  /// Sampler RNG state after the last step.
  std::string sampler_state;

  const EvalRecord& final_eval() const { return evals.back(); }
};

/// Thrown when the loss becomes non-finite during training.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Fraction of held-out examples of each task whose predicted label token
/// matches the teacher label. Throws std::invalid_argument on an empty split.
std::vector<double> evaluate(const TaskRegistry& registry, Backbone& model,
                             std::size_t label_tokens);
double evaluate_task(const TaskEntry& task, Backbone& model, std::size_t label_tokens);

/// Loss of one homogeneous batch, built on graph `g`.
struct BatchLoss {
  ag::Var total;
  LossReport report;
};
BatchLoss batch_loss(ag::Graph& g, Backbone& model, const Batch& batch, const LossConfig& loss);

/// Runs AdamW with linear warm-up/decay over total_loss, drawing batches from
/// a BalancedSampler. Evaluates at step 0, every eval_every steps and at the end.
RunMetrics train(const TaskRegistry& registry, Backbone& model, const TrainOptions& options);

}  // namespace morekit
