// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Few-shot transfer: register one new task on a trained MoRE model, seed its
// embedding rows, fine-tune on k examples and measure held-out accuracy.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "morekit/backbone.hpp"
#include "morekit/run_config.hpp"
#include "morekit/trainer.hpp"

namespace morekit {

/// For each example and each task c: mean over MoRE sites of
/// cos(E_c, pooled site input), with the example routed as task c.
std::vector<std::vector<double>> sample_similarities(Backbone& model, std::size_t num_tasks,
                                                     const std::vector<Example>& examples);

enum class RetrievalRouting {
  /// Representations come from the forward pass under the example's own task,
  /// the same h_i the contrastive loss sees.
  own_task,
  /// The example is routed as task c when scored against E_c (task unknown).
  candidate,
};

/// Fraction of held-out examples whose most similar task embedding (mean
/// cosine over MoRE sites) is their own task's.
double retrieval_accuracy(Backbone& model, const TaskRegistry& registry,
                          RetrievalRouting routing = RetrievalRouting::own_task);

/// Mean over MoRE sites of cos(E_a, E_b).
double embedding_cosine(const Backbone& model, std::size_t a, std::size_t b);

/// Mean over MoRE sites of cos(E_c, mean pooled input) for each source task
/// c, with the new examples routed as task c.
std::vector<double> task_similarities(Backbone& model, std::size_t num_source_tasks,
                                      const std::vector<Example>& examples);

struct FewShotResult {
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  InitPolicy init = InitPolicy::kaiming;
  std::size_t new_task = 0;
  /// Source task whose rows were copied (copy_nearest only).
  std::optional<std::size_t> copied_from;
  std::vector<double> similarities;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  RunMetrics metrics;
};

/// `source` is left untouched; the transfer runs on a copy.
/// Throws std::invalid_argument for k_shots == 0 or a non-MoRE model and
/// CheckpointError when the model does not match `config`.
FewShotResult few_shot_transfer(const Backbone& source, const RunConfig& config,
                                const FewShotConfig& fewshot, std::size_t k_shots,
                                std::uint64_t seed);

/// Runs every shot setting over `fewshot.seeds` seeds. Result i of shot
/// setting j is at index j * seeds + i.
std::vector<FewShotResult> few_shot_sweep(const Backbone& source, const RunConfig& config,
                                          const FewShotConfig& fewshot);

}  // namespace morekit
