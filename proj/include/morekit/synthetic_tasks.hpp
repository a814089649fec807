// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Teacher-student tasks with a controlled intrinsic rank. Each task's teacher
// is the frozen backbone with a rank-k update added at the perturbed sites;
// labels are the teacher's preferred label token at the last position.
//
// Token layout: [0, label_tokens) are label tokens, the next block holds one
// task-prefix token per task (position 0 of every input, as in text-to-text
// prefixes), and the rest is content drawn from each task's vocab range.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "morekit/backbone.hpp"
#include "morekit/balanced_sampler.hpp"

namespace morekit {

struct TaskSpec {
  std::string name;
  std::size_t intrinsic_rank = 1;
  std::size_t train_size = 1000;
  std::size_t heldout_size = 200;
  std::uint64_t teacher_seed = 0;
  /// Content token range [first, second); empty means "all content tokens".
  std::optional<std::pair<std::size_t, std::size_t>> vocab;
  /// Reuse another task's teacher and inputs verbatim (duplicate-task control).
  std::optional<std::string> duplicate_of;
};

enum class PerturbationBasis {
  /// Every task draws its own random rank-k directions.
  independent,
  /// Task k uses the first k directions of one suite-wide pool (nested).
  shared,
};

struct SuiteConfig {
  std::size_t label_tokens = 4;
  /// Singular value of each planted direction.
  double perturbation_scale = 1.0;
  std::vector<SiteKind> perturbed_sites{kSiteKinds.begin(), kSiteKinds.end()};
  PerturbationBasis basis = PerturbationBasis::independent;
};

/// Seeds for the independent random streams of one run.
struct SeedPlan {
  std::uint64_t backbone = 0;
  std::uint64_t adapters = 0;
  std::uint64_t sampling = 0;
  std::uint64_t data = 0;

  static SeedPlan from_run_seed(std::uint64_t seed);
};

/// m×d update of exact rank `rank` (zero matrix for rank 0), with every
/// nonzero singular value equal to `singular_value`.
Tensor planted_update(std::size_t m, std::size_t d, std::size_t rank, double singular_value,
                      Rng& rng);

/// Nested variant: the first `rank` directions of a pool seeded by `pool_rng`.
Tensor nested_update(std::size_t m, std::size_t d, std::size_t rank, std::size_t pool_size,
                     double singular_value, Rng& pool_rng);

/// Backbone with the task's planted updates applied to the perturbed sites.
Backbone build_teacher(const BackboneConfig& cfg, const SuiteConfig& suite, const TaskSpec& spec,
                       std::size_t max_rank, const SeedPlan& seeds);

/// Label token the model prefers at the last position, per example.
std::vector<std::size_t> predict_labels(Backbone& model, std::size_t task,
                                        const std::vector<std::vector<std::size_t>>& inputs,
                                        std::size_t label_tokens);

/// First token id used for task prefixes / content.
std::size_t prefix_token(const SuiteConfig& suite, std::size_t task);
std::size_t first_content_token(const SuiteConfig& suite, std::size_t num_prefixes);

/// Builds the registry (one dataset per spec). `extra_prefixes` reserves
/// prefix tokens for tasks registered later. Throws std::invalid_argument
/// when an intrinsic rank exceeds `max_rank` or the vocabulary is too small.
TaskRegistry generate_tasks(const std::vector<TaskSpec>& specs, const SuiteConfig& suite,
                            const BackboneConfig& cfg, std::size_t max_rank,
                            const SeedPlan& seeds,
                            SamplingScheme scheme = SamplingScheme::balanced,
                            std::size_t extra_prefixes = 0);

/// Dataset for one task with explicit prefix slot `task_index` and
/// `num_prefixes` prefix tokens reserved.
TaskDataset generate_task_data(const TaskSpec& spec, std::size_t task_index,
                               std::size_t num_prefixes, const SuiteConfig& suite,
                               const BackboneConfig& cfg, std::size_t max_rank,
                               const SeedPlan& seeds);

}  // namespace morekit
