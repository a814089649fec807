// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Task registry and dataset-size-aware sampling of task-homogeneous batches.
// Balanced weights are a softmax over dataset-size proportions:
//   phi_t = exp(|D_t| / Σ_i |D_i|) / Z
// which is flatter than proportional sampling and so up-weights small tasks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "morekit/rng.hpp"

namespace morekit {

struct Example {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
  std::size_t task = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

struct TaskDataset {
  std::vector<Example> train;
  std::vector<Example> heldout;
};

enum class SamplingScheme {
  balanced,      ///< softmax over size proportions (default)
  proportional,  ///< phi_t ∝ |D_t| (the random-sample ablation)
  inverse_size,  ///< phi_t ∝ 1/|D_t|
};

/// Normalized sampling weights for the given dataset sizes.
/// Throws std::invalid_argument on an empty list or a zero size.
std::vector<double> compute_weights(std::span<const std::size_t> sizes,
                                    SamplingScheme scheme = SamplingScheme::balanced);

struct TaskEntry {
  std::size_t id = 0;
  std::string name;
  TaskDataset data;
  std::size_t size() const { return data.train.size(); }
};

class TaskRegistry {
 public:
  explicit TaskRegistry(SamplingScheme scheme = SamplingScheme::balanced) : scheme_(scheme) {}

  /// Registers a task under the next id and recomputes the weights.
  std::size_t add(std::string name, TaskDataset data);
  void remove_last();

  std::size_t size() const { return tasks_.size(); }
  bool empty() const { return tasks_.empty(); }
  const TaskEntry& task(std::size_t id) const { return tasks_.at(id); }
  TaskEntry& task(std::size_t id) { return tasks_.at(id); }
  const std::vector<TaskEntry>& tasks() const { return tasks_; }
  const std::vector<double>& weights() const { return weights_; }
  SamplingScheme scheme() const { return scheme_; }
  void set_scheme(SamplingScheme s);

 private:
  void recompute();

  SamplingScheme scheme_;
  std::vector<TaskEntry> tasks_;
  std::vector<double> weights_;
};

struct Batch {
  std::size_t task = 0;
  std::vector<const Example*> examples;
};

/// Draws task ~ phi, then `batch_size` training examples of that task
/// uniformly with replacement. Holds a reference to the registry.
/// Non-empty `task_weights` replace the registry weights (one per task).
class BalancedSampler {
 public:
  BalancedSampler(const TaskRegistry& registry, std::uint64_t seed,
                  std::vector<double> task_weights = {});

  Batch next_batch(std::size_t batch_size);

  std::string rng_state() const;
  void set_rng_state(const std::string& state);

 private:
  const TaskRegistry& registry_;
  Rng rng_;
  std::vector<double> override_;
};

}  // namespace morekit
