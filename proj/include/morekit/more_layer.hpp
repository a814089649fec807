// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Mixture of rank experts over a single LoRA adapter. Expert k is the rank-k
// prefix (A[:k, :], B[:, :k]); a per-task gate picks one expert per task:
//
//   p_t  = softmax(W_g·e_t + b_g)
//   r_t  = 1 + argmax(p_t)                       (ties → lowest rank)
//   m_t  = (p_t + sg[one_hot(p_t) − p_t])[r_t−1]  (forward value exactly 1)
//   h    = W0·x + m_t·(r_t/|T|)·B_t·A_t·x

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "morekit/lora_adapter.hpp"
#include "morekit/rng.hpp"

namespace morekit {

struct MoreOptions {
  bool linear_scaling = true;
  /// p-weighted mixture of every rank prefix instead of the argmax expert.
  bool soft_selection = false;
  /// false detaches the gate from the loss (no gradient reaches W_g, b_g, e_t).
  bool ste = true;
  /// false drops the embedding table; the gate then sees only b_g.
  bool task_embeddings = true;
  /// Standard deviation of the initial W_g entries (b_g starts at zero).
  double gate_init_std = 0.0;
};

enum class RankMode { train_gated, frozen_mapping };

/// Multiplier node for the selected expert: forward value 1.0, gradient wrt p
/// routed as identity to entry rank−1. Throws std::invalid_argument when
/// `rank` is not 1 + argmax(p).
ag::Var ste_select(ag::Var p, std::size_t rank);

/// 1 + argmax with ties going to the lowest index.
std::size_t argmax_rank(std::span<const double> p);

class MoreLayer {
 public:
  /// `scaling_tasks` is the |T| used in the r_t/|T| factor; 0 means
  /// `num_tasks`. It stays fixed when tasks are added later.
  MoreLayer(LoraAdapter adapter, std::size_t num_tasks, std::size_t embed_dim, std::uint64_t seed,
            MoreOptions options = {}, std::size_t scaling_tasks = 0);

  struct GateResult {
    ag::Var probs;
    std::size_t rank = 0;
  };

  GateResult gate_forward(ag::Graph& g, std::size_t task);
  /// Gate distribution for `task` computed outside any graph.
  Tensor gate_probabilities(std::size_t task) const;
  /// Rank that a forward pass for `task` would use right now.
  std::size_t current_rank(std::size_t task) const;

  ag::Var forward(ag::Graph& g, ag::Var x, std::size_t task);

  /// Precomputes r_t for every task and bypasses the gate from now on.
  void freeze_mapping();
  /// Restores a stored mapping (checkpoint load). Entries must lie in [1, r].
  void set_frozen_mapping(std::vector<std::size_t> mapping);
  RankMode mode() const { return mode_; }
  const std::vector<std::size_t>& frozen_map() const { return frozen_map_; }

  /// Appends an embedding row for a new task (Kaiming when `row` is empty).
  void add_task(std::optional<Tensor> row, Rng& rng);

  std::size_t num_tasks() const { return num_tasks_; }
  std::size_t scaling_tasks() const { return scaling_tasks_; }
  std::size_t max_rank() const { return adapter_.rank(); }
  std::size_t embed_dim() const { return embed_dim_; }
  const MoreOptions& options() const { return options_; }
  void set_options(const MoreOptions& o) { options_ = o; }
  bool has_embeddings() const { return options_.task_embeddings; }

  LoraAdapter& adapter() { return adapter_; }
  const LoraAdapter& adapter() const { return adapter_; }
  /// T×h table; e_t is row t.
  ag::Parameter& embeddings() { return embeddings_; }
  const ag::Parameter& embeddings() const { return embeddings_; }
  ag::Parameter& gate_weight() { return gate_w_; }
  ag::Parameter& gate_bias() { return gate_b_; }
  const ag::Parameter& gate_weight() const { return gate_w_; }
  const ag::Parameter& gate_bias() const { return gate_b_; }

  /// Rank chosen by the latest train_gated forward for each task (0 = none).
  const std::vector<std::size_t>& last_selection() const { return last_rank_; }
  /// selection_counts()[t][k-1]: train_gated forwards of task t that used rank k.
  const std::vector<std::vector<std::size_t>>& selection_counts() const { return counts_; }

 private:
  void check_task(std::size_t task) const;
  double rank_scale(std::size_t rank) const;

  LoraAdapter adapter_;
  ag::Parameter embeddings_;
  ag::Parameter gate_w_;
  ag::Parameter gate_b_;
  std::size_t num_tasks_ = 0;
  std::size_t embed_dim_ = 0;
  std::size_t scaling_tasks_ = 0;
  MoreOptions options_;
  RankMode mode_ = RankMode::train_gated;
  std::vector<std::size_t> frozen_map_;
  std::vector<std::size_t> last_rank_;
  std::vector<std::vector<std::size_t>> counts_;
};

/// Task × rank counts of the expert each layer currently selects; every row
/// sums to the number of layers.
struct AllocationHistogram {
  std::size_t num_tasks = 0;
  std::size_t max_rank = 0;
  std::vector<std::vector<std::size_t>> counts;

  /// Mean selected rank per task.
  std::vector<double> mean_rank() const;
};

AllocationHistogram allocation_histogram(std::span<const MoreLayer* const> layers);

}  // namespace morekit
